"""Equilibrium branches of a two-strain coinfection model with logistic host growth."""

__version__ = "0.1.0"
