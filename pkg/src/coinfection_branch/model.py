"""Parameters, derived quantities and the vector field of the coinfection model.

The reduced system tracks susceptibles ``S``, single infections ``I1``/``I2``
and coinfections ``I12``; the removed class ``R`` is decoupled and only
enters when explicitly requested.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AssumptionViolation, NonFinite, ParameterError

PARAM_FIELDS = (
    "r", "K",
    "alpha1", "alpha2", "alpha3",
    "eta1", "eta2",
    "gamma1", "gamma2",
    "mu1", "mu2", "mu3",
    "rho1", "rho2", "rho3",
    "mu4p",
)

_POSITIVE = ("r", "K", "alpha1", "alpha2", "alpha3", "mu1", "mu2", "mu3", "mu4p")
_NONNEG = ("eta1", "eta2", "gamma1", "gamma2", "rho1", "rho2", "rho3")

IDENTITY_RTOL = 1e-12


@dataclass(frozen=True)
class ModelParams:
    """Raw rates of the ODE system.

    ``mu_i`` are total removal rates (recovery ``rho_i`` plus death), so
    ``mu_i >= rho_i`` is enforced.  ``mu4p`` is the decay rate of ``R``.
    """

    r: float
    K: float
    alpha1: float
    alpha2: float
    alpha3: float
    eta1: float
    eta2: float
    gamma1: float
    gamma2: float
    mu1: float
    mu2: float
    mu3: float
    rho1: float = 0.0
    rho2: float = 0.0
    rho3: float = 0.0
    mu4p: float = 1.0

    def __post_init__(self):
        for name in PARAM_FIELDS:
            value = getattr(self, name)
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ParameterError(f"{name} must be a real number, got {value!r}") from None
            if not math.isfinite(value):
                raise ParameterError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        for name in _POSITIVE:
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in _NONNEG:
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative, got {getattr(self, name)!r}")
        for i in (1, 2, 3):
            if getattr(self, f"mu{i}") < getattr(self, f"rho{i}"):
                raise ParameterError(f"mu{i} < rho{i}: death rate would be negative")

    @property
    def alpha(self):
        return (self.alpha1, self.alpha2, self.alpha3)

    @property
    def mu(self):
        return (self.mu1, self.mu2, self.mu3)

    @property
    def eta(self):
        return (self.eta1, self.eta2)

    @property
    def gamma(self):
        return (self.gamma1, self.gamma2)

    @property
    def gammabar(self):
        return self.gamma1 + self.gamma2

    def with_K(self, K):
        return dataclasses.replace(self, K=K)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def as_array(self):
        """Pack into the flat float64 layout used by the compiled integrator."""
        return np.array([getattr(self, name) for name in PARAM_FIELDS], dtype=np.float64)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ParameterError("parameter document must be a JSON object")
        unknown = sorted(set(data) - set(PARAM_FIELDS))
        if unknown:
            raise ParameterError(f"unknown parameter fields: {', '.join(unknown)}")
        missing = sorted(set(PARAM_FIELDS) - set(data))
        if missing:
            raise ParameterError(f"missing parameter fields: {', '.join(missing)}")
        return cls(**data)


def load_params(path):
    """Read a ``ModelParams`` JSON document.

    Malformed JSON is reported with its line and column.
    """
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParameterError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None
    return ModelParams.from_dict(data)


@dataclass(frozen=True)
class DerivedQuantities:
    sigma1: float
    sigma2: float
    sigma3: float
    A1: float
    A2: float
    A3: float
    eta1star: float
    eta2star: float
    gammastar: float
    gammabar: float
    deltaAlpha: float
    deltaMu: float
    rhoDet: float
    thetaDet: float
    dAlphaMinus: float
    dAlphaPlus: float
    flags: dict = field(default_factory=dict, compare=False)

    @property
    def sigma(self):
        return (self.sigma1, self.sigma2, self.sigma3)

    @property
    def A(self):
        return (self.A1, self.A2, self.A3)

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "flags"}
        out["flags"] = dict(self.flags)
        return out


def _structural_flags(sigma, A, deltaAlpha):
    return {
        "sigma-ordering": bool(sigma[0] < sigma[1] < sigma[2]),
        "deltaAlpha-nonzero": bool(deltaAlpha != 0.0),
        "A-positive": bool(min(A) > 0),
    }


def derive(params: ModelParams, strict=True) -> DerivedQuantities:
    """Compute the derived quantities of ``params``.

    With ``strict`` (the default) a failed structural assumption raises
    :class:`AssumptionViolation`; otherwise it is only recorded in ``flags``.
    """
    p = params
    a1, a2, a3 = p.alpha
    m1, m2, m3 = p.mu
    e1, e2 = p.eta
    g1, g2 = p.gamma
    s1, s2, s3 = m1 / a1, m2 / a2, m3 / a3
    A1 = a1 * a3 * (s3 - s1) / p.r
    A2 = a2 * a3 * (s3 - s2) / p.r
    A3 = a1 * a2 * (s2 - s1) / p.r
    dA = e1 * a2 - e2 * a1
    dM = e1 * m2 - e2 * m1
    rho = g1 * a1 * e2 + g2 * a2 * e1 - g1 * g2 * a3
    theta = g1 * m1 * e2 + g2 * m2 * e1 - g1 * g2 * m3
    flags = _structural_flags((s1, s2, s3), (A1, A2, A3), dA)
    if strict:
        for name, ok in flags.items():
            if not ok:
                raise AssumptionViolation(name)
    with np.errstate(divide="ignore", invalid="ignore"):
        e1s, e2s, gs = (float(np.float64(num) / den) for num, den in ((e1, A1), (e2, A2), (g1, A3)))
    return DerivedQuantities(
        sigma1=s1, sigma2=s2, sigma3=s3,
        A1=A1, A2=A2, A3=A3,
        eta1star=e1s, eta2star=e2s, gammastar=gs,
        gammabar=g1 + g2,
        deltaAlpha=dA, deltaMu=dM,
        rhoDet=rho, thetaDet=theta,
        dAlphaMinus=dA - g1 * a3, dAlphaPlus=dA + g2 * a3,
        flags=flags,
    )


def validate_standing_assumptions(d: DerivedQuantities):
    """Report which standing assumptions hold, as ``[(name, holds), ...]``.

    Never raises; callers that depend on an assumption re-check it.
    """
    return [
        ("gammastar<1", bool(d.gammastar < 1)),
        ("gamma1<deltaAlpha/alpha3", bool(d.dAlphaMinus > 0)),
        ("deltaAlpha!=0", bool(d.deltaAlpha != 0.0)),
        ("sigma1<sigma2<sigma3", bool(d.sigma1 < d.sigma2 < d.sigma3)),
    ]


def identity_residuals(params: ModelParams, d: DerivedQuantities | None = None):
    """Relative residuals of the algebraic identities linking the derived quantities.

    Each entry is ``|lhs - rhs|`` over the largest magnitude among the terms
    on either side, so identities between small differences are not judged
    by their cancellation error.
    """
    d = d or derive(params)
    p = params

    def rel(lhs, rhs, *terms):
        scale = max([abs(lhs), abs(rhs), 1e-300] + [abs(t) for t in terms])
        return abs(lhs - rhs) / scale

    a1, a2, a3 = p.alpha
    via1 = (p.eta1 * p.r / a1 * d.A3, d.sigma1 * d.deltaAlpha)
    via2 = (p.eta2 * p.r / a2 * d.A3, d.sigma2 * d.deltaAlpha)
    gap_scale = a3 * max(abs(d.deltaAlpha * d.sigma3), abs(d.deltaMu)) / (p.r * d.A1 * d.A2)
    return {
        "alpha2A1=alpha3A3+alpha1A2": rel(a2 * d.A1, a3 * d.A3 + a1 * d.A2, a3 * d.A3, a1 * d.A2),
        "eta1*-eta2*": rel(
            d.eta1star - d.eta2star,
            (d.deltaAlpha * d.sigma3 - d.deltaMu) * a3 / (p.r * d.A1 * d.A2),
            d.eta1star, d.eta2star, gap_scale,
        ),
        "deltaMu-via-sigma1": rel(d.deltaMu, sum(via1), *via1, p.eta1 * p.mu2, p.eta2 * p.mu1),
        "deltaMu-via-sigma2": rel(d.deltaMu, sum(via2), *via2, p.eta1 * p.mu2, p.eta2 * p.mu1),
    }


def inequality_checks(params: ModelParams, d: DerivedQuantities | None = None):
    d = d or derive(params)
    p = params
    return {
        "deltaMu>sigma1*deltaAlpha": d.deltaMu > d.sigma1 * d.deltaAlpha,
        "deltaMu>sigma2*deltaAlpha": d.deltaMu > d.sigma2 * d.deltaAlpha,
        "sigma2(dA+g2a3)<dM+g2mu3": (
            d.sigma2 * (d.deltaAlpha + p.gamma2 * p.alpha3) < d.deltaMu + p.gamma2 * p.mu3
        ),
    }


def vector_field(state, params: ModelParams, include_R=False):
    """Right-hand side of the model at ``state``.

    ``state`` holds ``(S, I1, I2, I12)`` or ``(S, I1, I2, I12, R)``; with
    ``include_R`` the fifth component is required and its derivative is
    appended.
    """
    x = np.asarray(state, dtype=float)
    S, I1, I2, I12 = x[0], x[1], x[2], x[3]
    p = params
    a1, a2, a3 = p.alpha
    e1, e2 = p.eta
    g1, g2 = p.gamma
    m1, m2, m3 = p.mu
    with np.errstate(over="ignore", invalid="ignore"):
        out = [
            (p.r * (1.0 - S / p.K) - a1 * I1 - a2 * I2 - a3 * I12) * S,
            (a1 * S - e1 * I12 - g1 * I2 - m1) * I1,
            (a2 * S - e2 * I12 - g2 * I1 - m2) * I2,
            (a3 * S + e1 * I1 + e2 * I2 - m3) * I12 + (g1 + g2) * I1 * I2,
        ]
        if include_R:
            if x.size < 5:
                raise ValueError("include_R requires a 5-component state")
            out.append(p.rho1 * I1 + p.rho2 * I2 + p.rho3 * I12 - p.mu4p * x[4])
    out = np.array(out)
    if not np.all(np.isfinite(out)):
        raise NonFinite(f"vector field not finite at state {x!r}")
    return out


def jacobian(state, params: ModelParams):
    """Analytic Jacobian of the reduced four-dimensional system."""
    S, I1, I2, I12 = np.asarray(state, dtype=float)[:4]
    p = params
    a1, a2, a3 = p.alpha
    e1, e2 = p.eta
    g1, g2 = p.gamma
    m1, m2, m3 = p.mu
    gb = g1 + g2
    return np.array([
        [p.r * (1 - 2 * S / p.K) - a1 * I1 - a2 * I2 - a3 * I12, -a1 * S, -a2 * S, -a3 * S],
        [a1 * I1, a1 * S - e1 * I12 - g1 * I2 - m1, -g1 * I1, -e1 * I1],
        [a2 * I2, -g2 * I2, a2 * S - e2 * I12 - g2 * I1 - m2, -e2 * I2],
        [a3 * I12, e1 * I12 + gb * I2, e2 * I12 + gb * I1, a3 * S + e1 * I1 + e2 * I2 - m3],
    ])


def interaction_matrix(state, params: ModelParams):
    """The matrix ``B`` with ``J = diag(S, I1, I2, I12) @ B`` at an interior equilibrium.

    ``B`` is also the Jacobian of the divided coexistence system, which is
    what continuation in ``K`` differentiates.
    """
    S, I1, I2, I12 = np.asarray(state, dtype=float)[:4]
    if I12 <= 0:
        raise ValueError("interaction_matrix needs I12 > 0")
    p = params
    a1, a2, a3 = p.alpha
    e1, e2 = p.eta
    g1, g2 = p.gamma
    gb = g1 + g2
    r1, r2 = I1 / I12, I2 / I12
    return np.array([
        [-p.r / p.K, -a1, -a2, -a3],
        [a1, 0.0, -g1, -e1],
        [a2, -g2, 0.0, -e2],
        [a3, e1 + gb * r2, e2 + gb * r1, -gb * r1 * r2],
    ])
