"""Equilibrium points G1-G8, the coexistence polynomial and the bifurcation thresholds."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivisionDegenerate, NoConvergence, SingularLinearSystem
from .model import ModelParams, derive, jacobian, vector_field

logger = logging.getLogger(__name__)

ZERO_TOL = 1e-12
RESIDUAL_TOL = 1e-10
POLISH_TOL = 1e-12


class EqType(enum.Enum):
    G1 = "G1"
    G2 = "G2"
    G3 = "G3"
    G4 = "G4"
    G5 = "G5"
    G6 = "G6"
    G7 = "G7"
    G8 = "G8"

    def __str__(self):
        return self.value

    @property
    def pattern(self):
        """Nonzero pattern of ``(S, I1, I2, I12)``."""
        return _PATTERNS[self]


_PATTERNS = {
    EqType.G1: (False, False, False, False),
    EqType.G2: (True, False, False, False),
    EqType.G3: (True, True, False, False),
    EqType.G4: (True, False, True, False),
    EqType.G5: (True, False, False, True),
    EqType.G6: (True, True, False, True),
    EqType.G7: (True, False, True, True),
    EqType.G8: (True, True, True, True),
}
_BY_PATTERN = {v: k for k, v in _PATTERNS.items()}


def classify_type(point, zero_tol=ZERO_TOL):
    """Equilibrium type from the zero/nonzero pattern of ``point``."""
    pattern = tuple(bool(abs(c) > zero_tol) for c in np.asarray(point, dtype=float)[:4])
    try:
        return _BY_PATTERN[pattern]
    except KeyError:
        raise ValueError(f"pattern {pattern} is not an equilibrium type") from None


def residual(point, params):
    return float(np.max(np.abs(vector_field(point, params))))


@dataclass(frozen=True)
class Equilibrium:
    point: np.ndarray
    type_tag: EqType
    residual: float
    K: float
    flags: frozenset = field(default_factory=frozenset)

    S = property(lambda self: float(self.point[0]))
    I1 = property(lambda self: float(self.point[1]))
    I2 = property(lambda self: float(self.point[2]))
    I12 = property(lambda self: float(self.point[3]))

    def to_dict(self):
        return {
            "type": self.type_tag.value,
            "K": self.K,
            "S": self.S, "I1": self.I1, "I2": self.I2, "I12": self.I12,
            "residual": self.residual,
            "flags": sorted(self.flags),
        }


def polish(point, params, support=None, tol=POLISH_TOL, max_iter=12):
    """Newton iterations on the equilibrium system restricted to ``support``.

    Components outside ``support`` are held at zero.  Returns the polished
    point; raises :class:`NoConvergence` if the residual does not drop below
    ``RESIDUAL_TOL`` (scaled).
    """
    x = np.array(point, dtype=float)
    if support is None:
        support = np.abs(x) > ZERO_TOL
    support = np.asarray(support, dtype=bool)
    x[~support] = 0.0
    idx = np.flatnonzero(support)
    scale = max(1.0, float(np.max(np.abs(x))))
    res = residual(x, params)
    for _ in range(max_iter):
        if res <= tol * scale or idx.size == 0:
            break
        F = vector_field(x, params)[idx]
        J = jacobian(x, params)[np.ix_(idx, idx)]
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        trial = x.copy()
        trial[idx] += step
        trial_res = residual(trial, params)
        if not trial_res < res:
            break
        x, res = trial, trial_res
    if res > RESIDUAL_TOL * scale:
        raise NoConvergence(f"equilibrium residual {res:.3e} after polishing")
    return x


def make_equilibrium(point, params, type_tag=None, flags=(), polish_point=True):
    x = np.array(point, dtype=float)
    if polish_point:
        x = polish(x, params)
    x.setflags(write=False)
    tag = type_tag if type_tag is not None else classify_type(x)
    return Equilibrium(x, tag, residual(x, params), params.K, frozenset(flags))


def boundary_equilibria(params: ModelParams, K=None):
    """Admissible closed-form equilibria G1-G7 at carrying capacity ``K``.

    A candidate is admissible when every component that is nonzero for its
    type is strictly positive (above ``ZERO_TOL``).
    """
    if K is not None:
        params = params.with_K(K)
    p = params
    K = p.K
    d = derive(p)
    a1, a2, a3 = p.alpha
    e1, e2 = p.eta
    s1, s2, s3 = d.sigma
    cands = [
        (EqType.G1, (0.0, 0.0, 0.0, 0.0)),
        (EqType.G2, (K, 0.0, 0.0, 0.0)),
        (EqType.G3, (s1, p.r * (K - s1) / (K * a1), 0.0, 0.0)),
        (EqType.G4, (s2, 0.0, p.r * (K - s2) / (K * a2), 0.0)),
        (EqType.G5, (s3, 0.0, 0.0, p.r * (K - s3) / (K * a3))),
    ]
    if e1 > 0:
        S = K * (1.0 - 1.0 / d.eta1star)
        cands.append((EqType.G6, (S, a3 / e1 * (s3 - S), 0.0, a1 / e1 * (S - s1))))
    if e2 > 0:
        S = K * (1.0 - 1.0 / d.eta2star)
        cands.append((EqType.G7, (S, 0.0, a3 / e2 * (s3 - S), a2 / e2 * (S - s2))))
    out = []
    for tag, point in cands:
        pattern = tag.pattern
        if all(c > ZERO_TOL for c, nz in zip(point, pattern) if nz):
            x = np.array(point, dtype=float)
            if residual(x, p) > RESIDUAL_TOL * max(1.0, float(np.max(np.abs(x)))):
                x = polish(x, p, support=np.array(pattern))
            out.append(make_equilibrium(x, p, type_tag=tag, polish_point=False))
    return out


def equilibrium_of_type(params, tag, K=None):
    """The admissible boundary equilibrium of type ``tag``, or ``None``."""
    for eq in boundary_equilibria(params, K):
        if eq.type_tag is tag:
            return eq
    return None


@dataclass(frozen=True)
class CoexistencePolynomial:
    """``P(S) = p2 S^2 + p1 S + p0``; its admissible roots are G8 susceptibles."""

    p0: float
    p1: float
    p2: float
    rhoDet: float
    thetaDet: float

    def __call__(self, S):
        return (self.p2 * S + self.p1) * S + self.p0

    def derivative(self, S):
        return 2.0 * self.p2 * S + self.p1

    def roots(self):
        """Real roots, computed without cancellation.

        Falls back to the linear root when ``|p2| < 1e-14 |p1|``.
        """
        p0, p1, p2 = self.p0, self.p1, self.p2
        if abs(p2) < 1e-14 * abs(p1) or p2 == 0.0:
            return [] if p1 == 0.0 else [-p0 / p1]
        disc = p1 * p1 - 4.0 * p2 * p0
        if disc < 0:
            return []
        q = -0.5 * (p1 + math.copysign(math.sqrt(disc), p1))
        if q == 0.0:
            return [0.0]
        return sorted({q / p2, p0 / q})

    def to_dict(self):
        return {"p0": self.p0, "p1": self.p1, "p2": self.p2,
                "rhoDet": self.rhoDet, "thetaDet": self.thetaDet}


def coexistence_polynomial(params: ModelParams, K=None) -> CoexistencePolynomial:
    p = params if K is None else params.with_K(K)
    d = derive(p)
    r, K = p.r, p.K
    a1, a2, _ = p.alpha
    m1, m2, _ = p.mu
    g1, g2 = p.gamma
    p0 = r * (-d.A3 * d.deltaMu - d.thetaDet + g1 * m2 * d.A1 + g2 * m1 * d.A2)
    p1 = r * (d.A3 * d.deltaAlpha + d.thetaDet / K + d.rhoDet - g1 * a2 * d.A1 - g2 * a1 * d.A2)
    p2 = -r / K * d.rhoDet
    return CoexistencePolynomial(p0, p1, p2, d.rhoDet, d.thetaDet)


def dPdS_at(params: ModelParams, K, S):
    return coexistence_polynomial(params, K).derivative(S)


def _backsolve(params, S):
    """(I1, I2, I12) at a coexistence point with susceptible level ``S``."""
    p = params
    a1, a2, a3 = p.alpha
    e1, e2 = p.eta
    g1, g2 = p.gamma
    m1, m2, m3 = p.mu
    rhs = np.array([p.r * (1.0 - S / p.K), a1 * S - m1, a2 * S - m2])
    M = np.array([[a1, a2, a3], [0.0, g1, e1], [g2, 0.0, e2]])
    if g1 + g2 == 0.0:
        # the 3x3 block is singular; the last coexistence equation is linear here
        M4 = np.vstack([M, [e1, e2, 0.0]])
        b4 = np.append(rhs, m3 - a3 * S)
        sol, *_ = np.linalg.lstsq(M4, b4, rcond=None)
        return sol
    det = g1 * a1 * e2 + g2 * a2 * e1 - g1 * g2 * a3
    scale = g1 * a1 * e2 + g2 * a2 * e1 + g1 * g2 * a3
    if abs(det) <= 1e-13 * scale:
        raise SingularLinearSystem(f"back-solve matrix is rank deficient at S={S!r}")
    return np.linalg.solve(M, rhs)


def solve_coexistence(params: ModelParams, K=None):
    """Coexistence equilibria (type G8) at carrying capacity ``K``.

    Each real root of ``P`` is back-solved for the infected classes, kept
    only if all four components are positive, and Newton-polished on the
    full equilibrium system.  Points where ``dP/dS <= 0`` are returned with
    the ``"dPdS<=0"`` flag.
    """
    p = params if K is None else params.with_K(K)
    poly = coexistence_polynomial(p)
    out = []
    for S in poly.roots():
        if not S > ZERO_TOL:
            continue
        try:
            infected = _backsolve(p, S)
        except SingularLinearSystem as exc:
            logger.warning("skipping root S=%r: %s", S, exc)
            continue
        x = np.concatenate([[S], infected])
        if not np.all(x > ZERO_TOL):
            continue
        try:
            x = polish(x, p, support=np.ones(4, dtype=bool))
        except NoConvergence as exc:
            logger.warning("skipping root S=%r: %s", S, exc)
            continue
        if not np.all(x > ZERO_TOL):
            continue
        flags = ()
        if poly.derivative(x[0]) <= 0:
            logger.warning("dP/dS <= 0 at coexistence point K=%r S=%r", p.K, x[0])
            flags = ("dPdS<=0",)
        out.append(make_equilibrium(x, p, type_tag=EqType.G8, flags=flags, polish_point=False))
    return out


def all_equilibria(params: ModelParams, K=None):
    p = params if K is None else params.with_K(K)
    return boundary_equilibria(p) + solve_coexistence(p)


@dataclass(frozen=True)
class Thresholds:
    """Carrying-capacity thresholds at which the stable equilibrium changes type.

    Entries are ``None`` when their defining condition does not hold.
    """

    sigma1: float
    KG3toG6: float | None
    Shat1: float | None
    Khat1: float | None
    Shat2: float | None
    Khat2: float | None
    KG7toG5: float | None
    KG6toG5: float | None

    def to_dict(self):
        return dict(self.__dict__)


def thresholds(params: ModelParams, strict=True) -> Thresholds:
    """Closed-form thresholds.

    Raises :class:`DivisionDegenerate` when ``deltaAlpha - gamma1 alpha3 == 0``
    (``Shat2`` undefined) unless ``strict`` is false, in which case the
    dependent entries are ``None``.
    """
    p = params
    d = derive(p)
    m3 = p.mu3
    e1s, e2s = d.eta1star, d.eta2star
    c1 = e1s / (e1s - 1.0) if e1s > 1 else None
    c2 = e2s / (e2s - 1.0) if e2s > 1 else None
    Shat1 = (d.deltaMu + p.gamma2 * m3) / d.dAlphaPlus if d.dAlphaPlus != 0 else None
    if d.dAlphaMinus != 0:
        Shat2 = (d.deltaMu - p.gamma1 * m3) / d.dAlphaMinus
    elif strict:
        raise DivisionDegenerate("deltaAlpha - gamma1*alpha3 == 0; Shat2 undefined")
    else:
        Shat2 = None
    return Thresholds(
        sigma1=d.sigma1,
        KG3toG6=d.sigma1 * c1 if c1 else None,
        Shat1=Shat1,
        Khat1=Shat1 * c1 if (c1 and Shat1 is not None) else None,
        Shat2=Shat2,
        Khat2=Shat2 * c2 if (c2 and Shat2 is not None) else None,
        KG7toG5=d.sigma3 * c2 if c2 else None,
        KG6toG5=d.sigma3 * c1 if c1 else None,
    )


def shat_gap(params: ModelParams):
    """``Shat1 - Shat2`` from its two closed forms: ``(direct, identity)``."""
    d = derive(params)
    t = thresholds(params)
    rhs = (
        d.gammabar * params.r * d.A1 * d.A2 * (d.eta1star - d.eta2star)
        / (d.dAlphaMinus * d.dAlphaPlus)
    )
    return t.Shat1 - t.Shat2, rhs
