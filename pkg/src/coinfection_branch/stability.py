"""Local stability of equilibria: spectra, Routh-Hurwitz tests and closed-form windows."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .equilibria import EqType, Equilibrium, thresholds
from .errors import InvariantViolation, NoConvergence, NonFinite
from .model import ModelParams, derive, interaction_matrix, jacobian

logger = logging.getLogger(__name__)

MARGINAL_RTOL = 1e-9
CHARPOLY_RTOL = 1e-8


class Stability(enum.Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    MARGINAL = "Marginal"

    def __str__(self):
        return self.value


def char_poly(A):
    """Monic characteristic polynomial ``det(lambda I - A)``, descending powers.

    Faddeev-LeVerrier trace recursion; exact for the small sizes used here.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    coeffs = np.zeros(n + 1)
    coeffs[0] = 1.0
    M = np.zeros_like(A)
    eye = np.eye(n)
    for k in range(1, n + 1):
        M = A @ M + coeffs[k - 1] * eye
        coeffs[k] = -np.trace(A @ M) / k
    return coeffs


def _poly_residuals(coeffs, roots, norm=1.0):
    roots = np.asarray(roots, dtype=complex)
    # floor |root| so roots at or near zero are not judged by underflowed terms
    mag = np.maximum(np.abs(roots), 1e-8 * max(norm, 1.0))
    powers = mag[:, None] ** np.arange(len(coeffs) - 1, -1, -1)
    scale = powers @ np.abs(coeffs)
    scale = np.where(scale > 0, scale, 1.0)
    return np.abs(np.polyval(coeffs, roots)) / scale


def _sort_spectrum(ev):
    ev = np.asarray(ev, dtype=complex)
    order = np.lexsort((-ev.imag, -ev.real))
    return ev[order]


def eigenvalues4(A):
    """Eigenvalues of a small real matrix sorted by descending real part.

    The LAPACK spectrum is checked against the characteristic polynomial;
    roots failing the residual test get a few Newton steps on the polynomial
    before :class:`NoConvergence` is raised.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise NonFinite("matrix has non-finite entries")
    try:
        ev = np.linalg.eigvals(A).astype(complex)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    coeffs = char_poly(A)
    norm = np.abs(A).sum(axis=1).max()
    res = _poly_residuals(coeffs, ev, norm)
    if np.any(res > CHARPOLY_RTOL):
        dcoeffs = np.polyder(coeffs)
        for _ in range(20):
            bad = res > CHARPOLY_RTOL
            if not bad.any():
                break
            d = np.polyval(dcoeffs, ev[bad])
            d = np.where(d == 0, 1.0, d)
            ev[bad] -= np.polyval(coeffs, ev[bad]) / d
            res = _poly_residuals(coeffs, ev, norm)
        else:
            raise NoConvergence(f"characteristic-polynomial residual {res.max():.3e}")
    return _sort_spectrum(ev)


def routh_hurwitz(coeffs):
    """True when every root of the monic polynomial has negative real part.

    Supports degree up to four, which covers every block that arises here.
    """
    c = np.asarray(coeffs, dtype=float)
    c = c / c[0]
    n = len(c) - 1
    if n == 0:
        return True
    a = c[1:]
    if np.any(a <= 0):
        return False
    if n <= 2:
        return True
    if n == 3:
        return a[0] * a[1] > a[2]
    if n == 4:
        a1, a2, a3, a4 = a
        return a1 * a2 > a3 and a1 * a2 * a3 > a3 * a3 + a1 * a1 * a4
    raise ValueError("degree > 4 not supported")


def verdict_from_spectrum(ev, rtol=MARGINAL_RTOL):
    ev = np.asarray(ev)
    max_re = float(np.max(ev.real))
    tol = rtol * float(np.max(np.abs(ev)))
    if max_re < -tol:
        return Stability.STABLE
    if max_re > tol:
        return Stability.UNSTABLE
    return Stability.MARGINAL


@dataclass(frozen=True)
class StabilityReport:
    eigenvalues: np.ndarray
    classification: Stability
    charPolyCoeffs: np.ndarray
    maxRealPart: float
    closedForm: Stability | None = None
    agrees: bool | None = None

    @property
    def stable(self):
        return self.classification is Stability.STABLE


def closed_form_verdict(point: Equilibrium, params: ModelParams):
    """Stability from the factorised Jacobian.

    At a boundary point the Jacobian is block triangular: its spectrum is
    the resident block's spectrum plus the invasion rates of the absent
    classes.  The resident block goes through Routh-Hurwitz.
    """
    J = jacobian(point.point, params)
    support = np.array(point.type_tag.pattern)
    idx = np.flatnonzero(support)
    absent = np.flatnonzero(~support)
    block_ok = routh_hurwitz(char_poly(J[np.ix_(idx, idx)])) if idx.size else True
    invasion_ok = bool(np.all(np.diag(J)[absent] < 0))
    return Stability.STABLE if block_ok and invasion_ok else Stability.UNSTABLE


def classify(point: Equilibrium, params: ModelParams, K=None) -> StabilityReport:
    p = params.with_K(point.K if K is None else K)
    J = jacobian(point.point, p)
    ev = eigenvalues4(J)
    verdict = verdict_from_spectrum(ev)
    cf = closed_form_verdict(point, p)
    agrees = None if verdict is Stability.MARGINAL else cf is verdict
    if agrees is False:
        logger.warning("closed-form verdict %s disagrees with spectrum %s for %s at K=%r",
                       cf, verdict, point.type_tag, p.K)
    return StabilityReport(ev, verdict, char_poly(J), float(ev.real.max()), cf, agrees)


@dataclass(frozen=True)
class Window:
    """Open K-interval on which a boundary equilibrium is admissible and stable."""

    lo: float
    hi: float
    case: str

    def __contains__(self, K):
        return self.lo < K < self.hi

    @property
    def empty(self):
        return not self.lo < self.hi


def g6_window(params: ModelParams):
    """Stability window of G6, or ``None`` when eta1* <= 1."""
    d = derive(params)
    if d.eta1star <= 1:
        return None
    c = d.eta1star / (d.eta1star - 1.0)
    if d.eta2star > d.eta1star:
        Q, case = d.sigma3, "Q=sigma3"
    else:
        Q, case = thresholds(params, strict=False).Shat1, "Q=Shat1"
    return Window(d.sigma1 * c, Q * c, case)


def g7_window(params: ModelParams):
    """Stability window of G7, or ``None`` when it is empty.

    In susceptible terms G7 needs sigma2 < S < sigma3 plus a negative strain-1
    invasion rate, ``S (deltaAlpha - gamma1 alpha3) > deltaMu - gamma1 mu3``.
    """
    d = derive(params)
    if d.eta2star <= 1:
        return None
    c = d.eta2star / (d.eta2star - 1.0)
    D = d.dAlphaMinus
    num = d.deltaMu - params.gamma1 * params.mu3
    if D > 0:
        lo, hi, case = max(num / D, d.sigma2), d.sigma3, "D>0"
    elif D == 0:
        if not num < 0:
            return None
        lo, hi, case = d.sigma2, d.sigma3, "D=0"
    else:
        # excluded by the standing assumption gamma1 < deltaAlpha/alpha3
        lo, hi, case = d.sigma2, min(num / D, d.sigma3), "D<0 (excluded by assumption)"
    if not lo < hi:
        return None
    return Window(lo * c, hi * c, case)


def _check_interior(point: Equilibrium):
    if point.type_tag is not EqType.G8 or not np.all(point.point > 0):
        raise ValueError("an interior (G8) point with all components positive is required")


def _b_minors(B):
    return np.array([np.linalg.det(np.delete(np.delete(B, i, 0), i, 1)) for i in range(4)])


def b_principal_minors(point: Equilibrium, params: ModelParams):
    """Principal 3x3 minors of the interaction matrix B, written out by hand.

    ``minors[i]`` deletes row and column ``i``.  Setting ``finite_K=False``
    in :func:`lambda1_coefficient` drops the ``-r/K`` entry (large-K form).
    """
    return _explicit_minors(point, params, finite_K=True)


def _explicit_minors(point, params, finite_K):
    S, I1, I2, I12 = point.point
    a1, a2, a3 = params.alpha
    e1, e2 = params.eta
    g1, g2 = params.gamma
    gb = g1 + g2
    k = -params.r / params.K if finite_K else 0.0
    r1, r2 = I1 / I12, I2 / I12
    u = e1 + gb * r2
    v = e2 + gb * r1
    w = -gb * r1 * r2
    return np.array([
        -g1 * g2 * w + g1 * e2 * u + e1 * g2 * v,
        k * e2 * v + a2 * a2 * w + a2 * a3 * e2 - a2 * a3 * v,
        k * e1 * u + a1 * a1 * w + a1 * a3 * e1 - a1 * a3 * u,
        -k * g1 * g2 + a1 * a2 * gb,
    ])


def lambda1_coefficient(point: Equilibrium, params: ModelParams, K=None, finite_K=True):
    """Coefficient of lambda in ``det(lambda I - J8) / (S I1 I2 I12)``.

    Evaluated from the characteristic polynomial and from the explicit minor
    sum; the two must agree to relative 1e-8.  With ``finite_K=False`` only
    the large-K minor sum (``-r/K`` dropped) is returned.
    """
    _check_interior(point)
    p = params.with_K(point.K if K is None else K)
    x = point.point
    minors = _explicit_minors(point, p, finite_K)
    via_minors = -float(np.sum(minors / x))
    if not finite_K:
        return via_minors
    via_poly = float(char_poly(jacobian(x, p))[3] / np.prod(x))
    scale = max(abs(via_poly), abs(via_minors), float(np.sum(np.abs(minors / x))) * 1e-3)
    if abs(via_poly - via_minors) > 1e-8 * scale:
        raise InvariantViolation(
            f"lambda^1 coefficient routes disagree: {via_poly!r} vs {via_minors!r}")
    return via_minors


def lambda1_leading_bracket(params: ModelParams):
    """Large-K, small-gamma bracket multiplying ``gammabar * deltaAlpha`` in the
    lambda^1 coefficient (times a positive factor)."""
    d = derive(params)
    a1, a2, a3 = params.alpha
    e1, e2 = params.eta
    r = params.r
    return (
        -e1 * e2 / d.deltaMu
        + ((a1 + a2) * a3 - a1 * a2) / (r * d.A3)
        + (a2 * a2 * (e1 - d.A1) + a1 * a1 * (d.A2 - e2)) / (r * d.A3 ** 2)
    )


def interaction_det_check(point: Equilibrium, params: ModelParams, K=None):
    """``(I12 det B, dP/dS)`` at a coexistence point; equal in exact arithmetic."""
    from .equilibria import dPdS_at

    _check_interior(point)
    p = params.with_K(point.K if K is None else K)
    B = interaction_matrix(point.point, p)
    return point.I12 * float(np.linalg.det(B)), dPdS_at(p, p.K, point.S)


@dataclass(frozen=True)
class MMatrixSample:
    Y: tuple
    K: float
    q: float = 0.01
    Q: float = 100.0

    def __post_init__(self):
        Y = tuple(float(y) for y in self.Y)
        object.__setattr__(self, "Y", Y)
        if len(Y) != 4:
            raise ValueError("Y must have four entries")
        q, Q = self.q, self.Q
        ok = (Y[0] >= q and Y[3] >= q and Y[1] >= 0 and Y[2] >= 0
              and Y[1] + Y[2] >= q and max(Y) <= Q and self.K > 0)
        if not ok:
            raise ValueError(f"sample {Y} at K={self.K} lies outside the admissible set")


def mmatrix(sample: MMatrixSample, params: ModelParams):
    """``diag(Y) M`` with M the gamma-free interaction matrix at ``sample.K``."""
    a1, a2, a3 = params.alpha
    e1, e2 = params.eta
    M = np.array([
        [-params.r / sample.K, -a1, -a2, -a3],
        [a1, 0.0, 0.0, -e1],
        [a2, 0.0, 0.0, -e2],
        [a3, e1, e2, 0.0],
    ])
    return np.asarray(sample.Y)[:, None] * M


def mmatrix_kept_eigenvalues(sample: MMatrixSample, params: ModelParams):
    """Spectrum of the M-matrix minus the structural zero, if there is one."""
    ev = eigenvalues4(mmatrix(sample, params))
    if sample.Y[1] == 0.0 or sample.Y[2] == 0.0:
        ev = np.delete(ev, int(np.argmin(np.abs(ev))))
    return ev


def random_mmatrix_samples(rng, n, K_range, q=0.01, Q=100.0, zero_fraction=0.1):
    """Draw ``n`` samples from the admissible set, a fraction with Y2 or Y3 = 0."""
    out = []
    K_lo, K_hi = K_range
    while len(out) < n:
        Y = rng.uniform(q, Q, size=4)
        Y[1:3] = rng.uniform(0.0, Q, size=2)
        if rng.random() < zero_fraction:
            Y[1 + rng.integers(2)] = 0.0
        if Y[1] + Y[2] < q:
            continue
        out.append(MMatrixSample(tuple(Y), float(rng.uniform(K_lo, K_hi)), q, Q))
    return out


def mmatrix_check(samples, params: ModelParams):
    """Largest real part over the kept eigenvalues of every sample; must be negative."""
    worst = -np.inf
    for s in samples:
        worst = max(worst, float(mmatrix_kept_eigenvalues(s, params).real.max()))
    if not worst < 0:
        raise InvariantViolation(f"M-matrix eigenvalue with real part {worst!r} >= 0")
    return worst
