"""Tracing the stable equilibrium branch in the carrying capacity K."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .equilibria import (
    ZERO_TOL,
    EqType,
    Equilibrium,
    boundary_equilibria,
    dPdS_at,
    equilibrium_of_type,
    make_equilibrium,
    solve_coexistence,
    thresholds,
)
from .errors import (
    AssumptionIIFailure,
    AssumptionViolation,
    ContinuationStall,
    CoinfectionError,
    InvariantViolation,
    NoConvergence,
    NoCrossing,
)
from .model import ModelParams, derive, interaction_matrix, jacobian, validate_standing_assumptions
from .stability import MARGINAL_RTOL, Stability, StabilityReport, classify, eigenvalues4

logger = logging.getLogger(__name__)

G = EqType
CHAINS = {
    "i": (G.G2, G.G3),
    "ii": (G.G2, G.G3, G.G6, G.G5),
    "iii": (G.G2, G.G3, G.G6, G.G8, G.G7, G.G5),
    "iv": (G.G2, G.G3, G.G6, G.G8),
}


@dataclass(frozen=True)
class Scenario:
    tag: str
    predictedTransitions: tuple

    @property
    def chain(self):
        return CHAINS[self.tag]

    def predicted(self, from_type, to_type):
        for K, a, b in self.predictedTransitions:
            if a is from_type and b is to_type:
                return K
        return None

    def to_dict(self):
        return {
            "tag": self.tag,
            "chain": [t.value for t in self.chain],
            "predictedTransitions": [
                {"K": K, "from": a.value, "to": b.value} for K, a, b in self.predictedTransitions
            ],
        }


def _check_assumption_ii(params, K, S):
    if not dPdS_at(params, K, S) > 0:
        raise AssumptionIIFailure(K, f"dP/dS <= 0 at S={S!r}")


def classify_scenario(params: ModelParams) -> Scenario:
    """Scenario tag and predicted transition points from the eta* ordering.

    eta1* <= 1 gives (i).  With eta1* > 1: eta2* >= eta1* gives (ii),
    eta1* > eta2* > 1 gives (iii) and eta2* <= 1 gives (iv).
    """
    d = derive(params)
    for name, ok in validate_standing_assumptions(d):
        if not ok:
            raise AssumptionViolation(name, "standing assumption fails")
    t = thresholds(params, strict=False)
    e1s, e2s = d.eta1star, d.eta2star
    trans = [(d.sigma1, G.G2, G.G3)]
    if e1s <= 1:
        tag = "i"
    else:
        trans.append((t.KG3toG6, G.G3, G.G6))
        if e2s >= e1s:
            tag = "ii"
            trans.append((t.KG6toG5, G.G6, G.G5))
        else:
            _check_assumption_ii(params, t.Khat1, t.Shat1)
            trans.append((t.Khat1, G.G6, G.G8))
            if e2s > 1:
                tag = "iii"
                _check_assumption_ii(params, t.Khat2, t.Shat2)
                trans.append((t.Khat2, G.G8, G.G7))
                trans.append((t.KG7toG5, G.G7, G.G5))
            else:
                tag = "iv"
    Ks = [k for k, _, _ in trans]
    if any(b <= a for a, b in zip(Ks, Ks[1:])):
        raise InvariantViolation(f"predicted transitions are not increasing: {Ks}")
    return Scenario(tag, tuple(trans))


# -- events -----------------------------------------------------------------

@dataclass(frozen=True)
class Transition:
    K: float
    from_type: EqType
    to_type: EqType
    predicted: float | None = None

    @property
    def mismatch(self):
        return None if self.predicted is None else abs(self.K - self.predicted)

    def to_dict(self):
        return {"event": "Transition", "K": self.K, "from": self.from_type.value,
                "to": self.to_type.value, "predicted": self.predicted,
                "mismatch": self.mismatch}


@dataclass(frozen=True)
class HopfOnset:
    K: float
    dRedK: float | None = None

    def to_dict(self):
        return {"event": "HopfOnset", "K": self.K, "dRedK": self.dRedK}


@dataclass(frozen=True)
class AssumptionBreak:
    K: float
    which: str

    def to_dict(self):
        return {"event": "AssumptionBreak", "K": self.K, "which": self.which}


@dataclass(frozen=True)
class BranchSample:
    K: float
    equilibrium: Equilibrium
    report: StabilityReport


@dataclass
class Branch:
    samples: list = field(default_factory=list)
    events: list = field(default_factory=list)

    @property
    def K(self):
        return np.array([s.K for s in self.samples])

    @property
    def points(self):
        return np.array([s.equilibrium.point for s in self.samples])

    @property
    def types(self):
        return [s.equilibrium.type_tag for s in self.samples]

    def chain(self):
        out = []
        for t in self.types:
            if not out or out[-1] is not t:
                out.append(t)
        return out

    def transitions(self):
        return [e for e in self.events if isinstance(e, Transition)]

    def runs(self, tag):
        """Index ranges ``(start, stop)`` of maximal runs of type ``tag``."""
        out, start = [], None
        for i, t in enumerate(self.types + [None]):
            if t is tag and start is None:
                start = i
            elif t is not tag and start is not None:
                out.append((start, i))
                start = None
        return out


@dataclass(frozen=True)
class StepPolicy:
    """Uniform grid of ``n_steps`` in K, halved within ``refine`` (relative) of thresholds."""

    n_steps: int = 2000
    refine: float = 0.01
    min_step_rel: float = 1e-9
    max_halvings: int = 40

    def grid(self, K_min, K_max, marks=()):
        if not 0 < K_min < K_max:
            raise ValueError("need 0 < K_min < K_max")
        h = (K_max - K_min) / self.n_steps
        marks = [m for m in marks if m is not None]
        out = [K_min]
        K = K_min
        while True:
            near = any(abs(K - m) < self.refine * m for m in marks)
            K = K + (h / 2 if near else h)
            if K >= K_max - 1e-12 * K_max:
                break
            out.append(K)
        out.append(K_max)
        return np.array(out)


# -- continuation of the coexistence point ----------------------------------

def _divided_residual(x, params):
    S, I1, I2, I12 = x
    p = params
    a1, a2, a3 = p.alpha
    e1, e2 = p.eta
    g1, g2 = p.gamma
    return np.array([
        p.r * (1.0 - S / p.K) - a1 * I1 - a2 * I2 - a3 * I12,
        a1 * S - e1 * I12 - g1 * I2 - p.mu1,
        a2 * S - e2 * I12 - g2 * I1 - p.mu2,
        a3 * S + e1 * I1 + e2 * I2 - p.mu3 + (g1 + g2) * I1 * I2 / I12,
    ])


def coexistence_slope(x, params):
    """``dx/dK`` along the coexistence branch: ``-B^{-1} (r S / K^2, 0, 0, 0)``."""
    B = interaction_matrix(x, params)
    rhs = np.array([params.r * x[0] / params.K ** 2, 0.0, 0.0, 0.0])
    return -np.linalg.solve(B, rhs)


def _newton_divided(x, params, tol=1e-13, max_iter=25):
    x = np.array(x, dtype=float)
    for _ in range(max_iter):
        if x[3] <= 0:
            return None
        F = _divided_residual(x, params)
        if not np.all(np.isfinite(F)):
            return None
        if np.max(np.abs(F)) <= tol * max(1.0, np.max(np.abs(x))):
            return x
        try:
            x = x - np.linalg.solve(interaction_matrix(x, params), F)
        except np.linalg.LinAlgError:
            return None
    F = _divided_residual(x, params)
    return x if np.max(np.abs(F)) <= 1e-10 * max(1.0, np.max(np.abs(x))) else None


def continue_coexistence(x0, params, K0, K1, policy=StepPolicy()):
    """Follow the coexistence point from ``K0`` to ``K1`` (predictor-corrector).

    Returns the unpolished point at ``K1``, which may have left the positive
    orthant.  Raises :class:`ContinuationStall` when Newton keeps failing
    after ``policy.max_halvings`` step halvings.
    """
    x, K = np.array(x0, dtype=float), float(K0)
    h = K1 - K0
    halvings = 0
    while K < K1:
        h = min(h, K1 - K)
        pK = params.with_K(K)
        slope = coexistence_slope(x, pK)
        Kn = K1 if K + h >= K1 else K + h
        x_new = _newton_divided(x + (Kn - K) * slope, params.with_K(Kn))
        if x_new is None:
            h /= 2
            halvings += 1
            if halvings > policy.max_halvings or h < policy.min_step_rel * K:
                raise ContinuationStall(K, f"Newton failed stepping from K={K!r}")
            continue
        x, K = x_new, Kn
    return x


# -- tracing ----------------------------------------------------------------

def _g8_near(params, K, ref=None):
    cands = solve_coexistence(params, K)
    if not cands:
        return None
    if ref is None:
        return cands[0]
    return min(cands, key=lambda e: float(np.linalg.norm(e.point - ref)))


def _stable_as(params, tag, K, ref=None):
    if tag is G.G8:
        eq = _g8_near(params, K, ref)
    else:
        eq = equilibrium_of_type(params, tag, K)
    if eq is None:
        return False
    return classify(eq, params, K).classification is Stability.STABLE


def locate_loss_of_stability(params, tag, K_lo, K_hi, ref=None, rtol=1e-14):
    """Bisect for the K at which ``tag`` stops being the stable equilibrium."""
    a, b = float(K_lo), float(K_hi)
    for _ in range(200):
        if b - a <= rtol * b:
            break
        m = 0.5 * (a + b)
        if _stable_as(params, tag, m, ref):
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def _select(cands, prev_type):
    stable = [c for c in cands if c[1].classification is Stability.STABLE]
    if len(stable) == 1:
        return stable[0], None
    if len(stable) > 1:
        same = [c for c in stable if c[0].type_tag is prev_type]
        return (same or stable)[0], "multiple-stable"
    same = [c for c in cands if c[0].type_tag is prev_type]
    if same:
        return same[0], None
    return min(cands, key=lambda c: c[1].maxRealPart), "no-stable"


def trace(params: ModelParams, K_min, K_max, step_policy: StepPolicy | None = None) -> Branch:
    """Sample the stable equilibrium branch on ``[K_min, K_max]``.

    Boundary points come from closed forms and the coexistence point from
    natural-parameter continuation.  Type changes are refined by bisection
    and compared against the closed-form thresholds.
    """
    policy = step_policy or StepPolicy()
    try:
        scenario = classify_scenario(params)
    except CoinfectionError as exc:
        logger.warning("scenario unavailable: %s", exc)
        scenario = None
    t = thresholds(params, strict=False)
    marks = [k for k, _, _ in scenario.predictedTransitions] if scenario else [
        t.sigma1, t.KG3toG6, t.Khat1, t.Khat2, t.KG7toG5]
    branch = Branch()
    g8_x, g8_K = None, None
    prev = None
    for K in policy.grid(K_min, K_max, marks):
        K = float(K)
        p = params.with_K(K)
        cands = boundary_equilibria(p)
        g8 = None
        if g8_x is not None:
            x = continue_coexistence(g8_x, params, g8_K, K, policy)
            if np.all(x > ZERO_TOL):
                try:
                    g8 = make_equilibrium(x, p, type_tag=G.G8)
                except NoConvergence:
                    g8 = None
        if g8 is None:
            g8 = _g8_near(params, K, g8_x)
        if g8 is not None:
            if "dPdS<=0" in g8.flags:
                branch.events.append(AssumptionBreak(K, "dPdS>0"))
            cands.append(g8)
            g8_x, g8_K = g8.point.copy(), K
        else:
            g8_x = g8_K = None
        scored = [(c, classify(c, p)) for c in cands]
        (eq, rep), issue = _select(scored, prev.equilibrium.type_tag if prev else None)
        if issue:
            branch.events.append(AssumptionBreak(K, issue))
        if prev is not None:
            a, b = prev.equilibrium.type_tag, eq.type_tag
            if a is not b:
                ref = prev.equilibrium.point if a is G.G8 else None
                Kt = locate_loss_of_stability(params, a, prev.K, K, ref)
                pred = scenario.predicted(a, b) if scenario else None
                if pred is not None and abs(Kt - pred) > 1e-5 * pred:
                    logger.warning("transition %s->%s at K=%r, closed form %r", a, b, Kt, pred)
                branch.events.append(Transition(Kt, a, b, pred))
            elif a is G.G8 and prev.report.stable and rep.classification is Stability.UNSTABLE:
                try:
                    hr = hopf_scan(params, (prev.K, K), n_grid=2)
                    branch.events.append(HopfOnset(hr.K_c, hr.dRedK))
                except NoCrossing:
                    branch.events.append(AssumptionBreak(K, "stability-lost-without-crossing"))
        sample = BranchSample(K, eq, rep)
        branch.samples.append(sample)
        prev = sample
    return branch


# -- local analysis at the transcritical points -----------------------------

def bifurcation_slopes(params: ModelParams):
    """Closed-form slopes of the emerging/vanishing strain at Khat1 and Khat2.

    ``theta1``/``theta2`` are the closed forms; ``theta*_direct`` evaluate the
    defining bordered product through the 3x3 reduced matrix.
    """
    d = derive(params)
    t = thresholds(params, strict=False)
    r = params.r
    a1, a2, a3 = params.alpha
    e1, e2 = params.eta
    g1, g2 = params.gamma
    gb = g1 + g2
    out = {"dI2dK_at_Khat1": None, "dI1dK_at_Khat2": None, "theta1": None, "theta2": None,
           "theta1_direct": None, "theta2_direct": None}
    if t.Khat1 is not None:
        K, S = t.Khat1, t.Shat1
        dP = dPdS_at(params, K, S)
        if not dP > 0:
            raise AssumptionIIFailure(K, "dP/dS <= 0 at Khat1")
        I1 = a3 / e1 * (d.sigma3 - S)
        I12 = a1 / e1 * (S - d.sigma1)
        out["dI2dK_at_Khat1"] = e1 * r * (d.deltaMu + g2 * params.mu3) * I12 / (dP * K * K)
        out["theta1"] = K * dP / (r * e1 * e1 * I12)
        Ah = np.array([[-r / K, -a1, -a3], [a1, 0.0, -e1], [a3, e1, 0.0]])
        v = np.array([-a2, -g1, e2 + gb * I1 / I12])
        out["theta1_direct"] = float(np.array([a2, -g2, -e2]) @ np.linalg.solve(Ah, v))
    if t.Khat2 is not None:
        K, S = t.Khat2, t.Shat2
        dP = dPdS_at(params, K, S)
        if not dP > 0:
            raise AssumptionIIFailure(K, "dP/dS <= 0 at Khat2")
        I2 = a3 / e2 * (d.sigma3 - S)
        I12 = a2 / e2 * (S - d.sigma2)
        out["dI1dK_at_Khat2"] = -e2 * r * (d.deltaMu - g1 * params.mu3) * I12 / (dP * K * K)
        out["theta2"] = K * dP / (r * e2 * e2 * I12)
        Ah = np.array([[-r / K, -a2, -a3], [a2, 0.0, -e2], [a3, e2, 0.0]])
        v = np.array([-a1, -g2, e1 + gb * I2 / I12])
        out["theta2_direct"] = float(np.array([a1, -g1, -e1]) @ np.linalg.solve(Ah, v))
    return out


def _eig_nearest_zero(eq, params, K):
    ev = eigenvalues4(jacobian(eq.point, params.with_K(K)))
    return float(ev[np.argmin(np.abs(ev))].real)


def exchange_of_stability(params: ModelParams, h_rel=1e-4):
    """Linear coefficients in ``s = K - Khat1`` of the eigenvalue near zero on G6 and G8.

    Richardson-extrapolated from ``s = h`` and ``s = 2h``; ``predicted`` is the
    G6 coefficient implied by the invasion rate along G6.
    """
    d = derive(params)
    t = thresholds(params, strict=False)
    if t.Khat1 is None:
        raise ValueError("Khat1 is undefined for these parameters")
    K1 = t.Khat1
    h = h_rel * K1

    def slope(tag):
        vals = []
        for s in (h, 2 * h):
            K = K1 + s
            eq = _g8_near(params, K) if tag is G.G8 else equilibrium_of_type(params, tag, K)
            if eq is None:
                raise ValueError(f"{tag} is not admissible at K={K!r}")
            vals.append(_eig_nearest_zero(eq, params, K) / s)
        return 2 * vals[0] - vals[1]

    g6, g8 = slope(G.G6), slope(G.G8)
    predicted = (1 - 1 / d.eta1star) * d.dAlphaPlus / params.eta1
    return {"g6_slope": g6, "g8_slope": g8, "predicted": predicted, "ratio": g8 / g6}


def coexistence_derivatives(point: Equilibrium, params: ModelParams, K=None):
    """``(dS/dK, dI12/dK)`` at a coexistence point from the explicit brackets.

    Cross-checked against the first column of ``B^{-1}``; both are negative
    whenever ``dP/dS > 0``.
    """
    p = params.with_K(point.K if K is None else K)
    S, I1, I2, I12 = point.point
    dP = dPdS_at(p, p.K, S)
    if not dP > 0:
        raise AssumptionViolation("dPdS>0", f"dP/dS = {dP!r} at K={p.K!r}")
    a1, a2, a3 = p.alpha
    e1, e2 = p.eta
    g1, g2 = p.gamma
    gb = g1 + g2
    r1, r2 = I1 / I12, I2 / I12
    pref = -p.r * S * I12 / (p.K ** 2 * dP)
    dS = pref * (g1 * g2 * gb * r1 * r2 + g1 * e2 * (e1 + gb * r2) + e1 * g2 * (e2 + gb * r1))
    dI12 = pref * (a1 * g2 * (e2 + gb * r1) + g1 * a2 * (e1 + gb * r2) + g1 * g2 * a3)
    col = coexistence_slope(point.point, p)
    for got, ref in ((dS, col[0]), (dI12, col[3])):
        if abs(got - ref) > 1e-8 * max(abs(ref), abs(got)) + 1e-300:
            scale = abs(pref) * (e1 * e2 + a1 * e2 + a2 * e1) * max(g1, g2, 1e-300)
            if abs(got - ref) > 1e-8 * scale:
                raise InvariantViolation(f"bracket {got!r} vs B^-1 column {ref!r}")
    return float(dS), float(dI12)


# -- Hopf scan --------------------------------------------------------------

@dataclass(frozen=True)
class HopfResult:
    K_c: float
    eigenvalue: complex
    relRe: float
    dRedK: float


def _pair_re(params, K, ref=None):
    eq = _g8_near(params, K, ref)
    if eq is None:
        return None, None, None
    ev = eigenvalues4(jacobian(eq.point, params.with_K(K)))
    scale = float(np.max(np.abs(ev)))
    cplx = ev[np.abs(ev.imag) > 1e-12 * scale]
    if cplx.size == 0:
        return -math.inf, None, scale
    lam = cplx[np.argmax(cplx.real)]
    return float(lam.real), complex(lam), scale


def hopf_scan(params: ModelParams, K_range, n_grid=400, rtol=1e-10):
    """First K where a complex pair at G8 crosses into the right half-plane.

    A log-spaced grid brackets the sign change, then bisection drives
    ``|Re lambda| < rtol |lambda|``.  Raises :class:`NoCrossing` (with
    ``marginal=True`` if the pair touches the axis within the stability
    deadband) when no crossing exists on the range.
    """
    K_lo, K_hi = map(float, K_range)
    grid = np.geomspace(K_lo, K_hi, max(n_grid, 2))
    prev = None
    marginal = False
    for K in grid:
        re, lam, scale = _pair_re(params, K)
        if re is None:
            prev = None
            continue
        if lam is not None and abs(re) <= MARGINAL_RTOL * scale:
            marginal = True
        if prev is not None and prev[1] < 0 < re:
            return _bisect_hopf(params, prev[0], K, rtol)
        prev = (K, re)
    raise NoCrossing(f"no crossing on [{K_lo!r}, {K_hi!r}]", marginal=marginal)


def _bisect_hopf(params, a, b, rtol):
    # dRe/dK is tiny near a Hopf point, so |Re| < rtol |lambda| alone leaves K
    # loose; keep halving until the bracket is at rounding level
    best = None
    for _ in range(300):
        m = 0.5 * (a + b)
        re, lam, _ = _pair_re(params, m)
        if re is None:
            raise NoCrossing(f"coexistence point lost at K={m!r}")
        if best is None or abs(re) / abs(lam) <= best[0]:
            best = (abs(re) / abs(lam), m, lam)
        if b - a <= 4e-16 * b:
            break
        if re < 0:
            a = m
        else:
            b = m
    rel, K_c, lam = best
    if rel >= rtol:
        raise NoConvergence(f"Hopf bisection reached |Re|/|lambda| = {rel:.3e} only")
    h = 1e-4 * K_c
    rp, _, _ = _pair_re(params, K_c + h)
    rm, _, _ = _pair_re(params, K_c - h)
    return HopfResult(K_c, lam, rel, (rp - rm) / (2 * h))
