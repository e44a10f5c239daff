"""Direct integration of the five-compartment system.

The integrator is an adaptive Dormand-Prince 5(4) pair with a PI step
controller and the standard quartic dense output, compiled with numba.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np
from scipy.signal import find_peaks

from .equilibria import Equilibrium
from .errors import NonFinite, StepUnderflow
from .model import ModelParams
from .stability import classify

logger = logging.getLogger(__name__)

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = np.zeros((7, 6))
_A[1, :1] = [1 / 5]
_A[2, :2] = [3 / 40, 9 / 40]
_A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
_A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
_A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_A[6, :] = _B[:6]
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# dense output: y(t + th h) = y + h * sum_j k_j * (P[j] . (th, th^2, th^3, th^4))
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

OK, UNDERFLOW, NONFINITE, MAXSTEPS = 0, 1, 2, 3
CLIP_TOL = 1e-12


@numba.njit(cache=True, nogil=True)
def _rhs(y, p, out):
    r, K = p[0], p[1]
    a1, a2, a3 = p[2], p[3], p[4]
    e1, e2 = p[5], p[6]
    g1, g2 = p[7], p[8]
    m1, m2, m3 = p[9], p[10], p[11]
    S, I1, I2, I12, R = y[0], y[1], y[2], y[3], y[4]
    out[0] = (r * (1.0 - S / K) - a1 * I1 - a2 * I2 - a3 * I12) * S
    out[1] = (a1 * S - e1 * I12 - g1 * I2 - m1) * I1
    out[2] = (a2 * S - e2 * I12 - g2 * I1 - m2) * I2
    out[3] = (a3 * S + e1 * I1 + e2 * I2 - m3) * I12 + (g1 + g2) * I1 * I2
    out[4] = p[12] * I1 + p[13] * I2 + p[14] * I12 - p[15] * R


@numba.njit(cache=True, nogil=True)
def _dopri5(y0, p, t_eval, rtol, atol, max_steps, A, C, E, P):
    n = y0.size
    m = t_eval.size
    out = np.empty((m, n))
    k = np.zeros((7, n))
    y = y0.copy()
    ynew = np.empty(n)
    tmp = np.empty(n)
    t = t_eval[0]
    t_end = t_eval[m - 1]
    out[0, :] = y
    idx = 1
    _rhs(y, p, k[0])
    for i in range(n):
        if not np.isfinite(k[0, i]):
            return out, 0, 0, 0.0, NONFINITE, t
    # initial step from the scaled norms of y and f
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y[i])
        d0 += (y[i] / sc) ** 2
        d1 += (k[0, i] / sc) ** 2
    d0 = np.sqrt(d0 / n)
    d1 = np.sqrt(d1 / n)
    h = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h = min(h, t_end - t) if t_end > t else 0.0
    accepted = 0
    rejected = 0
    max_err = 0.0
    errold = 1e-4
    blowup = False
    while idx < m:
        if accepted + rejected >= max_steps:
            return out, accepted, rejected, max_err, MAXSTEPS, t
        if t + h > t_end:
            h = t_end - t
        if h <= 16.0 * 2.2e-16 * max(abs(t), 1.0):
            return out, accepted, rejected, max_err, NONFINITE if blowup else UNDERFLOW, t
        for s in range(1, 7):
            for i in range(n):
                acc = y[i]
                for j in range(s):
                    acc += h * A[s, j] * k[j, i]
                tmp[i] = acc
            _rhs(tmp, p, k[s])
        for i in range(n):
            ynew[i] = tmp[i]
        err = 0.0
        finite = True
        for i in range(n):
            e = 0.0
            for j in range(7):
                e += E[j] * k[j, i]
            e *= h
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            err += (e / sc) ** 2
            if not np.isfinite(ynew[i]):
                finite = False
        err = np.sqrt(err / n)
        blowup = not finite or not np.isfinite(err)
        if blowup:
            h *= 0.2
            rejected += 1
            continue
        if err <= 1.0:
            # dense output for every requested time inside the step
            while idx < m and t_eval[idx] <= t + h:
                th = (t_eval[idx] - t) / h
                th2 = th * th
                th3 = th2 * th
                th4 = th3 * th
                for i in range(n):
                    acc = 0.0
                    for j in range(7):
                        acc += k[j, i] * (P[j, 0] * th + P[j, 1] * th2 + P[j, 2] * th3 + P[j, 3] * th4)
                    out[idx, i] = y[i] + h * acc
                idx += 1
            t += h
            for i in range(n):
                v = ynew[i]
                if v < 0.0 and v > -1e-12:
                    v = 0.0
                y[i] = v
                k[0, i] = k[6, i]
            accepted += 1
            if err > max_err:
                max_err = err
            if err > 0.0:
                fac = 0.9 * err ** (-0.7 / 5.0) * errold ** (0.4 / 5.0)
            else:
                fac = 5.0
            fac = min(5.0, max(0.2, fac))
            errold = max(err, 1e-4)
            h *= fac
        else:
            rejected += 1
            h *= max(0.2, 0.9 * err ** (-0.2))
    return out, accepted, rejected, max_err, OK, t


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    accepted: int
    rejected: int
    max_err: float

    @property
    def final(self):
        return self.states[-1]

    def distance(self, point):
        """Max-norm distance of ``(S, I1, I2, I12)`` to ``point`` at each sample,
        relative to the size of the point when it is at least one."""
        point = np.asarray(point, dtype=float)[:4]
        scale = max(1.0, float(np.max(np.abs(point))))
        return np.max(np.abs(self.states[:, :4] - point), axis=1) / scale


def integrate(params: ModelParams, initial, t_end, rel_tol=1e-8, abs_tol=1e-12,
              t_eval=None, n_samples=1001, max_steps=10**12) -> Trajectory:
    """Integrate from ``initial`` (4 or 5 components; R defaults to 0).

    Samples are returned at ``t_eval`` (default: ``n_samples`` evenly spaced
    times on ``[0, t_end]``) by dense output.
    """
    y0 = np.zeros(5)
    init = np.asarray(initial, dtype=float)
    y0[: init.size] = init
    if init.size not in (4, 5) or np.any(y0 < 0) or not y0[0] > 0:
        raise ValueError("initial state must be nonnegative with S > 0")
    if t_eval is None:
        t_eval = np.linspace(0.0, float(t_end), n_samples)
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval[0] != 0.0 or np.any(np.diff(t_eval) <= 0):
        raise ValueError("t_eval must start at 0 and be strictly increasing")
    out, acc, rej, max_err, status, t = _dopri5(
        y0, params.as_array(), t_eval, float(rel_tol), float(abs_tol), int(max_steps),
        _A, _C, _E, _P)
    if status == UNDERFLOW:
        raise StepUnderflow(f"step size underflow at t={t!r}")
    if status == NONFINITE:
        raise NonFinite(f"non-finite state at t={t!r}")
    if status == MAXSTEPS:
        raise StepUnderflow(f"step budget exhausted at t={t!r}")
    out[(out < 0) & (out > -CLIP_TOL)] = 0.0
    return Trajectory(t_eval, out, int(acc), int(rej), float(max_err))


def r_limit(params: ModelParams, equilibrium: Equilibrium):
    """Limit of the removed class at ``equilibrium``."""
    _, I1, I2, I12 = equilibrium.point
    return (params.rho1 * I1 + params.rho2 * I2 + params.rho3 * I12) / params.mu4p


def converged(traj: Trajectory, point, tol=1e-6, window=0.1):
    """Distance below ``tol`` at every sample in the final ``window`` of the horizon."""
    t0 = traj.times[-1] * (1.0 - window)
    return bool(np.all(traj.distance(point)[traj.times >= t0] < tol))


def default_horizon(report, t_min=100.0, t_max=2e5):
    """Long enough for a perturbation to decay by ~e^-25 at the slowest rate."""
    rate = abs(report.maxRealPart)
    if rate == 0:
        return t_max
    return float(min(t_max, max(t_min, 25.0 / rate)))


def perturbations(point, n_samples, radius, rng):
    """Nonnegative perturbations of relative size ``radius``.

    Nonzero components are scaled by ``1 + radius u`` with ``u`` uniform in
    ``[-1, 1]``; zero components receive ``radius ||x|| u`` with ``u`` in
    ``[0, 1]`` so the state stays in the nonnegative orthant.
    """
    x = np.asarray(point, dtype=float)[:4]
    size = float(np.max(np.abs(x)))
    out = np.empty((n_samples, 4))
    for k in range(n_samples):
        u = rng.uniform(-1.0, 1.0, 4)
        y = x * (1.0 + radius * u)
        zero = x == 0
        y[zero] = radius * size * np.abs(u[zero])
        out[k] = y
    return out


def basin_probe(params: ModelParams, K, point, n_samples=20, radius=0.005, seed=0,
                t_end=None, rel_tol=1e-10, abs_tol=1e-13, tol=1e-6, jobs=1):
    """Fraction of perturbed starts that return to ``point``.

    ``point`` is an :class:`Equilibrium` or a raw state.  Samples are drawn
    from ``numpy.random.default_rng(seed)`` before any integration, so the
    result does not depend on ``jobs``.
    """
    p = params.with_K(K)
    x = point.point if isinstance(point, Equilibrium) else np.asarray(point, dtype=float)
    if t_end is None:
        if isinstance(point, Equilibrium):
            t_end = default_horizon(classify(point, p))
        else:
            t_end = 1e4
    starts = perturbations(x, n_samples, radius, np.random.default_rng(seed))

    def one(y0):
        try:
            traj = integrate(p, y0, t_end, rel_tol, abs_tol, n_samples=501)
        except (StepUnderflow, NonFinite) as exc:
            logger.warning("basin sample failed: %s", exc)
            return False
        return converged(traj, x, tol)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            hits = list(pool.map(one, starts))
    else:
        hits = [one(y0) for y0 in starts]
    return sum(hits) / n_samples if n_samples else 1.0


@dataclass(frozen=True)
class OscillationReport:
    amplitude_last: float
    amplitude_prev: float
    period: float | None
    sustained: bool


def _refined_peak_times(t, y):
    idx, _ = find_peaks(y)
    idx = idx[(idx > 0) & (idx < len(y) - 1)]
    out = []
    for i in idx:
        y0, y1, y2 = y[i - 1], y[i], y[i + 1]
        den = y0 - 2 * y1 + y2
        off = 0.5 * (y0 - y2) / den if den != 0 else 0.0
        out.append(t[i] + off * (t[i + 1] - t[i]))
    return np.array(out)


def oscillation(traj: Trajectory, abs_tol, component=0, window=0.2):
    """Amplitude-plateau test on one component.

    Sustained when the peak-to-peak amplitude over the final ``window`` of
    the run exceeds ``100 abs_tol`` and is within 10% of the amplitude over
    the preceding window of the same length.
    """
    t, y = traj.times, traj.states[:, component]
    T = t[-1]
    last = t >= T * (1 - window)
    prev = (t >= T * (1 - 2 * window)) & ~last
    a_last = float(np.ptp(y[last]))
    a_prev = float(np.ptp(y[prev]))
    peaks = _refined_peak_times(t[last], y[last])
    period = float(np.mean(np.diff(peaks))) if peaks.size >= 2 else None
    sustained = a_last > 100 * abs_tol and abs(a_last - a_prev) <= 0.1 * a_prev
    return OscillationReport(a_last, a_prev, period, bool(sustained))
