"""Parameter generators and independent high-precision oracles."""

import mpmath as mp
import numpy as np
from hypothesis import assume
from hypothesis import strategies as st

from coinfection_branch.equilibria import equilibrium_of_type
from coinfection_branch.model import ModelParams
from coinfection_branch.stability import Stability, classify


def build_params(r, alpha, sigma, eta, gamma, K):
    a1, a2, a3 = alpha
    mu = [s * a for s, a in zip(sigma, alpha)]
    return ModelParams(
        r=r, K=K, alpha1=a1, alpha2=a2, alpha3=a3, eta1=eta[0], eta2=eta[1],
        gamma1=gamma[0], gamma2=gamma[1], mu1=mu[0], mu2=mu[1], mu3=mu[2],
        rho1=0.0, rho2=0.0, rho3=0.0, mu4p=1.0,
    )


def _finish(r, alpha, sigma, eta, gamma_frac, K, small_gamma):
    a1, a2, a3 = alpha
    A3 = a1 * a2 * (sigma[1] - sigma[0]) / r
    dA = eta[0] * a2 - eta[1] * a1
    if dA <= 0:
        return None
    g1_cap = min(A3, dA / a3)
    if small_gamma:
        g1, g2 = 1e-3 * gamma_frac[0] * g1_cap, 1e-3 * gamma_frac[1] * g1_cap
    else:
        g1, g2 = 0.99 * gamma_frac[0] * g1_cap, gamma_frac[1]
    return build_params(r, alpha, sigma, eta, (g1, g2), K)


def random_valid_params(rng, small_gamma=False):
    """Parameters satisfying every standing assumption, drawn from ``rng``."""
    while True:
        r = rng.uniform(0.5, 2.0)
        alpha = rng.uniform(0.5, 5.0, 3)
        s1 = rng.uniform(0.1, 1.0)
        s2 = s1 + rng.uniform(0.1, 2.0)
        s3 = s2 + rng.uniform(0.1, 3.0)
        eta = rng.uniform(0.05, 30.0, 2)
        p = _finish(r, alpha, (s1, s2, s3), eta, rng.uniform(0.0, 1.0, 2),
                    rng.uniform(1.0, 20.0), small_gamma)
        if p is not None:
            return p


@st.composite
def valid_params(draw, small_gamma=False):
    f = lambda lo, hi: st.floats(lo, hi, allow_nan=False, allow_infinity=False)
    r = draw(f(0.5, 2.0))
    alpha = [draw(f(0.5, 5.0)) for _ in range(3)]
    s1 = draw(f(0.1, 1.0))
    s2 = s1 + draw(f(0.1, 2.0))
    s3 = s2 + draw(f(0.1, 3.0))
    eta = [draw(f(0.05, 30.0)) for _ in range(2)]
    gf = [draw(f(0.0, 1.0)) for _ in range(2)]
    K = draw(f(1.0, 20.0))
    p = _finish(r, alpha, (s1, s2, s3), eta, gf, K, small_gamma)
    assume(p is not None)
    return p


def mp_coexistence_det(p, S, dps=50):
    """The 4x4 determinant whose zeros in S are coexistence susceptibles."""
    with mp.workdps(dps):
        S = mp.mpf(S)
        K = mp.mpf(p.K)
        c = mp.mpf(p.r) / K * (S - K)
        M = mp.matrix([
            [p.mu1, p.mu2, p.mu3, c * S],
            [p.alpha1, p.alpha2, p.alpha3, c],
            [0, p.gamma1, p.eta1, p.mu1 - p.alpha1 * S],
            [p.gamma2, 0, p.eta2, p.mu2 - p.alpha2 * S],
        ])
        return mp.det(M)


def mp_coexistence_point(p, S_lo, S_hi, dps=50):
    """Coexistence point by bisection on the determinant and an exact back-solve."""
    with mp.workdps(dps):
        a, b = mp.mpf(S_lo), mp.mpf(S_hi)
        fa = mp_coexistence_det(p, a, dps)
        assert fa * mp_coexistence_det(p, b, dps) < 0
        for _ in range(dps * 4):
            m = (a + b) / 2
            fm = mp_coexistence_det(p, m, dps)
            if fm * fa > 0:
                a, fa = m, fm
            else:
                b = m
        S = (a + b) / 2
        M = mp.matrix([[p.alpha1, p.alpha2, p.alpha3], [0, p.gamma1, p.eta1], [p.gamma2, 0, p.eta2]])
        rhs = mp.matrix([p.r * (1 - S / p.K), p.alpha1 * S - p.mu1, p.alpha2 * S - p.mu2])
        I = mp.lu_solve(M, rhs)
        return [S, I[0], I[1], I[2]]


def mp_jacobian(p, x, dps=50):
    with mp.workdps(dps):
        S, I1, I2, I12 = [mp.mpf(v) if not isinstance(v, mp.mpf) else v for v in x]
        a1, a2, a3 = p.alpha
        e1, e2 = p.eta
        g1, g2 = p.gamma
        m1, m2, m3 = p.mu
        gb = g1 + g2
        r, K = p.r, p.K
        return mp.matrix([
            [r * (1 - 2 * S / K) - a1 * I1 - a2 * I2 - a3 * I12, -a1 * S, -a2 * S, -a3 * S],
            [a1 * I1, a1 * S - e1 * I12 - g1 * I2 - m1, -g1 * I1, -e1 * I1],
            [a2 * I2, -g2 * I2, a2 * S - e2 * I12 - g2 * I1 - m2, -e2 * I2],
            [a3 * I12, e1 * I12 + gb * I2, e2 * I12 + gb * I1, a3 * S + e1 * I1 + e2 * I2 - m3],
        ])


def mp_eigenvalues(A, dps=50):
    with mp.workdps(dps):
        ev = mp.eig(mp.matrix(A))[0]
        return sorted((complex(v) for v in ev), key=lambda z: (-z.real, -z.imag))


def fd_jacobian(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        step = h * max(1.0, abs(x[j]))
        e[j] = step
        cols.append((f(x + e) - f(x - e)) / (2 * step))
    return np.array(cols).T


def window_agreement(p, tag, window, n=50):
    """K values where the closed-form window and the spectrum disagree away from endpoints."""
    bad = []
    lo, hi = window.lo, window.hi
    for a, b in ((0.5 * lo, lo), (lo, hi), (hi, 1.5 * hi)):
        for K in np.linspace(a, b, n + 2)[1:-1]:
            eq = equilibrium_of_type(p, tag, K)
            predicted = K in window
            if eq is None:
                if predicted:
                    bad.append(K)
                continue
            actual = classify(eq, p).classification is Stability.STABLE
            near = min(abs(K - lo), abs(K - hi)) <= 1e-6 * K
            if actual != predicted and not near:
                bad.append(K)
    return bad
