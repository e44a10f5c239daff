import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coinfection_branch.equilibria import (
    EqType,
    dPdS_at,
    equilibrium_of_type,
    solve_coexistence,
    thresholds,
)
from coinfection_branch.errors import InvariantViolation
from coinfection_branch.model import derive, jacobian
from coinfection_branch.stability import (
    MMatrixSample,
    Stability,
    char_poly,
    classify,
    eigenvalues4,
    g6_window,
    g7_window,
    lambda1_coefficient,
    lambda1_leading_bracket,
    mmatrix_check,
    mmatrix,
    mmatrix_kept_eigenvalues,
    random_mmatrix_samples,
    routh_hurwitz,
    verdict_from_spectrum,
)
from helpers import mp_eigenvalues, mp_jacobian, valid_params, window_agreement


def test_diagonal_spectrum():
    ev = eigenvalues4(np.diag([-1.0, -2.0, -3.0, -4.0]))
    np.testing.assert_allclose(ev, [-1, -2, -3, -4])


def test_rotation_block_spectrum():
    A = np.zeros((4, 4))
    A[0, 1], A[1, 0] = -1.0, 1.0
    A[2, 2] = A[3, 3] = -1.0
    ev = eigenvalues4(A)
    np.testing.assert_allclose(ev, [1j, -1j, -1, -1], atol=1e-14)
    assert verdict_from_spectrum(ev) is Stability.MARGINAL


def test_g8_spectrum_matches_high_precision(P1):
    (g8,) = solve_coexistence(P1, 7.0)
    ev = eigenvalues4(jacobian(g8.point, P1))
    ref = mp_eigenvalues(mp_jacobian(P1, g8.point))
    np.testing.assert_allclose(ev, ref, rtol=1e-10)
    assert np.all(ev.real < 0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=16, max_size=16))
def test_char_poly_reproduces_eigenvalues(entries):
    A = np.array(entries).reshape(4, 4)
    ev = eigenvalues4(A)
    c = char_poly(A)
    mag = np.maximum(np.abs(ev), 1e-8 * max(1.0, np.abs(A).sum(axis=1).max()))
    scale = mag[:, None] ** np.arange(4, -1, -1) @ np.abs(c)
    assert np.all(np.abs(np.polyval(c, ev)) <= 1e-8 * scale)
    assert c[1] == pytest.approx(-np.trace(A), abs=1e-9 * (1 + np.abs(A).sum()))
    assert c[4] == pytest.approx(np.linalg.det(A), abs=1e-8 * (1 + np.abs(A).sum()) ** 4)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2),
       st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_routh_hurwitz_matches_roots(re_parts, im_parts):
    roots = []
    for a, b in zip(re_parts, im_parts):
        roots += [complex(a, b), complex(a, -b)]
    coeffs = np.real(np.poly(roots))
    margin = min(abs(r.real) for r in roots)
    if margin < 1e-3:
        return
    assert routh_hurwitz(coeffs) == all(r.real < 0 for r in roots)


def test_routh_hurwitz_low_degree():
    assert routh_hurwitz([1.0])
    assert routh_hurwitz([1.0, 2.0])
    assert not routh_hurwitz([1.0, -2.0])
    assert routh_hurwitz([1.0, 1.0, 2.0, 1.0])
    assert not routh_hurwitz([1.0, 1.0, 1.0, 2.0])


def test_g2_stable_below_sigma1(P1):
    g2 = equilibrium_of_type(P1, EqType.G2, 0.3)
    rep = classify(g2, P1)
    assert rep.classification is Stability.STABLE and rep.agrees


def test_g3_unstable_past_window(P1):
    g3 = equilibrium_of_type(P1, EqType.G3, 1.1)
    rep = classify(g3, P1)
    assert rep.classification is Stability.UNSTABLE and rep.agrees


def test_g8_stable_mid_window(P1):
    t = thresholds(P1)
    K = 0.5 * (t.Khat1 + t.Khat2)
    (g8,) = solve_coexistence(P1, K)
    rep = classify(g8, P1)
    assert rep.classification is Stability.STABLE and rep.agrees


def test_report_fields(P1):
    (g8,) = solve_coexistence(P1, 7.0)
    rep = classify(g8, P1)
    assert rep.eigenvalues.shape == (4,)
    assert list(rep.eigenvalues.real) == sorted(rep.eigenvalues.real, reverse=True)
    assert rep.charPolyCoeffs.shape == (5,) and rep.charPolyCoeffs[0] == 1.0
    assert rep.maxRealPart == rep.eigenvalues.real.max()


def test_windows_p1(P1):
    w6, w7 = g6_window(P1), g7_window(P1)
    assert (w6.lo, w6.hi) == pytest.approx((1.0, 6.2521848), rel=1e-7)
    assert w6.case == "Q=Shat1"
    assert (w7.lo, w7.hi) == pytest.approx((9.3717147, 12.0), rel=1e-7)


def test_g6_window_when_eta2star_larger(P1):
    p = P1.replace(eta2=4.2)  # eta2* = 2.1 > eta1* = 2
    d = derive(p)
    assert d.eta2star > d.eta1star
    w = g6_window(p)
    assert w.case == "Q=sigma3"
    assert w.hi == pytest.approx(d.sigma3 * d.eta1star / (d.eta1star - 1))


def test_g6_window_empty(P1):
    assert g6_window(P1.replace(eta1=6.0, eta2=1.0)) is None  # eta1* < 1


def test_g7_window_empty_when_eta2star_small(P2):
    assert g7_window(P2) is None


def test_g7_window_degenerate_case(P1):
    # deltaAlpha - gamma1 alpha3 = 0 with deltaMu - gamma1 mu3 = 25 - 32 < 0
    p = P1.replace(gamma1=8.0)
    d = derive(p)
    assert d.dAlphaMinus == 0 and d.deltaMu - p.gamma1 * p.mu3 < 0
    w = g7_window(p)
    c = d.eta2star / (d.eta2star - 1)
    assert w.case == "D=0"
    assert (w.lo, w.hi) == pytest.approx((d.sigma2 * c, d.sigma3 * c))


@settings(max_examples=60, deadline=None)
@given(valid_params())
def test_windows_match_interior_formula(p):
    d = derive(p)
    w6 = g6_window(p)
    if w6 is not None:
        t = thresholds(p)
        c = d.eta1star / (d.eta1star - 1)
        assert w6.hi == pytest.approx(min(d.sigma3, t.Shat1) * c, rel=1e-12)


def test_window_verdicts_agree_with_spectrum(P1):
    assert window_agreement(P1, EqType.G6, g6_window(P1)) == []
    assert window_agreement(P1, EqType.G7, g7_window(P1)) == []


@settings(max_examples=100, deadline=None)
@given(valid_params())
def test_g7_resident_block_is_hurwitz(p):
    d = derive(p)
    if d.eta2star <= 1:
        return
    K = 0.5 * (d.sigma2 + d.sigma3) * d.eta2star / (d.eta2star - 1)
    g7 = equilibrium_of_type(p, EqType.G7, K)
    J = jacobian(g7.point, p.with_K(K))
    idx = [0, 2, 3]
    assert routh_hurwitz(char_poly(J[np.ix_(idx, idx)]))


@settings(max_examples=60, deadline=None)
@given(valid_params(small_gamma=True))
def test_coexistence_trace_and_determinant(p):
    d = derive(p)
    t = thresholds(p)
    if not d.eta1star > 1 or t.Khat1 is None:
        return
    K = t.Khat1 * 1.05
    for g8 in solve_coexistence(p, K):
        J = jacobian(g8.point, p.with_K(K))
        ev = eigenvalues4(J)
        assert np.trace(J) < 0
        if dPdS_at(p, K, g8.S) > 0:
            assert np.prod(ev).real == pytest.approx(np.linalg.det(J), rel=1e-8)
            assert np.linalg.det(J) > 0


def test_lambda1_routes_agree(P1):
    (g8,) = solve_coexistence(P1, 7.0)
    c = lambda1_coefficient(g8, P1)
    assert c > 0
    assert classify(g8, P1).stable


def test_lambda1_negative_at_large_K(P3):
    (g8,) = solve_coexistence(P3, 1e5)
    assert lambda1_coefficient(g8, P3) < 0
    assert lambda1_coefficient(g8, P3, finite_K=False) < 0


def test_lambda1_gamma_zero(P3):
    p = P3.replace(gamma1=0.0, gamma2=0.0)
    (g8,) = solve_coexistence(p, 1e5)
    # the large-K minor sum vanishes identically; only the r/K terms remain
    assert lambda1_coefficient(g8, p, finite_K=False) == 0.0
    exact = p.r / p.K * (p.eta2 ** 2 / g8.I1 + p.eta1 ** 2 / g8.I2)
    assert lambda1_coefficient(g8, p) == pytest.approx(exact, rel=1e-8)


def test_lambda1_leading_bracket_p3(P3):
    assert lambda1_leading_bracket(P3) == pytest.approx(-1405.332252252242, rel=1e-12)


def test_lambda1_requires_interior(P1):
    g6 = equilibrium_of_type(P1, EqType.G6, 5.0)
    with pytest.raises(ValueError):
        lambda1_coefficient(g6, P1)


def test_mmatrix_structural_zero(P1):
    s = MMatrixSample((1.0, 0.0, 2.0, 3.0), K=7.0)
    M = mmatrix(s, P1)
    full = eigenvalues4(M)
    assert np.min(np.abs(full)) < 1e-12
    kept = mmatrix_kept_eigenvalues(s, P1)
    reduced = eigenvalues4(np.delete(np.delete(M, 1, 0), 1, 1))
    np.testing.assert_allclose(np.sort_complex(kept), np.sort_complex(reduced), atol=1e-12)
    assert np.all(kept.real < 0)


def test_mmatrix_no_imaginary_axis(P1):
    rng = np.random.default_rng(7)
    t = thresholds(P1)
    for s in random_mmatrix_samples(rng, 200, (t.Khat1, t.Khat2), zero_fraction=0.0):
        assert np.min(np.abs(mmatrix_kept_eigenvalues(s, P1).real)) > 0


def test_mmatrix_monte_carlo(P1):
    rng = np.random.default_rng(11)
    t = thresholds(P1)
    samples = random_mmatrix_samples(rng, 1000, (t.Khat1, t.Khat2))
    assert mmatrix_check(samples, P1) < 0


def test_mmatrix_sample_bounds():
    with pytest.raises(ValueError):
        MMatrixSample((0.001, 1.0, 1.0, 1.0), K=1.0)
    with pytest.raises(ValueError):
        MMatrixSample((1.0, 0.0, 0.0, 1.0), K=1.0)
    with pytest.raises(ValueError):
        MMatrixSample((1.0, 1.0, 1.0, 101.0), K=1.0)


def test_mmatrix_check_raises_on_unstable(P1):
    p = P1.replace(r=1e-12)
    s = MMatrixSample((1.0, 1.0, 1.0, 1.0), K=1e12)
    # without the damping term the spectrum is purely imaginary
    with pytest.raises(InvariantViolation):
        mmatrix_check([s], p)
