import json

import numpy as np
import pytest
from hypothesis import given, settings

from coinfection_branch.errors import AssumptionViolation, NonFinite, ParameterError
from coinfection_branch.model import (
    PARAM_FIELDS,
    ModelParams,
    derive,
    identity_residuals,
    inequality_checks,
    interaction_matrix,
    jacobian,
    load_params,
    validate_standing_assumptions,
    vector_field,
)
from helpers import fd_jacobian, valid_params


def test_p1_derived_values(P1):
    d = derive(P1)
    assert d.sigma == pytest.approx((0.5, 2.0, 4.0), rel=1e-15)
    assert d.A == pytest.approx((7.0, 2.0, 3.0), rel=1e-15)
    assert (d.eta1star, d.eta2star) == pytest.approx((2.0, 1.5), rel=1e-15)
    assert (d.deltaAlpha, d.deltaMu) == (8.0, 25.0)
    assert d.rhoDet == pytest.approx(0.1999, rel=1e-12)
    assert d.thetaDet == pytest.approx(0.3096, rel=1e-12)
    assert d.gammastar == pytest.approx(0.01 / 3)


def test_p3_derived_values(P3):
    d = derive(P3)
    assert d.A == pytest.approx((9.0, 8.9, 0.1), rel=1e-12)
    assert d.eta1star == pytest.approx(9.01 / 9, rel=1e-14)
    assert d.eta2star == pytest.approx(8.899 / 8.9, rel=1e-14)
    assert (d.deltaAlpha, d.deltaMu) == pytest.approx((0.209, 0.111), rel=1e-12)


def test_standing_assumptions_reported(P1):
    report = dict(validate_standing_assumptions(derive(P1)))
    assert all(report.values())
    bad = P1.replace(gamma1=9.0)  # gamma* = 3 and gamma1 > deltaAlpha/alpha3 = 8
    report = dict(validate_standing_assumptions(derive(bad)))
    assert not report["gammastar<1"]
    assert not report["gamma1<deltaAlpha/alpha3"]


def test_sigma_ordering_violation_raises(P1):
    with pytest.raises(AssumptionViolation) as exc:
        derive(P1.replace(mu1=5.0))
    assert exc.value.name == "sigma-ordering"
    assert not derive(P1.replace(mu1=5.0), strict=False).flags["sigma-ordering"]


def test_equal_cross_rates_is_degenerate(P1):
    with pytest.raises(AssumptionViolation):
        derive(P1.replace(eta1=6.0, eta2=3.0))


@pytest.mark.parametrize("field,value", [("r", 0.0), ("K", -1.0), ("eta1", -0.1),
                                         ("alpha2", float("nan")), ("mu1", float("inf"))])
def test_field_constraints(P1, field, value):
    with pytest.raises(ParameterError):
        P1.replace(**{field: value})


def test_removal_cannot_exceed_mortality(P1):
    with pytest.raises(ParameterError):
        P1.replace(rho1=1.5)


def test_from_dict_rejects_unknown_and_missing(P1):
    d = P1.to_dict()
    with pytest.raises(ParameterError, match="unknown"):
        ModelParams.from_dict({**d, "beta": 1.0})
    d.pop("mu4p")
    with pytest.raises(ParameterError, match="missing"):
        ModelParams.from_dict(d)


def test_load_params_roundtrip_and_malformed(tmp_path, P1):
    good = tmp_path / "p.json"
    good.write_text(json.dumps(P1.to_dict()))
    assert load_params(good) == P1
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "r": 1,\n  "K": ,\n}')
    with pytest.raises(ParameterError, match=r"line 3, column 8"):
        load_params(bad)


def test_as_array_layout(P1):
    arr = P1.as_array()
    assert arr.dtype == np.float64 and arr.shape == (len(PARAM_FIELDS),)
    assert arr[PARAM_FIELDS.index("eta1")] == 14.0


@settings(max_examples=200, deadline=None)
@given(valid_params())
def test_identities_hold(p):
    for name, res in identity_residuals(p).items():
        assert res <= 1e-12, name


@settings(max_examples=200, deadline=None)
@given(valid_params())
def test_inequalities_hold(p):
    assert all(inequality_checks(p).values())


@settings(max_examples=100, deadline=None)
@given(valid_params())
def test_jacobian_matches_finite_differences(p):
    rng = np.random.default_rng(0)
    x = rng.uniform(0.05, 2.0, 4)
    J = jacobian(x, p)
    Jfd = fd_jacobian(lambda y: vector_field(y, p), x)
    np.testing.assert_allclose(J, Jfd, rtol=1e-6, atol=1e-7 * np.abs(J).max())


def test_vector_field_R_component(P1):
    x = np.array([1.0, 0.2, 0.3, 0.4, 0.5])
    f = vector_field(x, P1, include_R=True)
    assert f.shape == (5,)
    assert f[4] == pytest.approx(0.1 * (0.2 + 0.3 + 0.4) - 0.5)


def test_vector_field_nonfinite(P1):
    with pytest.raises(NonFinite):
        vector_field([np.inf, 0, 0, 0], P1)


def test_interaction_matrix_factors_jacobian(P1):
    from coinfection_branch.equilibria import solve_coexistence

    g8 = solve_coexistence(P1)[0]
    B = interaction_matrix(g8.point, P1)
    np.testing.assert_allclose(np.diag(g8.point) @ B, jacobian(g8.point, P1), atol=1e-12)
