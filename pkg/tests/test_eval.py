import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pipcfr import numgrad as ng
from pipcfr.datagen import Dataset, Example1Config, Scaler
from pipcfr.eval import (
    GaussianFamily,
    MetricsReport,
    aggregate,
    counterfactual_variance,
    evaluate,
    example1_oracle,
    format_report,
    ite,
    ols_fit,
    pehe,
    pehe_from_arrays,
    potential_outcomes,
    prop2_check,
    random_gaussian_family,
)
from pipcfr.nets import ModelBundle

from test_nets import SMALL, const_net


def const_bundle(c0, c1, x_dim=2, scaler=None):
    """TARNET whose heads output the constants c0 and c1."""
    b = ModelBundle.build("TARNET", x_dim, 0, SMALL, np.random.default_rng(0), scaler)
    const_net(b.f0, c0)
    const_net(b.f1, c1)
    return b


def test_pehe_known_value():
    assert pehe_from_arrays([1.0, 2.0, 3.0], [1.0, 2.0, 6.0]) == pytest.approx(math.sqrt(3.0))


def test_pehe_shape_mismatch():
    with pytest.raises(ng.ShapeError):
        pehe_from_arrays([1.0, 2.0], [1.0])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30), st.floats(-10, 10))
def test_pehe_of_shifted_truth(tau, c):
    tau = np.array(tau)
    assert pehe_from_arrays(tau + c, tau) == pytest.approx(abs(c), abs=1e-9)


def test_constant_heads_give_constant_ite():
    b = const_bundle(1.0, 3.5)
    x = np.random.default_rng(0).normal(size=(10, 2))
    f0, f1 = potential_outcomes(b, x)
    assert np.allclose(f0, 1.0) and np.allclose(f1, 3.5)
    assert np.allclose(ite(b, x), 2.5)


def test_outputs_mapped_back_to_outcome_units():
    sc = Scaler(np.zeros(2), np.ones(2), np.zeros(0), np.ones(0), y_mean=10.0, y_std=2.0)
    b = const_bundle(0.0, 1.0, scaler=sc)
    f0, f1 = potential_outcomes(b, np.zeros((3, 2)))
    assert np.allclose(f0, 10.0) and np.allclose(f1, 12.0)


def test_pehe_on_dataset_and_dimension_check():
    b = const_bundle(0.0, 2.0)
    x = np.zeros((4, 2))
    ds = Dataset(x, [0, 1, 0, 1], np.zeros((4, 0)), np.zeros(4), np.zeros(4), np.array([1.0, 2, 3, 4]))
    assert pehe(b, ds) == pytest.approx(math.sqrt((1 + 0 + 1 + 4) / 4))
    bad = Dataset(np.zeros((4, 3)), [0, 1, 0, 1], np.zeros((4, 0)), np.zeros(4), np.zeros(4), np.ones(4))
    with pytest.raises(ng.ShapeError, match="x_dim=2"):
        pehe(b, bad)


def test_counterfactual_error_uses_opposite_arm():
    b = const_bundle(0.0, 1.0)
    t = np.array([0, 0, 1, 1])
    y0 = np.array([0.0, 0.0, 1.0, -1.0])
    y1 = np.array([2.0, 0.0, 5.0, 5.0])
    ds = Dataset(np.zeros((4, 2)), t, np.zeros((4, 0)), np.zeros(4), y0, y1)
    mean, var = counterfactual_variance(b, ds)
    err = np.array([1 - 2.0, 1 - 0.0, 0 - 1.0, 0 + 1.0])
    assert mean == pytest.approx(err.mean())
    assert var == pytest.approx(err.var(ddof=1))


def test_evaluate_without_truth_gives_nan():
    b = const_bundle(0.0, 1.0)
    ds = Dataset(np.zeros((3, 2)), [0, 1, 0], np.zeros((3, 0)), np.zeros(3))
    r = evaluate(b, ds, ds)
    assert math.isnan(r.pehe_out) and math.isnan(r.cf_error_var)
    assert r.method == "TARNET"


def test_metrics_report_round_trip_and_validation():
    r = MetricsReport("TARNET", 1.0, 2.0, 0.1, 0.5, seed=3, config_fingerprint="abc")
    assert MetricsReport.from_dict(r.to_dict()) == r
    with pytest.raises(ValueError):
        MetricsReport("TARNET", -1.0, 2.0, 0.0, 0.0)


def test_aggregate():
    a = aggregate([1.0, 2.0, 3.0, float("nan")])
    assert a.n == 3 and a.mean == 2.0 and a.std == pytest.approx(1.0)
    assert a.sem == pytest.approx(1 / math.sqrt(3))
    assert a.cell() == "2.00 ± 1.00"
    assert aggregate([]).n == 0


def test_format_report_groups():
    rows = [{"method": "A", "pehe_out": 1.0}, {"method": "A", "pehe_out": 3.0}, {"method": "B", "pehe_out": 5.0}]
    text = format_report(rows, ["method"], ["pehe_out"])
    assert "A | 2 | 2.00 ± 1.41" in text
    assert "B | 1 | 5.00 ± 0.00" in text
    assert "std of the mean" in text


def test_ols_recovers_linear_model(rng):
    X = np.column_stack([np.ones(500), rng.normal(size=(500, 2))])
    beta = np.array([1.0, -2.0, 0.5])
    assert np.allclose(ols_fit(X, X @ beta), beta, atol=1e-8)


def test_ols_singular_design():
    X = np.column_stack([np.ones(10), np.ones(10)])
    with pytest.raises(np.linalg.LinAlgError):
        ols_fit(X, np.zeros(10))


def test_oracle_small_mc_refused():
    with pytest.raises(ValueError):
        example1_oracle(Example1Config(), n_mc=1000)


def test_oracle_targets_at_minimum_size():
    res = example1_oracle(Example1Config(sigma_u=2.0, seed=1), n_mc=10**5)
    assert res["a"].per_arm["all"]["var"] == pytest.approx(5.0, rel=0.05)
    for t in (0, 1):
        assert res["b"].per_arm[t]["mean"] == pytest.approx((2 * t - 1) * 2.0, abs=0.05)
        assert res["b"].per_arm[t]["var"] == pytest.approx(1.0, rel=0.05)
        assert res["c"].per_arm[t]["var"] == pytest.approx(1.0, rel=0.05)


def test_gaussian_family_posterior_is_calibrated():
    fam = GaussianFamily(np.array([0.3]), np.zeros((1, 1)), np.ones((1, 1)), 1.0)
    x, t, phi, p1, p1_phi = fam.sample(200_000, np.random.default_rng(0))
    # E[t | p1_phi in bin] should match the bin's mean posterior
    bins = np.digitize(p1_phi, np.linspace(0, 1, 11))
    for b in np.unique(bins):
        m = bins == b
        if m.sum() > 2000:
            assert t[m].mean() == pytest.approx(p1_phi[m].mean(), abs=0.02)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_prop2_holds_on_random_families(seed):
    rng = np.random.default_rng(seed)
    fam = random_gaussian_family(rng)
    res = prop2_check(*fam.sample(4000, rng))
    assert res.holds


def test_prop2_independent_phi_has_small_ipm():
    rng = np.random.default_rng(0)
    fam = random_gaussian_family(rng, independent=True)
    res = prop2_check(*fam.sample(4000, rng))
    assert res.rhs < 1e-6  # sqrt of float rounding in the KL
    assert res.lhs < 0.05


def test_prop2_rejects_overlap_violation():
    with pytest.raises(ValueError, match="overlap"):
        prop2_check(np.zeros(4), [0, 1, 0, 1], np.zeros(4), np.ones(4), np.ones(4))
