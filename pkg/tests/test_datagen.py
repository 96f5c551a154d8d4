import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pipcfr import datagen as dg


def test_example1_tau_is_alpha_sum():
    ds = dg.gen_example1(dg.Example1Config(alpha1=2.0, alpha2=1.0, n=500, seed=3))
    np.testing.assert_allclose(ds.tau_true, 3.0)
    # noiseless potential outcomes keep u_s
    u = ds.extras["u_s"]
    np.testing.assert_allclose(ds.y0_true, 2 * ds.x[:, 0] + u)


def test_example1_balanced_treatment_when_x_vanishes():
    ds = dg.gen_example1(dg.Example1Config(sigma_x=1e-9, sigma_t=1.0, n=100_000, seed=0))
    assert abs(ds.t.mean() - 0.5) < 0.01


def test_example1_u_s_mean_zero():
    cfg = dg.Example1Config(sigma_u=2.0, n=20_000, seed=1)
    ds = dg.gen_example1(cfg)
    resid = ds.s[:, 0] - ds.x[:, 0] - cfg.alpha1 * ds.t
    assert abs(resid.mean()) < 3 * cfg.sigma_u / np.sqrt(cfg.n)


def test_example1_invalid():
    with pytest.raises(ValueError):
        dg.Example1Config(n=0)
    with pytest.raises(ValueError):
        dg.Example1Config(sigma_u=0.0)


@pytest.mark.parametrize("make", [
    lambda s: dg.gen_example1(dg.Example1Config(n=300, seed=s)),
    lambda s: dg.gen_sequential(dg.SequentialConfig(n_units=200, K=5, seed=s)),
    lambda s: dg.gen_ar(dg.ARConfig(n_units=200, K=6, seed=s)),
    lambda s: dg.gen_temporal(dg.TemporalConfig(n_samples=200, K=8, seed=s)),
])
def test_noise_replay_and_determinism(make):
    ds = make(5)
    y_obs = np.where(ds.t == 1, ds.extras["y1_noisy"], ds.extras["y0_noisy"])
    np.testing.assert_array_equal(ds.y, y_obs)
    np.testing.assert_array_equal(ds.tau_true, ds.y1_true - ds.y0_true)
    again = make(5)
    for name in ("x", "t", "s", "y", "y0_true", "y1_true"):
        np.testing.assert_array_equal(getattr(ds, name), getattr(again, name))
    assert not np.array_equal(make(6).y, ds.y)


def test_sequential_collapses_without_recursion_or_noise():
    cfg = dg.SequentialConfig(n_units=50, K=6, C1=0.0, laplace_scale=0.0, seed=2)
    ds = dg.gen_sequential(cfg)
    beta0, beta1 = np.array(ds.meta["beta0"]), np.array(ds.meta["beta1"])
    seq = ds.s.reshape(50, cfg.K, cfg.m)
    expect = np.where(ds.t[:, None] == 1, ds.x @ beta1, ds.x @ beta0)
    for k in range(1, cfg.K):
        np.testing.assert_allclose(seq[:, k], expect, atol=1e-12)


def test_sequential_beta0_frequencies():
    draws = dg.sample_discrete(dg.BETA0_SPEC, 100_000, np.random.default_rng(0))
    assert abs(np.mean(draws == 0.0) - 0.5) < 0.01


def test_sequential_identical_betas_give_zero_effect():
    spec = ((1.5,), (1.0,))
    ds = dg.gen_sequential(dg.SequentialConfig(n_units=100, K=5, beta0_spec=spec, beta1_spec=spec, seed=0))
    np.testing.assert_allclose(ds.tau_true, 0.0)


def test_sequential_errors():
    with pytest.raises(ValueError):
        dg.gen_sequential(dg.SequentialConfig(K=2))
    with pytest.raises(ValueError):
        dg.SequentialConfig(beta0_spec=((0.0, 1.0), (0.5, 0.6)))


def test_ar_fixed_points():
    n = 20
    scores = np.column_stack([np.full(n, 1.5), np.zeros(n)])
    ds = dg.gen_ar(dg.ARConfig(n_units=n, K=5, A=np.zeros((4, 4)), laplace_scale=0.0), scores=scores)
    np.testing.assert_allclose(ds.s, 1.5)
    ds = dg.gen_ar(dg.ARConfig(n_units=n, K=60, laplace_scale=0.0), scores=scores)
    last = ds.s.reshape(n, 60, 4)[:, -1]
    np.testing.assert_allclose(last, 3.0, atol=1e-10)


def test_ar_bounded_over_long_horizon():
    for seed in range(3):
        cfg = dg.ARConfig(n_units=200, K=500, A=0.85 * np.eye(4), seed=seed)
        ds = dg.gen_ar(cfg)
        drive = np.abs(cfg.C2 * ds.extras["scores"]).sum(1).max()
        assert np.abs(ds.s).max() < drive / (1 - 0.9) + 20 * cfg.laplace_scale


def test_ar_rejects_large_spectral_radius():
    with pytest.raises(ValueError, match="spectral radius"):
        dg.ARConfig(A=np.diag([0.5, 0.95, 0.1, 0.1]))
    assert dg.spectral_radius(np.array([[0.0, 0.8], [-0.8, 0.0]])) == pytest.approx(0.8)


def test_temporal_direct_effect_only():
    cfg = dg.TemporalConfig(n_samples=100, K=10, eps_u=0.0, eps_y=0.0, gamma_v=np.zeros(5),
                            gamma_m=np.zeros(5), beta_t_out=2.5, seed=0)
    ds = dg.gen_temporal(cfg)
    np.testing.assert_allclose(ds.tau_true, 2.5 / cfg.C)


def test_temporal_shapes():
    cfg = dg.TemporalConfig(n_samples=100, feat_dim=5, K=10, seed=0)
    ds = dg.gen_temporal(cfg)
    assert ds.x.shape == (100, 5)
    assert ds.s.shape == (100, cfg.window_len * 3 * 5)
    # each step of the window contributes v, m, a of N dims each
    assert ds.s.shape[1] % (3 * 5) == 0


def test_temporal_invalid():
    with pytest.raises(ValueError):
        dg.TemporalConfig(K=0)
    with pytest.raises(ValueError):
        dg.TemporalConfig(alpha_window=0.0)
    with pytest.raises(ValueError):
        dg.TemporalConfig(beta_v=np.zeros((2, 2)))


def test_overlap_per_decile():
    ds = dg.gen_example1(dg.Example1Config(n=100_000, seed=0))
    edges = np.quantile(ds.x[:, 0], np.linspace(0, 1, 11))
    idx = np.clip(np.searchsorted(edges, ds.x[:, 0], side="right") - 1, 0, 9)
    for d in range(10):
        p = ds.t[idx == d].mean()
        assert 0 < p < 1
    ds = dg.gen_temporal(dg.TemporalConfig(n_samples=100_000, K=5, seed=0))
    score = ds.x @ dg.TemporalConfig(K=5).beta_t_assign
    edges = np.quantile(score, np.linspace(0, 1, 11))
    idx = np.clip(np.searchsorted(edges, score, side="right") - 1, 0, 9)
    for d in range(10):
        assert 0 < ds.t[idx == d].mean() < 1


# -- split / standardize / csv --------------------------------------------
def test_split_sizes_and_partition():
    assert [len(i) for i in dg.split_indices(10, dg.SplitSpec(seed=0))] == [6, 2, 2]


@given(st.integers(5, 400), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_split_is_partition(n, seed):
    parts = dg.split_indices(n, dg.SplitSpec(seed=seed))
    allidx = np.concatenate(parts)
    assert sorted(allidx.tolist()) == list(range(n))
    again = dg.split_indices(n, dg.SplitSpec(seed=seed))
    for a, b in zip(parts, again):
        np.testing.assert_array_equal(a, b)


def test_split_errors():
    with pytest.raises(ValueError):
        dg.SplitSpec(0.5, 0.2, 0.2)
    with pytest.raises(ValueError):
        dg.split_indices(2, dg.SplitSpec())


def _tiny(x, s=None, y=None):
    n = len(x)
    return dg.Dataset(np.asarray(x, float).reshape(n, -1), np.arange(n) % 2,
                      np.zeros((n, 1)) if s is None else s, np.arange(n, dtype=float) if y is None else y)


def test_standardize_examples():
    tr = _tiny([[1.0, 5.0], [3.0, 5.0]])
    tr_s, sc = dg.standardize(tr)
    np.testing.assert_allclose(tr_s.x[:, 0], [-1.0, 1.0])
    np.testing.assert_allclose(tr_s.x[:, 1], [5.0, 5.0])  # constant passes through
    np.testing.assert_allclose(sc.inverse_x(tr_s.x), tr.x, atol=1e-10)


def test_standardize_fits_on_train_only(rng):
    ds = dg.gen_example1(dg.Example1Config(n=1000, seed=0))
    tr, va, te = dg.split(ds)
    tr_s, va_s, te_s, sc = dg.standardize(tr, va, te)
    assert abs(tr_s.x.mean()) < 1e-12 and abs(tr_s.y.std() - 1) < 1e-12
    np.testing.assert_allclose(te_s.tau_true * sc.y_std, te.tau_true)
    np.testing.assert_allclose(sc.inverse_y(te_s.y), te.y, atol=1e-10)
    rt = dg.Scaler.from_dict(sc.to_dict())
    np.testing.assert_array_equal(rt.transform(te).x, te_s.x)


def test_csv_round_trip(tmp_path):
    ds = dg.gen_temporal(dg.TemporalConfig(n_samples=30, K=4, seed=1))
    p = tmp_path / "d.csv"
    dg.write_csv(ds, p)
    back = dg.load_csv(p)
    for name in ("x", "t", "s", "y", "y0_true", "y1_true", "tau_true"):
        np.testing.assert_allclose(getattr(back, name), getattr(ds, name), atol=1e-12)


def test_csv_minimal_and_errors(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x_0,t,s_0,y\n0.1,0,1.0,2.0\n0.2,1,1.5,2.5\n0.3,0,1.1,2.2\n")
    ds = dg.load_csv(p)
    assert len(ds) == 3 and ds.tau_true is None
    p.write_text("x_0,t,s_0,y\n0.1,0,1.0,2.0\n0.2,2,1.5,2.5\n")
    with pytest.raises(dg.CsvFormatError, match="line 3"):
        dg.load_csv(p)
    p.write_text("x_0,t,s_0,y\n0.1,0,abc,2.0\n")
    with pytest.raises(dg.CsvFormatError, match="s_0"):
        dg.load_csv(p)
    p.write_text("x_0,s_0,y\n0.1,1.0,2.0\n")
    with pytest.raises(dg.CsvFormatError, match="t"):
        dg.load_csv(p)


def test_dataset_validation():
    with pytest.raises(ValueError):
        dg.Dataset(np.zeros((3, 1)), np.array([0, 1, 2]), np.zeros((3, 1)), np.zeros(3))
    with pytest.raises(ValueError):
        dg.Dataset(np.zeros((3, 1)), np.array([0, 1]), np.zeros((3, 1)), np.zeros(3))
