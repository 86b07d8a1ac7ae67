import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from platecvae.cvae import Cvae, conv_cvae_config
from platecvae.dataset import MinMaxScaler
from platecvae.sampling import DistributionSpec, sample_lhs
from platecvae.evaluator import (
    FieldStats, error_mc, evaluate, field_stats, kde_pdf, nearest_pixel, normalized_errors,
    predicted_stats, probe_pdfs, summarize, write_report,
)


def _model(seed=0):
    cfg = conv_cvae_config((6, 6), (4,), (3, 3), ((2, 2),), None, (8,), 2, 1)
    m = Cvae(cfg, seed=seed, dtype=np.float64)
    m.scaler = MinMaxScaler([-1.0], [1.0], [7.0], [10.0])
    return m


def _z_blind(model):
    """Zero the decoder's latent inputs so only the condition matters."""
    model.decoder.layers[0].params["weight"][:, :model.config.latent_dim] = 0.0
    return model


def test_field_stats_examples():
    a = np.random.default_rng(0).standard_normal((4, 5))
    s = field_stats([a])
    np.testing.assert_array_equal(s.mean, a)
    assert np.all(s.std == 0)
    b = a + 3.0
    s2 = field_stats([a, b])
    np.testing.assert_allclose(s2.std, np.abs(a - b) / 2)
    assert np.all(field_stats([a, a, a]).std == 0)
    with pytest.raises(ValueError):
        field_stats(np.zeros((0, 3, 3)))


@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(-1e3, 1e3)))
@settings(max_examples=60)
def test_field_stats_two_pass_oracle(f):
    s = field_stats(f)
    n = f.shape[0]
    mean = sum(f[i] for i in range(n)) / n
    var = sum((f[i] - mean) ** 2 for i in range(n)) / n
    np.testing.assert_allclose(s.mean, mean, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(s.std, np.sqrt(var), rtol=1e-10, atol=1e-9)
    assert np.all(s.std >= 0)


def test_normalized_errors_examples():
    rng = np.random.default_rng(1)
    ex = FieldStats(rng.standard_normal((5, 5)), rng.uniform(0.1, 1, (5, 5)))
    assert normalized_errors(ex, ex).e_mu == 0 and normalized_errors(ex, ex).e_sigma == 0
    zero = FieldStats(np.zeros((5, 5)), np.zeros((5, 5)))
    e = normalized_errors(ex, zero)
    assert e.e_mu == pytest.approx(1.0) and e.e_sigma == pytest.approx(1.0)
    d = 0.07
    assert normalized_errors(ex, FieldStats((1 + d) * ex.mean, ex.std)).e_mu == pytest.approx(d)
    with pytest.raises(ZeroDivisionError):
        normalized_errors(zero, ex)
    with pytest.raises(ValueError):
        normalized_errors(ex, FieldStats(np.zeros((4, 5)), np.zeros((4, 5))))


@given(st.floats(1e-3, 1e3))
def test_normalized_errors_homogeneous(c):
    rng = np.random.default_rng(2)
    ex = FieldStats(rng.standard_normal((4, 4)), rng.uniform(0.1, 1, (4, 4)))
    pr = FieldStats(rng.standard_normal((4, 4)), rng.uniform(0.1, 1, (4, 4)))
    a = normalized_errors(ex, pr)
    b = normalized_errors(FieldStats(c * ex.mean, c * ex.std), FieldStats(c * pr.mean, c * pr.std))
    assert b.e_mu == pytest.approx(a.e_mu, rel=1e-12)
    assert b.e_sigma == pytest.approx(a.e_sigma, rel=1e-12)


def test_predicted_stats_shapes_and_seed():
    m = _model()
    t = np.linspace(7, 10, 9)[:, None]
    a = predicted_stats(m, t, seed=3)
    assert a.mean.shape == (6, 6)
    b = predicted_stats(m, t, seed=3)
    np.testing.assert_array_equal(a.mean, b.mean)
    m.scaler = None
    with pytest.raises(RuntimeError):
        predicted_stats(m, t, seed=3)


def test_z_blind_model_std_is_condition_spread():
    m = _z_blind(_model())
    t = np.linspace(7, 10, 9)[:, None]
    s = predicted_stats(m, t, seed=0)
    per_condition = m.generate(t, np.zeros((9, 2)))
    np.testing.assert_allclose(s.std, field_stats(per_condition).std, rtol=1e-12, atol=1e-15)


def test_error_mc():
    m = _model()
    rng = np.random.default_rng(4)
    t = rng.uniform(7, 10, (12, 1))
    fields = rng.uniform(-0.5, 0.5, (12, 6, 6))
    errs = error_mc(m, fields, t, 20, seed=1)
    assert len(errs) == 20
    vals = np.array([[e.e_mu, e.e_sigma] for e in errs])
    assert np.all(np.isfinite(vals)) and np.all(vals >= 0)
    assert vals[:, 0].std() > 0
    again = error_mc(m, fields, t, 20, seed=1)
    assert [e.e_mu for e in again] == [e.e_mu for e in errs]
    # repetitions are individually reproducible
    assert error_mc(m, fields, t, 3, seed=1)[2].e_mu == errs[2].e_mu
    with pytest.raises(ValueError):
        error_mc(m, fields, t, 0)


def test_error_mc_z_blind_has_zero_spread():
    m = _z_blind(_model())
    rng = np.random.default_rng(5)
    t = rng.uniform(7, 10, (10, 1))
    fields = rng.uniform(-0.5, 0.5, (10, 6, 6))
    vals = np.array([[e.e_mu, e.e_sigma] for e in error_mc(m, fields, t, 15, seed=0)])
    assert np.ptp(vals[:, 0]) == 0 and np.ptp(vals[:, 1]) == 0


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=200))
@settings(max_examples=80, deadline=None)
def test_kde_integrates_to_one(samples):
    k = kde_pdf(samples)
    assert np.trapezoid(k.density, k.grid) == pytest.approx(1.0, abs=1e-3)
    assert np.all(k.density >= 0)


def test_kde_symmetry_and_normal_density():
    k = kde_pdf([-1.0, 1.0], n_grid=401)
    np.testing.assert_allclose(k.density, k.density[::-1], rtol=1e-12)
    # stratified draws keep the sampling noise of the estimate well below 5 %
    x = sample_lhs([DistributionSpec("normal", 0.0, 1.0)], 10_000, 0)[:, 0]
    k = kde_pdf(x, grid=np.array([0.0]))
    assert k.density[0] == pytest.approx(1 / np.sqrt(2 * np.pi), rel=0.05)
    assert kde_pdf(x, bandwidth=0.3).bandwidth == 0.3
    with pytest.raises(ValueError):
        kde_pdf([1.0])


def test_kde_degenerate_fallback():
    k = kde_pdf([2.5] * 10)
    assert k.bandwidth > 0
    assert np.trapezoid(k.density, k.grid) == pytest.approx(1.0, abs=1e-3)
    assert k.grid[np.argmax(k.density)] == pytest.approx(2.5, abs=k.bandwidth)


def test_nearest_pixel():
    # element centres of a 1 m plate with 4 elements lie at -0.375, -0.125, 0.125, 0.375
    assert nearest_pixel((-0.375, 0.125), 1.0, 1.0, (4, 4)) == (0, 2)
    assert nearest_pixel((0.5, 0.5), 1.0, 1.0, (4, 4)) == (3, 3)
    with pytest.raises(ValueError):
        nearest_pixel((0.6, 0.0), 1.0, 1.0, (4, 4))


def test_probe_pdfs_pairs():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((50, 4, 4)), rng.standard_normal((50, 4, 4))
    out = probe_pdfs(a, b, [(0.0, 0.0), (0.375, -0.375)], 1.0, 1.0)
    assert len(out) == 2 and out[1].pixel == (3, 0)
    assert out[0].exact.shape == out[0].predicted.shape == out[0].grid.shape


def test_evaluate_and_write_report(tmp_path):
    m = _model()
    rng = np.random.default_rng(6)
    t = rng.uniform(7, 10, (12, 1))
    fields = rng.uniform(-0.5, 0.5, (12, 6, 6))
    rep = evaluate(m, fields, t, 5, 2, probes=[(0.0, 0.0)])
    d1 = write_report(rep, tmp_path / "a")
    rep2 = evaluate(m, fields, t, 5, 2, probes=[(0.0, 0.0)])
    d2 = write_report(rep2, tmp_path / "b")
    for name in ("fields.csv", "errors.csv", "error_kde.csv", "probes.csv"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()
    assert len((d1 / "errors.csv").read_text().splitlines()) == 6
    assert len((d1 / "fields.csv").read_text().splitlines()) == 1 + 36
    summary = (d1 / "summary.txt").read_text()
    assert "e_mu: median=" in summary and "iqr=" in summary
    s = summarize(rep.errors)
    assert s["e_mu"]["median"] == pytest.approx(np.median(rep.e_mu()))
