import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_sim, wide_sim
from spinherald.analysis import (
    analytic_error_reliable,
    analyze,
    bootstrap_variance,
    cumulative_variance,
    decorrelate,
    estimator_mse_check,
    local_normalize,
    noise_scaling_fit,
    run_pipeline,
    variance_report,
    zi_variance_correction,
)
from spinherald.config import DriftModel, NoiseCoefficients
from spinherald.simulate import simulate_run, wiener_weights


def common_mode_data(n, sigma_s=1.0, sigma_n=1.0, sigma_c=10.0, seed=0):
    rng = np.random.default_rng(seed)
    c = sigma_c * rng.standard_normal(n)
    phi = sigma_s * rng.standard_normal(n) + c
    refs = sigma_n * rng.standard_normal((n, 12)) + c[:, None]
    return phi, refs


def test_wiener_optimum_common_mode():
    s, nn, c = 1.0, 1.0, 10.0
    phi_raw, refs = common_mode_data(100_000, s, nn, c)
    phi, w = decorrelate(phi_raw, refs)
    # equal weights w = c^2 / (n^2 + 12 c^2) by symmetry
    w_opt = c**2 / (nn**2 + 12 * c**2)
    optimum = s**2 + c**2 * (1 - 12 * w_opt) ** 2 + 12 * w_opt**2 * nn**2
    np.testing.assert_allclose(w.weights, w_opt, atol=5 * w.stderr.max())
    assert np.var(phi) == pytest.approx(optimum, rel=0.02)
    assert w.sum_sq == pytest.approx(float(np.sum(w.weights**2)), abs=1e-12)


def test_wiener_optimum_generator():
    cfg = make_sim(shots=100_000, p_click=0.0, drift=DriftModel(0.0, 2000.0, 200.0))
    data = simulate_run(cfg)
    phi, w = decorrelate(data.phi_raw, data.references)
    w_opt, residual = wiener_weights(cfg)
    assert np.var(phi) == pytest.approx(residual, rel=0.02)
    assert w.sum_sq == pytest.approx(float(w_opt @ w_opt), rel=0.1)


def test_independent_references_give_zero_weights():
    rng = np.random.default_rng(3)
    phi_raw = rng.standard_normal(50_000)
    refs = rng.standard_normal((50_000, 12))
    _, w = decorrelate(phi_raw, refs)
    assert np.all(np.abs(w.weights) < 3 * w.stderr)


def test_idempotence():
    phi_raw, refs = common_mode_data(20_000, seed=5)
    phi, _ = decorrelate(phi_raw, refs)
    _, again = decorrelate(phi, refs)
    assert np.all(np.abs(again.weights) < 3 * again.stderr)
    np.testing.assert_allclose(again.weights, 0.0, atol=1e-10)


@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.0, 20.0), n=st.integers(20, 400))
@settings(max_examples=50, deadline=None)
def test_variance_reduction_property(seed, scale, n):
    rng = np.random.default_rng(seed)
    c = scale * rng.standard_normal(n)
    phi_raw = rng.standard_normal(n) + c
    refs = rng.standard_normal((n, 12)) + c[:, None] * rng.uniform(0, 1, 12)
    phi, _ = decorrelate(phi_raw, refs)
    assert np.var(phi) <= np.var(phi_raw) * (1 + 1e-12)


def test_singular_references_fall_back_to_min_norm():
    phi_raw, refs = common_mode_data(2000, seed=1)
    refs[:, 1] = refs[:, 0]
    with pytest.warns(RuntimeWarning, match="singular"):
        _, w = decorrelate(phi_raw, refs)
    assert w.rank_deficient
    assert w.weights[0] == pytest.approx(w.weights[1])


def test_decorrelate_rejects_bad_shapes():
    with pytest.raises(ValueError):
        decorrelate(np.zeros(10), np.zeros((9, 12)))
    with pytest.raises(ValueError):
        decorrelate(np.zeros(10), np.zeros((10, 12)))


def test_local_normalize_iid():
    rng = np.random.default_rng(0)
    series = local_normalize(rng.standard_normal(200_000), 200)
    z = series.z_values[series.valid]
    assert np.mean(z**2) == pytest.approx(zi_variance_correction(200), abs=0.01)
    assert np.all(series.y_values[series.valid] > 0)
    assert len(series.z_values) == len(series.y_values) == 200_000


def test_local_normalize_edges_are_truncated():
    series = local_normalize(np.random.default_rng(1).standard_normal(1000), 200)
    assert not series.valid[:100].any()
    assert not series.valid[-100:].any()
    assert series.valid[100:900].all()


def test_local_normalize_window_is_centered():
    phi = np.random.default_rng(2).standard_normal(600)
    series = local_normalize(phi, 10)
    i = 300
    assert series.y_values[i] == pytest.approx(np.var(phi[i - 5 : i + 6], ddof=1))


def test_local_normalize_constant_series_is_invalid():
    series = local_normalize(np.full(500, 3.0), 50)
    assert not series.valid.any()


def test_local_normalize_variance_step():
    rng = np.random.default_rng(4)
    n, m = 80_000, 200
    sd = np.where(np.arange(n) < n // 2, 1.0, 2.0)
    series = local_normalize(sd * rng.standard_normal(n), m)
    z = series.z_values
    far = np.abs(np.arange(n) - n // 2) > m // 2
    keep = far & series.valid
    assert np.var(z[keep]) == pytest.approx(zi_variance_correction(m), abs=0.02)
    # left of the step, points within M/2 see larger neighbours and shrink
    near_left = (np.arange(n) >= n // 2 - m // 2) & (np.arange(n) < n // 2)
    assert np.var(z[near_left]) < 0.9


def test_local_normalize_rejects_bad_windows():
    with pytest.raises(ValueError):
        local_normalize(np.zeros(100), 3)
    with pytest.raises(ValueError, match="longer than M"):
        local_normalize(np.zeros(100), 200)


def test_variance_report_three_points():
    rep = variance_report(np.array([-1.0, 0.0, 1.0]))
    assert rep.w == pytest.approx(1.0)
    assert rep.uncertainty == pytest.approx(1.0)
    assert rep.sample_count == 3 and rep.method == "analytic"
    with pytest.raises(ValueError):
        variance_report(np.array([1.0]))


def test_variance_report_selection_and_nan():
    z = np.array([np.nan, 1.0, -1.0, 5.0, 0.0])
    sel = np.array([True, True, True, False, True])
    rep = variance_report(z, sel)
    assert rep.sample_count == 3
    assert rep.uncertainty == pytest.approx(math.sqrt(2 / 2) * rep.w)


def test_estimator_mse_check():
    assert estimator_mse_check(200) == pytest.approx(0.1003, abs=5e-5)
    assert estimator_mse_check(3) == 1.0
    assert estimator_mse_check(10**12) < 1e-5
    with pytest.raises(ValueError):
        estimator_mse_check(1)


def test_zi_variance_correction():
    assert zi_variance_correction(200) == pytest.approx(1.00249, abs=5e-6)
    assert zi_variance_correction(1) == pytest.approx(1.25)
    assert zi_variance_correction(10**9) == pytest.approx(1.0, abs=1e-9)


def test_bootstrap_matches_analytic_iid():
    for seed in range(5):
        z = np.random.default_rng(seed).standard_normal(1000)
        boot = bootstrap_variance(z, resamples=1000, seed=seed)
        ana = variance_report(z)
        assert boot.method == "bootstrap"
        assert boot.w == ana.w
        assert boot.uncertainty == pytest.approx(ana.uncertainty, rel=0.15)
        assert boot.ci_low < ana.w < boot.ci_high


def test_bootstrap_constant_set():
    boot = bootstrap_variance(np.full(50, 2.0), resamples=200)
    assert boot.uncertainty == 0.0
    assert boot.w == 0.0


def test_bootstrap_is_deterministic_and_chunk_independent():
    z = np.random.default_rng(9).standard_normal(700)
    a = bootstrap_variance(z, resamples=500, seed=4)
    b = bootstrap_variance(z, resamples=500, seed=4, chunk_elems=7000)
    assert a.uncertainty == b.uncertainty
    with pytest.raises(ValueError):
        bootstrap_variance(z, resamples=50)


def test_analytic_reliability_rule():
    sel = np.zeros(10_000, dtype=bool)
    sel[::500] = True
    assert analytic_error_reliable(sel, 200)
    dense = np.zeros(10_000, dtype=bool)
    dense[:300] = True
    assert not analytic_error_reliable(dense, 200)
    assert analytic_error_reliable(np.ones(10_000, dtype=bool), 200)


def test_cumulative_variance():
    z = np.random.default_rng(0).standard_normal(500)
    n, v = cumulative_variance(z)
    assert n[0] == 10
    assert v[-1] == pytest.approx(np.var(z, ddof=1))
    assert v[0] == pytest.approx(np.var(z[:10], ddof=1))


def test_noise_scaling_recovers_coefficients():
    cfg = wide_sim()
    data = simulate_run(cfg)
    fit = noise_scaling_fit(data.n_atoms, data.phi_raw, 8)
    truth = np.array([cfg.noise.c_const, cfg.noise.c_lin, cfg.noise.c_quad])
    np.testing.assert_allclose(fit.coefficients, truth, rtol=0.05)
    assert not fit.projected
    assert fit.r2 > 0.99
    assert len(fit.bins["variance"]) == 8


def test_noise_scaling_pure_shot_noise():
    cfg = wide_sim(noise=NoiseCoefficients(1e4, 0.0, 0.0))
    data = simulate_run(cfg)
    fit = noise_scaling_fit(data.n_atoms, data.phi_raw, 8)
    assert abs(fit.c_lin) <= 2 * fit.stderr[1]
    assert abs(fit.c_quad) <= 2 * fit.stderr[2]
    assert fit.c_const == pytest.approx(1e4, rel=0.05)


def test_noise_scaling_projection_flag():
    rng = np.random.default_rng(0)
    n_atoms = np.repeat([1e3, 1e4, 1e5, 1e6], 5000)
    # concave variance: the unconstrained quadratic term is negative
    sd = np.sqrt(1e4 + 2.0 * n_atoms - 1e-6 * n_atoms**2 + 1e6)
    fit = noise_scaling_fit(n_atoms, sd * rng.standard_normal(len(n_atoms)))
    assert fit.projected
    assert min(fit.coefficients) >= 0


def test_noise_scaling_needs_four_bins():
    with pytest.raises(ValueError, match="at least 4"):
        noise_scaling_fit(np.repeat([1.0, 2.0, 3.0], 100), np.random.default_rng(0).standard_normal(300))


def test_noise_scaling_reports_ill_conditioning():
    data = simulate_run(wide_sim(shots=20_000))
    with pytest.warns(RuntimeWarning, match="ill-conditioned"):
        fit = noise_scaling_fit(data.n_atoms, data.phi_raw, 8, max_condition=10.0)
    assert fit.ill_conditioned


def test_fractions_sum_to_one():
    fit = noise_scaling_fit(*_wide_pair())
    f = fit.fractions(3e5)
    assert sum(f.values()) == pytest.approx(1.0)


def _wide_pair():
    data = simulate_run(wide_sim(shots=30_000))
    return data.n_atoms, data.phi_raw


def test_default_noise_proportions(default_cfg):
    data = simulate_run(replace(default_cfg.sim, drift=replace(default_cfg.sim.drift, log_variance_step=0.0)))
    phi, w = decorrelate(data.phi_raw, data.references)
    quiet = ~data.click
    own = default_cfg.sim.noise.c_lin * np.mean(data.n_atoms[quiet])
    share = own / np.var(phi[quiet])
    assert share == pytest.approx(0.50, abs=0.02)
    assert w.sum_sq == pytest.approx(0.09, abs=0.01)
    # projection noise reaching phi, own shot plus the references
    assert share * (1 + w.sum_sq) == pytest.approx(0.50 + 0.09 * 0.50, abs=0.025)


def test_default_proportions_from_scaling_fit(default_cfg):
    # the same coefficients on a wide atom-number grid; fit fractions at the analysis atom number
    noise = default_cfg.sim.noise
    cfg = wide_sim(noise=noise, atom_number=replace(wide_sim().atom_number, mean=3e5, multipliers=(0.01, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0)))
    data = simulate_run(cfg)
    fit = noise_scaling_fit(data.n_atoms, data.phi_raw, 8)
    n = default_cfg.sim.atom_number.mean_n()
    truth = noise.c_lin * n / noise.variance(n)
    assert fit.fractions(n)["linear"] == pytest.approx(truth, abs=0.02)


def test_normalization_sanity_stationary():
    for seed in (1, 2):
        cfg = make_sim(shots=20_000, seed=seed, drift=DriftModel(0.0, 2000.0, 200.0))
        rep = analyze(simulate_run(cfg), resamples=200)
        assert 0.98 <= rep["var_noclick"]["value"] <= 1.03


def test_selection_independence():
    cfg = make_sim(shots=30_000, drift=DriftModel(0.002, 2000.0, 200.0))
    data = simulate_run(cfg)
    base = run_pipeline(data, 200, 200, 0).report["var_click"]
    m = 200
    near = np.zeros(len(data), dtype=bool)
    for i in np.flatnonzero(data.click):
        near[max(0, i - m // 2) : i + m // 2 + 1] = True
    free = np.flatnonzero(~near)
    perm = np.arange(len(data))
    perm[free] = np.random.default_rng(0).permutation(free)
    shuffled = replace(
        data,
        phi_raw=data.phi_raw[perm],
        references=data.references[perm],
        click=data.click[perm],
        excitation_present=data.excitation_present[perm],
        n_atoms=data.n_atoms[perm],
    )
    again = run_pipeline(shuffled, 200, 200, 0).report["var_click"]
    assert again["L"] == base["L"]
    assert again["value"] == pytest.approx(base["value"], rel=1e-9)


def test_analyze_report_keys(default_cfg):
    data = simulate_run(replace(default_cfg.sim, shots=20_000))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = analyze(data, resamples=200)
    for key in (
        "counts", "weights", "weights_stderr", "sum_sq", "var_noclick", "var_click",
        "bootstrap", "scaling_fit", "analytic_error_reliable", "preferred_method",
    ):
        assert key in rep
    assert len(rep["weights"]) == 12
    assert set(rep["var_click"]) >= {"value", "err", "L", "method"}
    assert rep["bootstrap"]["click"]["method"] == "bootstrap"
    assert rep["counts"]["click"] + rep["counts"]["no_click"] == rep["counts"]["valid"]
    assert rep["preferred_method"]["click"] in ("analytic", "bootstrap")


def test_analyze_rejects_short_series():
    data = simulate_run(make_sim(shots=150))
    with pytest.raises(ValueError, match="window"):
        analyze(data, window=200)


def test_two_sigma_band_coverage():
    # click sets drawn with variance 1.20: exact coverage of |W - 1.2| <= 2 dW is 95.3 % at L = 670
    rng = np.random.default_rng(670)
    L, sets, hits = 670, 50_000, 0
    for chunk in range(10):
        z = np.sqrt(1.2) * rng.standard_normal((sets // 10, L))
        for row in z:
            rep = variance_report(row)
            hits += abs(rep.w - 1.2) <= 2 * rep.uncertainty
    assert hits / sets >= 0.95


def test_bootstrap_ci_on_default_run(default_cfg):
    a = default_cfg.analysis
    rep = run_pipeline(simulate_run(default_cfg.sim), a.window, a.bootstrap_resamples, a.bootstrap_seed).report
    lo, hi = rep["bootstrap"]["click"]["ci95"]
    assert lo < 1.20 < hi
    assert rep["preferred_method"]["click"] == "bootstrap"
