import math

import numpy as np
import pytest

from sevi.exceptions import ComputationError, ValidationError
from sevi.geodata import PERIODS
from sevi.gwr import (GwrDesign, adaptive_bandwidths, adjusted_r2, aicc,
                      coef_summary, fit_local, kernel_weight, r2_trajectory,
                      select_bandwidth, time_sliced)
from sevi.report import mean_adjusted_r2

TABLE_A1_BASELINE = (0.5729, 0.7089, 0.6800, 0.6629, 0.5974, 0.6985, 0.6821, 0.6644)


def _linear_design(rng, n=200, k=3, noise=0.0, extent=2000.0, kernel="gaussian"):
    coords = rng.uniform(0, extent, (n, 2))
    predictors = rng.normal(size=(n, k))
    beta = np.arange(1, k + 2, dtype=float)  # intercept 1, slopes 2..k+1
    y = beta[0] + predictors @ beta[1:] + (rng.normal(0, noise, n) if noise else 0.0)
    design = GwrDesign.build(coords, predictors, y, kernel=kernel)
    return design, beta


def _two_regime(rng, n_per_side=150, gap=50000.0, noise=0.01):
    """Left cluster slope 1, right cluster slope 3, far apart."""
    coords_l = rng.uniform(0, 2000, (n_per_side, 2))
    coords_r = rng.uniform(0, 2000, (n_per_side, 2)) + np.array([gap, 0.0])
    x = rng.uniform(0, 1, 2 * n_per_side)
    y = np.concatenate([
        0.5 + 1.0 * x[:n_per_side],
        0.5 + 3.0 * x[n_per_side:],
    ]) + rng.normal(0, noise, 2 * n_per_side)
    coords = np.vstack([coords_l, coords_r])
    return GwrDesign.build(coords, x[:, None], y, predictor_names=["x"]), gap


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def test_kernel_weight_at_zero():
    assert kernel_weight(0.0, 100.0, "gaussian") == 1.0
    assert kernel_weight(0.0, 100.0, "bisquare") == 1.0


def test_bisquare_vanishes_at_bandwidth():
    assert kernel_weight(100.0, 100.0, "bisquare") == 0.0
    assert kernel_weight(99.0, 100.0, "bisquare") > 0.0


def test_gaussian_at_bandwidth():
    assert kernel_weight(100.0, 100.0, "gaussian") == pytest.approx(math.exp(-0.5), abs=1e-15)


def test_kernel_weight_validation():
    with pytest.raises(ValidationError):
        kernel_weight(-1.0, 100.0)
    with pytest.raises(ValidationError):
        kernel_weight(1.0, 0.0)


# ---------------------------------------------------------------------------
# design validation
# ---------------------------------------------------------------------------

def test_design_rejects_constant_predictor(rng):
    coords = rng.uniform(0, 100, (20, 2))
    predictors = np.column_stack([np.ones(20), rng.normal(size=20)])
    with pytest.raises(ValidationError, match="constant"):
        GwrDesign.build(coords, predictors, rng.normal(size=20))


def test_design_rejects_too_few_rows(rng):
    coords = rng.uniform(0, 100, (5, 2))
    predictors = rng.normal(size=(5, 3))
    with pytest.raises(ValidationError, match="n > k\\+2"):
        GwrDesign.build(coords, predictors, rng.normal(size=5))


# ---------------------------------------------------------------------------
# local fits
# ---------------------------------------------------------------------------

def test_exact_fit_recovery(rng):
    design, beta = _linear_design(rng, n=120, k=3, noise=0.0)
    fit = fit_local(design, 500.0)
    assert fit.rss < 1e-16 * fit.tss
    assert np.allclose(fit.beta, beta, atol=1e-6)
    assert fit.adjusted_r2 == pytest.approx(1.0, abs=1e-9)


def test_ols_limit_matches_global_regression(rng):
    design, _ = _linear_design(rng, n=300, k=4, noise=0.5)
    _, diameter = design.pairwise_extent()
    fit = fit_local(design, 1e3 * diameter)
    beta_ols, *_ = np.linalg.lstsq(design.X, design.y, rcond=None)
    rel = np.max(np.abs(fit.beta - beta_ols)) / np.max(np.abs(beta_ols))
    assert rel < 1e-6


def test_two_regime_recovery(rng):
    design, gap = _two_regime(rng)
    bw = select_bandwidth(design)
    assert bw < gap
    fit = fit_local(design, bw)
    slopes = fit.beta[:, 1]
    n = len(slopes) // 2
    assert np.abs(slopes[:n] - 1.0).max() < 0.05 * 1.0
    assert np.abs(slopes[n:] - 3.0).max() < 0.05 * 3.0


def test_singular_local_system_flagged_not_fatal(rng):
    # duplicated predictor makes every local system rank-deficient: the ridge
    # fallback must kick in and flag each location
    coords = rng.uniform(0, 100, (30, 2))
    x = rng.normal(size=30)
    predictors = np.column_stack([x, x + 0.0])
    jitter = predictors + rng.normal(0, 1e-13, predictors.shape)
    design = GwrDesign.build(coords, jitter, rng.normal(size=30))
    fit = fit_local(design, 50.0)
    assert fit.n_ridged == 30


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def test_adjusted_r2_perfect_fit(rng):
    design, _ = _linear_design(rng, n=100, k=2, noise=0.0)
    fit = fit_local(design, 800.0)
    assert adjusted_r2(fit, design.n) == pytest.approx(1.0, abs=1e-9)


def test_adjusted_r2_uninformative_predictors(rng):
    coords = rng.uniform(0, 100, (200, 2))
    predictors = rng.normal(size=(200, 2))
    y = rng.normal(size=200)  # unrelated response
    design = GwrDesign.build(coords, predictors, y)
    _, diameter = design.pairwise_extent()
    fit = fit_local(design, 100.0 * diameter)
    assert abs(fit.adjusted_r2) < 0.1


def test_table_baseline_mean_matches_reported_average():
    mean = mean_adjusted_r2(TABLE_A1_BASELINE)
    assert mean == pytest.approx(0.6583875, abs=1e-12)
    assert round(mean, 3) == 0.658
    assert round(mean, 2) == 0.66


def test_hat_trace_bounds(rng):
    design, _ = _linear_design(rng, n=150, k=3, noise=0.3)
    for bw in (200.0, 500.0, 2000.0):
        fit = fit_local(design, bw)
        assert design.n_params - 1e-6 <= fit.trace_s < design.n
        assert fit.trace_sts > 0


def test_rss_monotone_in_bandwidth(rng):
    design, _ = _linear_design(rng, n=150, k=3, noise=0.5)
    rss = [fit_local(design, bw).rss for bw in (100.0, 200.0, 400.0, 800.0, 1600.0)]
    assert all(rss[i] <= rss[i + 1] + 1e-9 * design.n for i in range(len(rss) - 1))


def test_row_permutation_invariance(rng):
    design, _ = _linear_design(rng, n=80, k=2, noise=0.4)
    perm = rng.permutation(design.n)
    permuted = GwrDesign.build(design.coords[perm], design.X[perm, 1:], design.y[perm])
    fit = fit_local(design, 600.0)
    fit_p = fit_local(permuted, 600.0)
    assert np.allclose(fit_p.beta, fit.beta[perm], rtol=1e-8, atol=1e-10)
    assert fit_p.rss == pytest.approx(fit.rss, rel=1e-10)
    assert fit_p.trace_s == pytest.approx(fit.trace_s, rel=1e-10)


def test_adaptive_bisquare_well_posed(rng):
    coords = rng.uniform(0, 1000, (100, 2))
    predictors = rng.normal(size=(100, 2))
    y = rng.normal(size=100)
    design = GwrDesign.build(coords, predictors, y, kernel="bisquare")
    fit = fit_local(design, ("adaptive", design.n_params + 1))
    assert set(np.unique(fit.flags)) <= {0, 1}


def test_adaptive_bandwidths_are_mth_neighbor(rng):
    coords = rng.uniform(0, 100, (40, 2))
    bw = adaptive_bandwidths(coords, 5)
    d = np.hypot(coords[:, 0][:, None] - coords[:, 0][None, :],
                 coords[:, 1][:, None] - coords[:, 1][None, :])
    for i in range(40):
        assert bw[i] == pytest.approx(np.sort(d[i])[5], abs=1e-12)


# ---------------------------------------------------------------------------
# bandwidth selection
# ---------------------------------------------------------------------------

def test_selection_hits_upper_boundary_for_global_truth(rng):
    design, _ = _linear_design(rng, n=120, k=2, noise=0.5)
    with pytest.warns(UserWarning, match="boundary"):
        bw = select_bandwidth(design)
    _, diameter = design.pairwise_extent()
    assert bw == pytest.approx(diameter)


def test_selection_deterministic(rng):
    design, gap = _two_regime(rng, n_per_side=80)
    assert select_bandwidth(design) == select_bandwidth(design)


# ---------------------------------------------------------------------------
# time slicing
# ---------------------------------------------------------------------------

def _period_designs(rng, strengths, n=160, noise_by_period=None):
    coords = rng.uniform(0, 3000, (n, 2))
    predictors = rng.normal(size=(n, 2))
    base_signal = predictors @ np.array([2.0, -1.0])
    designs = {}
    for period in PERIODS:
        s = strengths[period]
        noise = (noise_by_period or {}).get(period, 1.0)
        y = 10.0 + s * base_signal + rng.normal(0, noise, n)
        designs[period] = GwrDesign.build(coords, predictors, y)
    return designs


def test_time_sliced_identical_response(rng):
    coords = rng.uniform(0, 3000, (100, 2))
    predictors = rng.normal(size=(100, 2))
    y = predictors @ np.array([1.0, 2.0]) + rng.normal(0, 0.3, 100)
    designs = {p: GwrDesign.build(coords, predictors, y) for p in PERIODS}
    fits = time_sliced(designs, bandwidth=1500.0)
    r2 = [fits[p].adjusted_r2 for p in PERIODS]
    assert np.allclose(r2, r2[0], atol=1e-12)


def test_time_sliced_missing_period(rng):
    coords = rng.uniform(0, 3000, (50, 2))
    predictors = rng.normal(size=(50, 2))
    designs = {p: GwrDesign.build(coords, predictors, rng.normal(size=50))
               for p in PERIODS if p != "we_nt"}
    with pytest.raises(ValidationError, match="we_nt"):
        time_sliced(designs, bandwidth=1000.0)


def test_time_sliced_tidal_pattern(rng):
    strengths = {"wd_am": 0.2, "wd_md": 3.0, "wd_pm": 2.5, "wd_nt": 1.5,
                 "we_am": 0.3, "we_md": 2.8, "we_pm": 2.4, "we_nt": 1.8}
    designs = _period_designs(rng, strengths)
    fits = time_sliced(designs, bandwidth=2000.0)
    assert fits["wd_md"].adjusted_r2 > fits["wd_am"].adjusted_r2
    trajectory = r2_trajectory(fits)
    assert [p for p, _ in trajectory] == list(PERIODS)


# ---------------------------------------------------------------------------
# coefficient summaries
# ---------------------------------------------------------------------------

def test_coef_summary_constant_coefficients(rng):
    design, beta = _linear_design(rng, n=100, k=2, noise=0.0)
    fits = {p: fit_local(design, 1000.0) for p in PERIODS}
    summaries = coef_summary(fits, "x1")
    for cs in summaries:
        assert cs.q1 == pytest.approx(cs.q3, abs=1e-6)
        assert cs.outliers == []
        assert cs.q1 <= cs.median <= cs.q3


def test_coef_summary_symmetric_distribution(rng):
    design, _ = _linear_design(rng, n=200, k=2, noise=1.0)
    fit = fit_local(design, 300.0)
    fits = {p: fit for p in PERIODS}
    cs = coef_summary(fits, "x1")[0]
    values = fit.beta[:, 1]
    assert cs.median == pytest.approx(np.median(values), abs=1e-12)
    assert cs.whisker_lo >= values.min() - 1e-12
    assert cs.whisker_hi <= values.max() + 1e-12


def test_coef_summary_planted_night_outliers(rng):
    coords = rng.uniform(0, 3000, (150, 2))
    predictors = rng.normal(size=(150, 2))
    quiet = GwrDesign.build(coords, predictors,
                            predictors @ np.array([1.0, 0.5]) + rng.normal(0, 0.05, 150))
    # night response flips sign in a far-away pocket of the city
    pocket = coords[:, 0] > np.quantile(coords[:, 0], 0.9)
    y_night = predictors @ np.array([1.0, 0.5]) + rng.normal(0, 0.05, 150)
    y_night[pocket] -= 6.0 * predictors[pocket, 0]
    night = GwrDesign.build(coords, predictors, y_night)
    designs = {p: (night if p.endswith("_nt") else quiet) for p in PERIODS}
    fits = time_sliced(designs, bandwidth=400.0)
    summaries = {cs.period: cs for cs in coef_summary(fits, "x1")}
    assert len(summaries["wd_nt"].outliers) > len(summaries["wd_am"].outliers)


def test_coef_summary_unknown_variable(rng):
    design, _ = _linear_design(rng, n=60, k=2)
    fits = {p: fit_local(design, 500.0) for p in PERIODS}
    with pytest.raises(ValidationError):
        coef_summary(fits, "nope")


def test_aicc_guard_small_denominator(rng):
    design, _ = _linear_design(rng, n=60, k=2, noise=0.2)
    fit = fit_local(design, 300.0)
    assert math.isfinite(fit.aicc)
    fit.trace_s = design.n  # force the degenerate branch
    assert aicc(fit, design.n) == math.inf


def test_adjusted_r2_rejects_overparameterized(rng):
    design, _ = _linear_design(rng, n=60, k=2, noise=0.2)
    fit = fit_local(design, 300.0)
    fit.trace_s = design.n  # p_eff >= n
    fit.trace_sts = 0.0
    with pytest.raises(ComputationError):
        adjusted_r2(fit, design.n)
