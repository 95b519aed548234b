import math

import numpy as np
import pytest

from sevi.exceptions import ValidationError
from sevi.indicators import INDICATOR_NAMES
from sevi.scoring import (WeightMatrix, align_and_normalize, alternative_indices,
                          block_aggregate, compute_weight_matrix, entropy_weights,
                          first_component_scores, topsis)
from sevi.stats import spearman

CR = INDICATOR_NAMES.index("cr")


def _raw(n, rng=None, fill=None):
    if fill is not None:
        return np.full((n, 9), float(fill))
    return rng.uniform(0, 5, (n, 9))


# ---------------------------------------------------------------------------
# alignment and normalization
# ---------------------------------------------------------------------------

def test_minmax_column():
    raw = np.tile([[1.0]], (3, 9))
    raw[:, 0] = [0.0, 5.0, 10.0]
    nm = align_and_normalize(raw)
    assert np.allclose(nm.values[:, 0], [0.0, 0.5, 1.0])


def test_closure_column_is_benefit_aligned():
    raw = np.zeros((2, 9))
    raw[:, CR] = [0.2, 0.8]
    nm = align_and_normalize(raw)
    # 1 - cr gives (0.8, 0.2); scaled to (1, 0)
    assert np.allclose(nm.values[:, CR], [1.0, 0.0])
    meta = nm.columns[CR]
    assert meta.aligned
    assert meta.raw_min == pytest.approx(0.2)
    assert meta.raw_max == pytest.approx(0.8)


def test_constant_column_maps_to_half():
    raw = np.zeros((3, 9))
    raw[:, 3] = 7.0
    nm = align_and_normalize(raw)
    assert np.all(nm.values[:, 3] == 0.5)
    assert nm.columns[3].constant


def test_non_finite_value_named():
    raw = np.zeros((3, 9))
    raw[1, 4] = math.nan
    with pytest.raises(ValidationError) as err:
        align_and_normalize(raw, segment_ids=["a", "b", "c"])
    assert "'b'" in str(err.value)
    assert "'md'" in str(err.value)


def test_needs_two_segments():
    with pytest.raises(ValidationError):
        align_and_normalize(np.zeros((1, 9)))


def test_values_in_unit_interval(rng):
    nm = align_and_normalize(_raw(40, rng))
    assert nm.values.min() >= 0.0
    assert nm.values.max() <= 1.0


# ---------------------------------------------------------------------------
# entropy weights
# ---------------------------------------------------------------------------

def test_constant_column_gets_zero_weight():
    block = np.column_stack([np.full(10, 0.5), np.linspace(0, 1, 10)])
    w = entropy_weights(block)
    assert w[0] == 0.0
    assert w[1] == 1.0


def test_row_reversed_columns_share_weight():
    col = np.linspace(0.1, 1.0, 12)
    w = entropy_weights(np.column_stack([col, col[::-1]]))
    assert np.allclose(w, [0.5, 0.5], atol=1e-12)


def test_entropy_weights_match_literal_oracle(rng):
    block = rng.uniform(0.01, 1.0, (20, 4))
    # independent spreadsheet-style evaluation
    p = block / block.sum(axis=0, keepdims=True)
    e = -(np.where(p > 0, p * np.log(p), 0.0)).sum(axis=0) / np.log(block.shape[0])
    expected = (1 - e) / (1 - e).sum()
    assert np.allclose(entropy_weights(block), expected, atol=1e-9)


def test_weights_sum_to_one_and_nonnegative(rng):
    for _ in range(10):
        block = rng.uniform(0, 1, (15, 3))
        w = entropy_weights(block)
        assert np.all(w >= 0)
        assert abs(w.sum() - 1.0) <= 1e-12


def test_weights_invariant_under_row_permutation(rng):
    block = rng.uniform(0, 1, (25, 4))
    perm = rng.permutation(25)
    assert np.allclose(entropy_weights(block), entropy_weights(block[perm]), atol=1e-12)


def test_all_degenerate_block_uniform():
    block = np.full((8, 3), 0.5)
    assert np.allclose(entropy_weights(block), [1 / 3] * 3)


def test_entropy_needs_two_rows():
    with pytest.raises(ValidationError):
        entropy_weights(np.ones((1, 2)))


# ---------------------------------------------------------------------------
# block aggregation
# ---------------------------------------------------------------------------

def test_uniform_weights_on_half_inputs():
    dims = block_aggregate(np.full((1, 9), 0.5), WeightMatrix.uniform())
    assert np.allclose(dims, 0.5)


def test_weight_one_selects_single_indicator():
    wm = WeightMatrix(activity=np.array([0, 0, 1.0, 0]),
                      utilization=np.array([1.0, 0, 0]),
                      environment=np.array([1.0, 0]))
    values = np.arange(9, dtype=float).reshape(1, 9) / 10
    dims = block_aggregate(values, wm)
    assert dims[0, 0] == pytest.approx(values[0, 2])  # br
    assert dims[0, 1] == pytest.approx(values[0, 4])  # md
    assert dims[0, 2] == pytest.approx(values[0, 7])  # gr


def test_block_aggregate_matches_matrix_product(rng):
    values = rng.uniform(0, 1, (12, 9))
    wa, wu, wp = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(2))
    wm = WeightMatrix(activity=wa, utilization=wu, environment=wp)
    dims = block_aggregate(values, wm)
    expected = np.column_stack([values[:, :4] @ wa, values[:, 4:7] @ wu, values[:, 7:] @ wp])
    assert np.allclose(dims, expected, atol=1e-12)


# ---------------------------------------------------------------------------
# TOPSIS
# ---------------------------------------------------------------------------

def test_topsis_endpoints():
    dims = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    result = topsis(dims)
    assert result.sevi[0] == 1.0
    assert result.sevi[1] == 0.0


def test_topsis_midpoint():
    dims = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [0.5, 0.5, 0.5]])
    assert topsis(dims).sevi[2] == pytest.approx(0.5)


def test_topsis_three_segment_hand_computation():
    dims = np.array([[0.9, 0.2, 0.5], [0.1, 0.8, 0.5], [0.4, 0.4, 0.1]])
    result = topsis(dims)
    z_plus = dims.max(axis=0)
    z_minus = dims.min(axis=0)
    for i in range(3):
        dp = math.dist(dims[i], z_plus)
        dm = math.dist(dims[i], z_minus)
        assert result.sevi[i] == pytest.approx(dm / (dp + dm), abs=1e-12)


def test_topsis_constant_rows_get_half():
    dims = np.full((3, 3), 0.7)
    assert np.all(topsis(dims).sevi == 0.5)


def test_sevi_in_unit_interval(rng):
    for _ in range(10):
        sevi = topsis(rng.uniform(0, 1, (30, 3))).sevi
        assert sevi.min() >= 0.0
        assert sevi.max() <= 1.0


def test_topsis_monotone_in_interior_indicator(rng):
    values = rng.uniform(0.2, 0.8, (20, 9))
    wm = compute_weight_matrix(align_and_normalize(values))
    base = topsis(block_aggregate(values, wm))
    bumped = values.copy()
    bumped[5, 0] = min(bumped[5, 0] + 0.1, 0.99)  # stays interior
    after = topsis(block_aggregate(bumped, wm))
    assert after.sevi[5] >= base.sevi[5] - 1e-12


# ---------------------------------------------------------------------------
# alternative composites
# ---------------------------------------------------------------------------

def test_equal_weight_index_coincides_when_ewm_is_uniform(rng):
    # columns are row permutations of one multiset: identical entropy, so
    # EWM weights are exactly uniform and the two indices agree
    base = np.linspace(0.0, 1.0, 16)
    raw = np.column_stack([base[rng.permutation(16)] for _ in range(9)])
    raw[:, CR] = 1.0 - raw[:, CR]  # keep the aligned column a permutation too
    nm = align_and_normalize(raw)
    wm = compute_weight_matrix(nm)
    sevi = topsis(block_aggregate(nm.values, wm)).sevi
    eq, _ = alternative_indices(nm)
    assert np.allclose(sevi, eq, atol=1e-9)


def test_two_segment_equal_weight_endpoints(rng):
    raw = np.vstack([np.full(9, 0.1), np.full(9, 3.0)])
    raw[:, CR] = [0.9, 0.1]  # worse closure on the low segment
    nm = align_and_normalize(raw)
    eq, _ = alternative_indices(nm)
    assert sorted(eq.tolist()) == [0.0, 1.0]


def test_pca_index_rank_matches_generating_factor(rng):
    factor = rng.uniform(0, 1, 30)
    loadings = rng.uniform(0.5, 1.5, 9)
    raw = np.outer(factor, loadings)
    nm = align_and_normalize(raw)
    _, pca_index = alternative_indices(nm)
    # the aligned closure column flips one coordinate, but rank-1 structure
    # keeps the first component a monotone image of the factor
    assert abs(spearman(pca_index, factor)) == pytest.approx(1.0, abs=1e-12)


def test_pca_index_sign_fixed_positive(rng):
    raw = _raw(40, rng)
    nm = align_and_normalize(raw)
    eq, pca_index = alternative_indices(nm)
    assert np.corrcoef(pca_index, eq)[0, 1] >= 0
    assert pca_index.min() >= 0.0
    assert pca_index.max() <= 1.0


def test_first_component_scores_handles_constant_columns():
    values = np.column_stack([np.full(10, 0.5), np.linspace(0, 1, 10)])
    scores = first_component_scores(values)
    assert np.allclose(scores, (values[:, 1] - values[:, 1].mean()) / values[:, 1].std())


def test_ewm_and_equal_weight_indices_strongly_agree(rng):
    # consistency property over random non-degenerate data
    rhos = []
    for _ in range(20):
        raw = rng.uniform(0, 1, (40, 9)) ** rng.uniform(0.5, 2.0)
        nm = align_and_normalize(raw)
        wm = compute_weight_matrix(nm)
        sevi = topsis(block_aggregate(nm.values, wm)).sevi
        eq, _ = alternative_indices(nm)
        rhos.append(spearman(sevi, eq))
    assert min(rhos) > 0.9
