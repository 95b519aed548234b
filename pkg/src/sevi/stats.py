"""Rank statistics, PCA with varimax rotation, and the Kruskal-Wallis test.

Chi-square tail probabilities are computed here via the regularized
incomplete gamma function (series + continued fraction) so the analysis has
no external statistics dependency; the implementations are checked against
independent oracles in the test suite.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ComputationError, ValidationError


# ---------------------------------------------------------------------------
# ranks and correlation
# ---------------------------------------------------------------------------

def rankdata(values) -> np.ndarray:
    """Average ranks (1-based); tied values share the mean of their ranks."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = 0.5 * (i + j) + 1.0
        ranks[order[i:j + 1]] = avg
        i = j + 1
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(xc @ xc))
    sy = math.sqrt(float(yc @ yc))
    if sx == 0.0 or sy == 0.0:
        raise ComputationError("correlation undefined for a constant vector")
    return float(xc @ yc) / (sx * sy)


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValidationError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 3:
        raise ValidationError(f"need at least 3 observations, got {len(x)}")
    return _pearson(rankdata(x), rankdata(y))


@dataclass
class CorrelationMatrix:
    labels: list[str]
    values: np.ndarray  # (k, k), symmetric, unit diagonal


def spearman_matrix(matrix: np.ndarray, labels: list[str]) -> CorrelationMatrix:
    matrix = np.asarray(matrix, dtype=float)
    k = matrix.shape[1]
    if len(labels) != k:
        raise ValidationError(f"{k} columns but {len(labels)} labels")
    out = np.eye(k)
    for a in range(k):
        for b in range(a + 1, k):
            rho = spearman(matrix[:, a], matrix[:, b])
            out[a, b] = rho
            out[b, a] = rho
    return CorrelationMatrix(labels=list(labels), values=out)


# ---------------------------------------------------------------------------
# PCA and varimax
# ---------------------------------------------------------------------------

@dataclass
class VarimaxResult:
    loadings: np.ndarray     # rotated loadings
    rotation: np.ndarray     # orthogonal rotation matrix applied
    sweeps: int
    converged: bool


@dataclass
class PcaModel:
    loadings: np.ndarray                 # (k, n_components) eigenvector loadings
    explained_variance_ratio: np.ndarray  # all k ratios, descending
    rotated_loadings: np.ndarray         # varimax-rotated retained loadings
    rotation_converged: bool
    rotation_sweeps: int
    column_labels: list[str]


def varimax(loadings: np.ndarray, tol: float = 1e-6, max_iter: int = 100) -> VarimaxResult:
    """Raw varimax rotation by cyclic pairwise planar rotations.

    Each pair (a, b) is rotated by the angle maximizing the varimax
    criterion in that plane: phi = atan2(num, den) / 4 with
    num = 2 (p * sum(uv) - sum(u) sum(v)),
    den = p * sum(u^2 - v^2) - (sum(u)^2 - sum(v)^2),
    u = La^2 - Lb^2, v = 2 La Lb. Sweeps stop when the largest angle in a
    sweep drops below `tol`; non-convergence warns and returns the last
    iterate. Orthogonality preserves row communalities.
    """
    A = np.array(loadings, dtype=float)
    if A.ndim != 2:
        raise ValidationError(f"expected a 2-D loading matrix, got shape {A.shape}")
    p, k = A.shape
    if k < 2:
        raise ValidationError(f"varimax needs at least 2 factors, got {k}")

    rotation = np.eye(k)
    converged = False
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        max_angle = 0.0
        for a in range(k - 1):
            for b in range(a + 1, k):
                u = A[:, a] ** 2 - A[:, b] ** 2
                v = 2.0 * A[:, a] * A[:, b]
                num = 2.0 * (p * float(u @ v) - u.sum() * v.sum())
                den = p * float(u @ u - v @ v) - (u.sum() ** 2 - v.sum() ** 2)
                phi = 0.25 * math.atan2(num, den)
                if abs(phi) <= 1e-300:
                    continue
                max_angle = max(max_angle, abs(phi))
                c, s = math.cos(phi), math.sin(phi)
                col_a = A[:, a].copy()
                A[:, a] = c * col_a + s * A[:, b]
                A[:, b] = -s * col_a + c * A[:, b]
                rot_a = rotation[:, a].copy()
                rotation[:, a] = c * rot_a + s * rotation[:, b]
                rotation[:, b] = -s * rot_a + c * rotation[:, b]
        if max_angle < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"varimax did not converge within {max_iter} sweeps "
                      f"(last max angle {max_angle:.3e}); returning last iterate")
    return VarimaxResult(loadings=A, rotation=rotation, sweeps=sweeps, converged=converged)


def pca(matrix: np.ndarray, n_components: int = 4,
        column_labels: list[str] | None = None) -> PcaModel:
    """Correlation-matrix PCA with a deterministic sign convention.

    Columns are z-scored; components are eigenvectors of the correlation
    matrix sorted by descending eigenvalue, each signed so its largest-
    magnitude entry is positive. The retained components are varimax-rotated.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {matrix.shape}")
    n, k = matrix.shape
    if n < 10:
        raise ValidationError(f"PCA needs at least 10 rows, got {n}")
    if column_labels is None:
        column_labels = [f"col{j}" for j in range(k)]
    std = matrix.std(axis=0, ddof=1)
    for j in range(k):
        if std[j] == 0:
            raise ComputationError(f"PCA column {column_labels[j]!r} is constant")
    if not (1 <= n_components <= k):
        raise ValidationError(f"n_components must be in [1, {k}], got {n_components}")

    z = (matrix - matrix.mean(axis=0)) / std
    corr = (z.T @ z) / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(corr)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    for j in range(k):
        peak = np.argmax(np.abs(eigvecs[:, j]))
        if eigvecs[peak, j] < 0:
            eigvecs[:, j] = -eigvecs[:, j]

    ratios = eigvals / eigvals.sum()
    retained = eigvecs[:, :n_components]
    if n_components >= 2:
        rot = varimax(retained)
        rotated, converged, sweeps = rot.loadings, rot.converged, rot.sweeps
    else:
        rotated, converged, sweeps = retained.copy(), True, 0
    return PcaModel(loadings=retained, explained_variance_ratio=ratios,
                    rotated_loadings=rotated, rotation_converged=converged,
                    rotation_sweeps=sweeps, column_labels=list(column_labels))


# ---------------------------------------------------------------------------
# chi-square survival via the regularized incomplete gamma function
# ---------------------------------------------------------------------------

_GAMMA_EPS = 1e-14
_GAMMA_ITMAX = 500


def _reg_gamma_p_series(a: float, x: float) -> float:
    """Lower regularized gamma P(a, x) by power series (x < a + 1)."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_GAMMA_ITMAX):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _reg_gamma_q_cf(a: float, x: float) -> float:
    """Upper regularized gamma Q(a, x) by continued fraction (x >= a + 1)."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_ITMAX + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def reg_gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a)."""
    if a <= 0:
        raise ValidationError(f"shape parameter must be > 0, got {a}")
    if x < 0:
        raise ValidationError(f"argument must be >= 0, got {x}")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _reg_gamma_p_series(a, x)
    return _reg_gamma_q_cf(a, x)


def chi2_sf(x: float, dof: int) -> float:
    """Chi-square survival function P(X >= x) with `dof` degrees of freedom."""
    if dof < 1:
        raise ValidationError(f"degrees of freedom must be >= 1, got {dof}")
    return reg_gamma_q(dof / 2.0, x / 2.0)


# ---------------------------------------------------------------------------
# Kruskal-Wallis
# ---------------------------------------------------------------------------

@dataclass
class KwResult:
    h: float
    dof: int
    p_value: float
    tie_correction: float


def kruskal_wallis(groups: list) -> KwResult:
    """Rank-based H test across two or more groups.

    Ties share average ranks and H is divided by the tie-correction factor
    1 - sum(t^3 - t) / (N^3 - N). With all pooled values identical the
    statistic is defined as 0 with p = 1.
    """
    if len(groups) < 2:
        raise ValidationError(f"need at least 2 groups, got {len(groups)}")
    arrays = [np.asarray(g, dtype=float) for g in groups]
    for gi, arr in enumerate(arrays):
        if len(arr) == 0:
            raise ValidationError(f"group {gi} is empty")
    pooled = np.concatenate(arrays)
    n_total = len(pooled)
    if n_total < 5:
        raise ValidationError(f"need at least 5 observations in total, got {n_total}")

    dof = len(arrays) - 1
    ranks = rankdata(pooled)

    # tie correction over runs of equal pooled values
    sorted_vals = np.sort(pooled)
    tie_sum = 0.0
    i = 0
    while i < n_total:
        j = i
        while j + 1 < n_total and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        t = j - i + 1
        if t > 1:
            tie_sum += t ** 3 - t
        i = j + 1
    correction = 1.0 - tie_sum / (n_total ** 3 - n_total)
    if correction == 0.0:  # every value identical
        return KwResult(h=0.0, dof=dof, p_value=1.0, tie_correction=0.0)

    h = 0.0
    offset = 0
    for arr in arrays:
        r = ranks[offset:offset + len(arr)]
        h += r.sum() ** 2 / len(arr)
        offset += len(arr)
    h = 12.0 / (n_total * (n_total + 1)) * h - 3.0 * (n_total + 1)
    h /= correction
    if h < 0.0 and h > -1e-12:  # guard tiny negative round-off
        h = 0.0
    return KwResult(h=h, dof=dof, p_value=chi2_sf(h, dof), tie_correction=correction)


# ---------------------------------------------------------------------------
# tertiles
# ---------------------------------------------------------------------------

TERTILE_LABELS = ("low", "mid", "high")


def tertile_split(values) -> list[str]:
    """Labels at the interpolated 1/3 and 2/3 quantiles; ties at a cut fall
    into the lower tier."""
    values = np.asarray(values, dtype=float)
    if len(values) < 3:
        raise ValidationError(f"tertile split needs at least 3 values, got {len(values)}")
    q1, q2 = np.quantile(values, [1.0 / 3.0, 2.0 / 3.0])
    labels = []
    for v in values:
        if v <= q1:
            labels.append("low")
        elif v <= q2:
            labels.append("mid")
        else:
            labels.append("high")
    return labels
