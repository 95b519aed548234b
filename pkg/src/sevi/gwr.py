"""Time-lagged, time-sliced geographically weighted regression.

Every location gets its own weighted least squares fit against spatially
kernel-weighted neighbors; hat-matrix traces are accumulated exactly while
streaming (S itself is never materialized), giving effective degrees of
freedom for adjusted R-squared and AICc. Bandwidths are either fixed
meters, adaptive neighbor counts, or AICc-selected by golden section.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .exceptions import ComputationError, ValidationError
from .geodata import PERIODS

GOLDEN_INV = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class GwrDesign:
    """Coordinates, lagged predictors (intercept prepended), and response."""

    coords: np.ndarray              # (n, 2) meters
    X: np.ndarray                   # (n, k+1), first column all ones
    y: np.ndarray                   # (n,)
    kernel: str = "gaussian"        # gaussian | bisquare
    predictor_names: list[str] = field(default_factory=list)
    location_ids: list[str] = field(default_factory=list)

    @classmethod
    def build(cls, coords, predictors, y, kernel="gaussian",
              predictor_names=None, location_ids=None) -> "GwrDesign":
        coords = np.asarray(coords, dtype=float).reshape(-1, 2)
        predictors = np.atleast_2d(np.asarray(predictors, dtype=float))
        y = np.asarray(y, dtype=float)
        n, k = predictors.shape
        if kernel not in kernels.KERNEL_CODES:
            raise ValidationError(f"unknown kernel {kernel!r}")
        if coords.shape[0] != n or len(y) != n:
            raise ValidationError(
                f"row mismatch: coords {coords.shape[0]}, X {n}, y {len(y)}"
            )
        if n <= k + 2:
            raise ValidationError(f"need n > k+2 observations, got n={n}, k={k}")
        if not np.all(np.isfinite(coords)):
            raise ValidationError("coordinates must be finite")
        if not (np.all(np.isfinite(predictors)) and np.all(np.isfinite(y))):
            raise ValidationError("predictors and response must be finite")
        if predictor_names is None:
            predictor_names = [f"x{j + 1}" for j in range(k)]
        if len(predictor_names) != k:
            raise ValidationError(f"{k} predictors but {len(predictor_names)} names")
        for j in range(k):
            col = predictors[:, j]
            if col.max() == col.min():
                raise ValidationError(
                    f"predictor {predictor_names[j]!r} is constant; only the "
                    "intercept may be constant"
                )
        X = np.column_stack([np.ones(n), predictors])
        if location_ids is None:
            location_ids = [str(i) for i in range(n)]
        return cls(coords=coords, X=np.ascontiguousarray(X), y=np.ascontiguousarray(y),
                   kernel=kernel, predictor_names=list(predictor_names),
                   location_ids=list(location_ids))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_params(self) -> int:
        return self.X.shape[1]

    def pairwise_extent(self) -> tuple[float, float]:
        """(smallest nonzero pairwise distance, diameter) of the coordinates."""
        d = np.hypot(self.coords[:, 0][:, None] - self.coords[:, 0][None, :],
                     self.coords[:, 1][:, None] - self.coords[:, 1][None, :])
        diameter = float(d.max())
        nonzero = d[d > 0]
        if len(nonzero) == 0 or diameter <= 0:
            raise ValidationError("all coordinates coincide; no usable bandwidth range")
        return float(nonzero.min()), diameter


@dataclass
class GwrFit:
    beta: np.ndarray           # (n, k+1) local coefficients
    fitted: np.ndarray
    residuals: np.ndarray
    hat_diag: np.ndarray
    trace_s: float
    trace_sts: float
    rss: float
    tss: float
    adjusted_r2: float
    aicc: float
    bandwidth: float | None     # meters (None for adaptive)
    adaptive_neighbors: int | None
    kernel: str
    flags: np.ndarray           # 0 clean, 1 ridged, 2 singular
    predictor_names: list[str]
    location_ids: list[str]

    @property
    def n(self) -> int:
        return len(self.fitted)

    @property
    def n_ridged(self) -> int:
        return int((self.flags == kernels.FLAG_RIDGED).sum())

    def effective_params(self) -> float:
        return 2.0 * self.trace_s - self.trace_sts


def kernel_weight(d: float, bandwidth: float, kernel: str = "gaussian") -> float:
    """Spatial weight in [0, 1] for a neighbor at distance d."""
    if d < 0:
        raise ValidationError(f"distance must be >= 0, got {d}")
    if bandwidth <= 0:
        raise ValidationError(f"bandwidth must be > 0, got {bandwidth}")
    t = d / bandwidth
    if kernel == "gaussian":
        return math.exp(-0.5 * t * t)
    if kernel == "bisquare":
        return (1.0 - t * t) ** 2 if t < 1.0 else 0.0
    raise ValidationError(f"unknown kernel {kernel!r}")


def adaptive_bandwidths(coords: np.ndarray, m: int) -> np.ndarray:
    """Per-location bandwidth: distance to the m-th nearest neighbor
    (self excluded)."""
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    if not (1 <= m <= n - 1):
        raise ValidationError(f"adaptive neighbor count must be in [1, {n - 1}], got {m}")
    d = np.hypot(coords[:, 0][:, None] - coords[:, 0][None, :],
                 coords[:, 1][:, None] - coords[:, 1][None, :])
    d_sorted = np.sort(d, axis=1)
    bw = d_sorted[:, m]  # index 0 is the self distance
    if np.any(bw <= 0):
        i = int(np.argmax(bw <= 0))
        raise ComputationError(
            f"adaptive bandwidth is zero at location index {i} "
            "(coincident coordinates); increase the neighbor count"
        )
    return bw


def fit_local(design: GwrDesign, bandwidth) -> GwrFit:
    """Fit the local WLS at every location.

    `bandwidth` is either a positive float (meters, fixed kernel) or a tuple
    ("adaptive", m). Near-singular local systems are re-solved with a small
    ridge and flagged; a system that remains singular raises an error naming
    its location.
    """
    if isinstance(bandwidth, tuple):
        mode, m = bandwidth
        if mode != "adaptive":
            raise ValidationError(f"unknown bandwidth mode {mode!r}")
        m = int(m)
        bw_arr = adaptive_bandwidths(design.coords, m)
        bw_scalar, adaptive_m = None, m
    else:
        bw = float(bandwidth)
        if bw <= 0:
            raise ValidationError(f"bandwidth must be > 0, got {bw}")
        bw_arr = np.full(design.n, bw)
        bw_scalar, adaptive_m = bw, None

    cx = np.ascontiguousarray(design.coords[:, 0])
    cy = np.ascontiguousarray(design.coords[:, 1])
    beta, fitted, s_ii, s_norm2, flags = kernels.gwr_fit_all(
        cx, cy, design.X, design.y, bw_arr, kernels.KERNEL_CODES[design.kernel]
    )
    if np.any(flags == kernels.FLAG_SINGULAR):
        i = int(np.argmax(flags == kernels.FLAG_SINGULAR))
        raise ComputationError(
            f"local system singular even after ridge fallback at location "
            f"{design.location_ids[i]!r}"
        )

    residuals = design.y - fitted
    rss = float(residuals @ residuals)
    ybar = design.y.mean()
    tss = float(((design.y - ybar) ** 2).sum())
    trace_s = float(s_ii.sum())
    trace_sts = float(s_norm2.sum())

    fit = GwrFit(beta=beta, fitted=fitted, residuals=residuals, hat_diag=s_ii,
                 trace_s=trace_s, trace_sts=trace_sts, rss=rss, tss=tss,
                 adjusted_r2=math.nan, aicc=math.nan, bandwidth=bw_scalar,
                 adaptive_neighbors=adaptive_m, kernel=design.kernel, flags=flags,
                 predictor_names=list(design.predictor_names),
                 location_ids=list(design.location_ids))
    fit.adjusted_r2 = adjusted_r2(fit, design.n)
    fit.aicc = aicc(fit, design.n)
    return fit


def adjusted_r2(fit: GwrFit, n: int) -> float:
    """1 - [RSS/(n - p_eff)] / [TSS/(n - 1)] with p_eff = 2 tr(S) - tr(S'S)."""
    p_eff = fit.effective_params()
    if n <= p_eff:
        raise ComputationError(
            f"adjusted R^2 undefined: n={n} <= effective parameters {p_eff:.3f}"
        )
    if fit.tss <= 0:
        raise ComputationError("adjusted R^2 undefined: response is constant")
    return 1.0 - (fit.rss / (n - p_eff)) / (fit.tss / (n - 1))


def aicc(fit: GwrFit, n: int) -> float:
    """Corrected AIC; +inf when the trace penalty denominator is not positive."""
    denom = n - 2.0 - fit.trace_s
    if denom <= 0:
        return math.inf
    rss = max(fit.rss, 1e-300)
    return (n * math.log(rss / n) + n * math.log(2.0 * math.pi)
            + n * (n + fit.trace_s) / denom)


def select_bandwidth(design: GwrDesign, criterion: str = "aicc",
                     rel_tol: float = 1e-3, max_iter: int = 60) -> float:
    """Golden-section AICc minimization over [min nonzero distance, diameter].

    When the criterion is monotone over the interval the search lands on a
    boundary, which is returned with a warning. Deterministic for fixed
    inputs.
    """
    if criterion != "aicc":
        raise ValidationError(f"unknown selection criterion {criterion!r}")
    lo0, hi0 = design.pairwise_extent()
    cache: dict[float, float] = {}

    def objective(b: float) -> float:
        if b not in cache:
            cache[b] = fit_local(design, b).aicc
        return cache[b]

    lo, hi = lo0, hi0
    objective(lo)
    objective(hi)
    x1 = hi - GOLDEN_INV * (hi - lo)
    x2 = lo + GOLDEN_INV * (hi - lo)
    f1, f2 = objective(x1), objective(x2)
    for _ in range(max_iter):
        if (hi - lo) <= rel_tol * (hi0 - lo0):
            break
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN_INV * (hi - lo)
            f1 = objective(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN_INV * (hi - lo)
            f2 = objective(x2)

    best = min(cache, key=lambda b: (cache[b], b))
    boundary_pad = rel_tol * (hi0 - lo0)
    if best <= lo0 + boundary_pad or best >= hi0 - boundary_pad:
        best = lo0 if best <= lo0 + boundary_pad else hi0
        warnings.warn(
            f"bandwidth search hit the {'lower' if best == lo0 else 'upper'} boundary "
            f"({best:.3f} m); the criterion appears monotone over the search range"
        )
    return float(best)


def time_sliced(designs: dict[str, GwrDesign], bandwidth="aicc") -> dict[str, GwrFit]:
    """Independent fits for the eight canonical periods.

    `bandwidth` is "aicc" (selected per period), a float, or ("adaptive", m).
    """
    missing = [p for p in PERIODS if p not in designs]
    if missing:
        raise ValidationError(f"missing periods: {missing}")
    unknown = [p for p in designs if p not in PERIODS]
    if unknown:
        raise ValidationError(f"unknown periods: {unknown}")
    fits: dict[str, GwrFit] = {}
    for period in PERIODS:
        design = designs[period]
        bw = select_bandwidth(design) if bandwidth == "aicc" else bandwidth
        fits[period] = fit_local(design, bw)
    return fits


def r2_trajectory(fits: dict[str, GwrFit]) -> list[tuple[str, float]]:
    return [(p, fits[p].adjusted_r2) for p in PERIODS]


@dataclass
class CoefSummary:
    period: str
    variable: str
    q1: float
    median: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: list[float]


def coef_summary(fits: dict[str, GwrFit], variable: str) -> list[CoefSummary]:
    """Boxplot statistics of one coefficient's local values, per period.

    Whiskers sit at the most extreme data points within 1.5 IQR of the
    quartiles; values beyond are listed as outliers.
    """
    out = []
    for period in PERIODS:
        fit = fits.get(period)
        if fit is None:
            raise ValidationError(f"missing period {period!r}")
        if variable == "intercept":
            col = 0
        else:
            if variable not in fit.predictor_names:
                raise ValidationError(
                    f"variable {variable!r} not in design {fit.predictor_names}"
                )
            col = 1 + fit.predictor_names.index(variable)
        values = fit.beta[:, col]
        q1, med, q3 = np.quantile(values, [0.25, 0.5, 0.75])
        iqr = q3 - q1
        lo_fence = q1 - 1.5 * iqr
        hi_fence = q3 + 1.5 * iqr
        inside = values[(values >= lo_fence) & (values <= hi_fence)]
        whisker_lo = float(inside.min()) if len(inside) else float(q1)
        whisker_hi = float(inside.max()) if len(inside) else float(q3)
        outliers = sorted(float(v) for v in values[(values < lo_fence) | (values > hi_fence)])
        out.append(CoefSummary(period=period, variable=variable, q1=float(q1),
                               median=float(med), q3=float(q3), whisker_lo=whisker_lo,
                               whisker_hi=whisker_hi, outliers=outliers))
    return out
