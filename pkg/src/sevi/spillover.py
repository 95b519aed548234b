"""Anchor decay-bandwidth calibration and threshold-gated spillover fields.

Bandwidths come from the average nearest-neighbor distance within each
anchor category; field values sum a distance-decay term over all anchors
inside a hard threshold. Summation is always in ascending anchor-id order
so outputs are bit-stable for a given backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .exceptions import CalibrationError, ComputationError, ValidationError
from .geodata import MallAnchor, SamplingPoint, SpatialIndex

DECAYS = ("gaussian", "exponential", "linear")
DEFAULT_THRESHOLD_M = 2000.0
DEFAULT_SWEEP_M = (1000.0, 2000.0, 3000.0)


@dataclass(frozen=True)
class SpilloverConfig:
    threshold_m: float = DEFAULT_THRESHOLD_M
    decay: str = "gaussian"

    def __post_init__(self):
        if self.threshold_m <= 0:
            raise ValidationError(f"spillover threshold must be > 0, got {self.threshold_m}")
        if self.decay not in DECAYS:
            raise ValidationError(f"unknown decay {self.decay!r}; expected one of {DECAYS}")


@dataclass
class SigmaTable:
    """Per-category decay bandwidth with provenance (computed vs imputed)."""

    sigma_m: dict[str, float] = field(default_factory=dict)
    provenance: dict[str, str] = field(default_factory=dict)

    def get(self, category: str) -> float:
        if category not in self.sigma_m:
            raise ComputationError(f"no calibrated bandwidth for category {category!r}")
        return self.sigma_m[category]


def calibrate_sigma(anchors: list[MallAnchor]) -> SigmaTable:
    """Mean nearest-competitor distance per category.

    Categories with a single anchor receive the unweighted mean of the
    computed category bandwidths (provenance "imputed"). Fails when no
    category has two or more anchors, or when a category's anchors are all
    coincident (zero bandwidth is not a usable decay scale).
    """
    by_cat: dict[str, list[MallAnchor]] = {}
    for a in anchors:
        by_cat.setdefault(a.category, []).append(a)

    table = SigmaTable()
    computed: list[float] = []
    for cat in sorted(by_cat):
        members = by_cat[cat]
        if len(members) < 2:
            continue
        xy = np.array([(a.x, a.y) for a in members], dtype=float)
        index = SpatialIndex(xy)
        total = 0.0
        for k in range(len(members)):
            # two nearest: the first is the anchor itself (distance 0)
            d, idx = index.query_nearest((xy[k, 0], xy[k, 1]), k=2)
            if idx[0] == k:
                total += d[1]
            else:
                # a coincident twin was returned first; its distance is the NN distance
                total += d[0]
        sigma = total / len(members)
        if sigma <= 0.0:
            raise CalibrationError(
                f"category {cat!r}: all anchors coincide, nearest-neighbor bandwidth is 0"
            )
        table.sigma_m[cat] = sigma
        table.provenance[cat] = "computed"
        computed.append(sigma)

    if not computed:
        raise CalibrationError(
            "no anchor category has two or more members; nothing to calibrate or impute from"
        )
    imputed = sum(computed) / len(computed)
    for cat in sorted(by_cat):
        if cat not in table.sigma_m:
            table.sigma_m[cat] = imputed
            table.provenance[cat] = "imputed"
    return table


def apply_sigma(anchors: list[MallAnchor], table: SigmaTable) -> None:
    for a in anchors:
        a.sigma_m = table.get(a.category)


def decay_value(d: float, sigma: float, config: SpilloverConfig) -> float:
    """Single decay term in [0, 1], gated to zero beyond the threshold."""
    if d < 0:
        raise ValidationError(f"distance must be >= 0, got {d}")
    if sigma <= 0:
        raise ValidationError(f"sigma must be > 0, got {sigma}")
    if d > config.threshold_m:
        return 0.0
    if config.decay == "gaussian":
        return math.exp(-(d * d) / (2.0 * sigma * sigma))
    if config.decay == "exponential":
        return math.exp(-d / sigma)
    return max(0.0, 1.0 - d / config.threshold_m)


def _sorted_anchor_arrays(anchors: list[MallAnchor], sigma_table: SigmaTable):
    ordered = sorted(anchors, key=lambda a: a.id)
    ax = np.array([a.x for a in ordered], dtype=float)
    ay = np.array([a.y for a in ordered], dtype=float)
    sig = np.array([sigma_table.get(a.category) for a in ordered], dtype=float)
    return ordered, ax, ay, sig


def field_at(point: SamplingPoint, anchors: list[MallAnchor], sigma_table: SigmaTable,
             config: SpilloverConfig, index: SpatialIndex | None = None) -> float:
    """Spillover value at one point: candidates from the spatial index within
    the threshold, gate re-checked, summed in ascending anchor-id order."""
    ordered, ax, ay, sig = _sorted_anchor_arrays(anchors, sigma_table)
    if not ordered:
        return 0.0
    if index is None:
        index = SpatialIndex(np.column_stack([ax, ay]))
    cand = index.query_radius((point.x, point.y), config.threshold_m)
    acc = 0.0
    for j in cand:  # ascending index == ascending anchor id
        d = math.hypot(ax[j] - point.x, ay[j] - point.y)
        if d <= config.threshold_m:
            acc += decay_value(d, sig[j], config)
    return acc


def field_all(points_xy: np.ndarray, anchors: list[MallAnchor], sigma_table: SigmaTable,
              config: SpilloverConfig) -> np.ndarray:
    """Spillover values for a full point set via the accelerated kernel.

    The kernel evaluates the gate directly over the id-sorted anchor arrays,
    which is the same indicator the index-backed candidate search applies.
    """
    points_xy = np.asarray(points_xy, dtype=float).reshape(-1, 2)
    if len(points_xy) == 0:
        return np.zeros(0)
    _, ax, ay, sig = _sorted_anchor_arrays(anchors, sigma_table)
    if len(ax) == 0:
        return np.zeros(len(points_xy))
    return kernels.spill_field(
        np.ascontiguousarray(points_xy[:, 0]), np.ascontiguousarray(points_xy[:, 1]),
        ax, ay, sig, float(config.threshold_m), kernels.DECAY_CODES[config.decay],
    )


def threshold_sweep(points_xy: np.ndarray, anchors: list[MallAnchor], sigma_table: SigmaTable,
                    thresholds=DEFAULT_SWEEP_M, decay: str = "gaussian") -> dict[float, np.ndarray]:
    """Re-evaluate the field for each threshold; keys are the thresholds."""
    out: dict[float, np.ndarray] = {}
    for d_max in thresholds:
        cfg = SpilloverConfig(threshold_m=float(d_max), decay=decay)
        out[float(d_max)] = field_all(points_xy, anchors, sigma_table, cfg)
    return out
