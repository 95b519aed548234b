"""Configuration, stage orchestration, and artifact emission.

A run executes load -> bandwidth calibration -> spillover field ->
indicators (with route smoothing) -> normalization -> entropy weights ->
TOPSIS and alternates -> statistics -> external validation -> time-sliced
GWR -> GeoJSON -> report, writing every intermediate table and a manifest
of per-file checksums. Reruns on identical inputs are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import brandsem, report, scoring, spillover, stats
from .exceptions import (ComputationError, ConfigError, SeviError, StageError,
                         ValidationError)
from .geodata import (PERIODS, CityTables, TablePaths, filter_active,
                      load_tables, radius_join, write_tables)
from .gwr import GwrDesign, coef_summary, time_sliced
from .indicators import (BLOCKS, INDICATOR_NAMES, BrandWeights, brand_ratio_series,
                         segment_indicators, smooth_along_route)
from .report import RobustnessReport, TierValidation

DEFAULT_CONFIG = {
    "inputs": {
        "format": "csv",
        "points": "points.csv",
        "segments": "segments.csv",
        "anchors": "anchors.csv",
        "pois": "pois.csv",
        "lbs": "lbs.csv",
        "brands": "brands.csv",
    },
    "output_dir": "out",
    "spillover": {
        "threshold_m": 2000.0,
        "decay": "gaussian",
        "sweep_thresholds": [1000.0, 2000.0, 3000.0],
        "sweep_decays": ["gaussian", "exponential", "linear"],
    },
    "brand_weights": {"local": 1.0, "international": 1.5, "ordinary": 0.0},
    "smoothing_window": 5,
    "poi_radius_m": 50.0,
    "pca_components": 4,
    "gwr": {
        "kernel": "gaussian",
        "bandwidth": "aicc",
        "x_source": "normalized",
        "summary_variables": ["mv", "cr"],
    },
    "decode": {
        "backend": "offline",
        "reference_db": "reference_db.json",
        "fixtures": "fixtures.json",
        "corpus": "corpus.csv",
        "parallelism": 4,
    },
    "seed": 20251015,
}


def _merge_defaults(defaults: dict, user: dict, path: str = "") -> dict:
    merged = {}
    for key, default_value in defaults.items():
        if key in user and isinstance(default_value, dict):
            if not isinstance(user[key], dict):
                raise ConfigError(f"config key {path + key!r} must be a mapping")
            merged[key] = _merge_defaults(default_value, user[key], path + key + ".")
        elif key in user:
            merged[key] = user[key]
        else:
            merged[key] = default_value
    for key in user:
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
    return merged


def _parse_bandwidth(value):
    if isinstance(value, str):
        if value == "aicc":
            return "aicc"
        if value.startswith("adaptive:"):
            try:
                m = int(value.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad adaptive bandwidth spec {value!r}")
            if m < 1:
                raise ConfigError(f"adaptive neighbor count must be >= 1, got {m}")
            return ("adaptive", m)
        raise ConfigError(f"unknown bandwidth spec {value!r}")
    try:
        bw = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bandwidth must be 'aicc', 'adaptive:m', or meters, got {value!r}")
    if bw <= 0:
        raise ConfigError(f"bandwidth must be positive, got {bw}")
    return bw


@dataclass
class PipelineConfig:
    raw: dict  # merged config; hashed into the manifest

    @classmethod
    def from_file(cls, path, overrides: list[str] | None = None) -> "PipelineConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                user = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"config {path} must be a mapping")
        return cls.from_mapping(user, overrides)

    @classmethod
    def from_mapping(cls, user: dict, overrides: list[str] | None = None) -> "PipelineConfig":
        merged = _merge_defaults(DEFAULT_CONFIG, user)
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"--set expects path=value, got {item!r}")
            dotted, text = item.split("=", 1)
            node = merged
            parts = dotted.strip().split(".")
            for part in parts[:-1]:
                if part not in node or not isinstance(node[part], dict):
                    raise ConfigError(f"unknown config path {dotted!r}")
                node = node[part]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config path {dotted!r}")
            node[parts[-1]] = yaml.safe_load(text)
        cfg = cls(raw=merged)
        cfg.validate()
        return cfg

    def validate(self):
        c = self.raw
        if c["inputs"]["format"] not in ("csv", "geojson"):
            raise ConfigError(f"inputs.format must be csv or geojson, got {c['inputs']['format']!r}")
        sp = c["spillover"]
        if not (isinstance(sp["threshold_m"], (int, float)) and sp["threshold_m"] > 0):
            raise ConfigError(f"spillover.threshold_m must be positive, got {sp['threshold_m']!r}")
        if sp["decay"] not in spillover.DECAYS:
            raise ConfigError(f"spillover.decay must be one of {spillover.DECAYS}")
        for d in sp["sweep_thresholds"]:
            if not (isinstance(d, (int, float)) and d > 0):
                raise ConfigError(f"sweep threshold must be positive, got {d!r}")
        for decay in sp["sweep_decays"]:
            if decay not in spillover.DECAYS:
                raise ConfigError(f"sweep decay must be one of {spillover.DECAYS}, got {decay!r}")
        w = c["smoothing_window"]
        if not (isinstance(w, int) and w >= 1 and w % 2 == 1):
            raise ConfigError(f"smoothing_window must be an odd integer >= 1, got {w!r}")
        if not (isinstance(c["poi_radius_m"], (int, float)) and c["poi_radius_m"] > 0):
            raise ConfigError("poi_radius_m must be positive")
        if not (isinstance(c["pca_components"], int) and 1 <= c["pca_components"] <= 9):
            raise ConfigError("pca_components must be an integer in [1, 9]")
        if c["gwr"]["kernel"] not in ("gaussian", "bisquare"):
            raise ConfigError(f"gwr.kernel must be gaussian or bisquare, got {c['gwr']['kernel']!r}")
        if c["gwr"]["x_source"] not in ("normalized", "raw"):
            raise ConfigError("gwr.x_source must be normalized or raw")
        for v in c["gwr"]["summary_variables"]:
            if v != "intercept" and v not in INDICATOR_NAMES:
                raise ConfigError(f"gwr.summary_variables entry {v!r} is not an indicator")
        _parse_bandwidth(c["gwr"]["bandwidth"])
        if c["decode"]["backend"] not in ("offline", "live"):
            raise ConfigError("decode.backend must be offline or live")
        # builds BrandWeights to trigger its own invariant checks
        self.brand_weights()

    def brand_weights(self) -> BrandWeights:
        bw = self.raw["brand_weights"]
        return BrandWeights(local=float(bw["local"]), international=float(bw["international"]),
                            ordinary=float(bw["ordinary"]))

    def spillover_config(self) -> spillover.SpilloverConfig:
        sp = self.raw["spillover"]
        return spillover.SpilloverConfig(threshold_m=float(sp["threshold_m"]), decay=sp["decay"])

    def bandwidth(self):
        return _parse_bandwidth(self.raw["gwr"]["bandwidth"])

    def table_paths(self, workdir: Path) -> TablePaths:
        ins = self.raw["inputs"]
        brands = ins.get("brands")
        return TablePaths(
            points=workdir / ins["points"], segments=workdir / ins["segments"],
            anchors=workdir / ins["anchors"], pois=workdir / ins["pois"],
            lbs=workdir / ins["lbs"],
            brands=(workdir / brands) if brands else None,
        )

    def sha256(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# deterministic writers
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(c) for c in row])


def _round_floats(obj, digits: int = 6):
    if isinstance(obj, float):
        if math.isnan(obj):
            return None
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return round(obj, digits)
    if isinstance(obj, dict):
        return {k: _round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, digits) for v in obj]
    if isinstance(obj, (np.floating,)):
        return _round_floats(float(obj), digits)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _round_floats(obj.tolist(), digits)
    return obj


def write_json(path: Path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_round_floats(obj), fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# shared computation steps
# ---------------------------------------------------------------------------

def _segment_mv(tables: CityTables, mv_point: np.ndarray) -> dict[str, float]:
    """Segment spillover: mean over the segment's sampling points."""
    pos = {p.id: i for i, p in enumerate(tables.points)}
    out = {}
    for sid, seg in tables.segments.items():
        if not seg.point_ids:
            continue
        out[sid] = float(np.mean([mv_point[pos[pid]] for pid in seg.point_ids]))
    return out


def _indicator_table(tables: CityTables, mv_by_segment: dict[str, float],
                     weights: BrandWeights, window: int):
    """Per-segment indicator matrix plus the smoothed point-level brand series.

    Returns (segment_ids, raw_matrix, flags, point_br).
    """
    tallies = tables.brands or {}
    by_segment = tables.points_by_segment()
    segment_ids = sorted(sid for sid, seg in tables.segments.items() if seg.point_ids)
    rows = []
    flags = []
    point_br: dict[str, float] = {}
    for sid in segment_ids:
        pts = by_segment[sid]
        series, ns = brand_ratio_series(pts, tallies, weights)
        smoothed = smooth_along_route(series, window)
        for p, value in zip(pts, smoothed):
            point_br[p.id] = float(value)
        total_ns = ns.sum()
        br_value = float((smoothed * ns).sum() / total_ns) if total_ns > 0 else 0.0
        vec = segment_indicators(tables.segments[sid], pts, None,
                                 mv_by_segment.get(sid, 0.0), weights, br_value=br_value)
        rows.append(vec.as_array())
        flags.append(vec.no_signboards)
    return segment_ids, np.array(rows), flags, point_br


def _gwr_designs(tables: CityTables, segment_ids: list[str], x_matrix: np.ndarray,
                 kernel: str) -> dict[str, GwrDesign]:
    """One design per period over the segments that carry crowd intensities."""
    pos = {sid: i for i, sid in enumerate(segment_ids)}
    usable = [sid for sid in segment_ids if sid in tables.lbs]
    if len(usable) < x_matrix.shape[1] + 3:
        raise ValidationError(
            f"only {len(usable)} segments have both indicators and crowd data; "
            f"need more than {x_matrix.shape[1] + 2}"
        )
    by_segment = tables.points_by_segment()
    coords = np.array([
        [np.mean([p.x for p in by_segment[sid]]), np.mean([p.y for p in by_segment[sid]])]
        for sid in usable
    ])
    X = x_matrix[[pos[sid] for sid in usable], :]
    designs = {}
    for period in PERIODS:
        y = np.array([tables.lbs[sid][period] for sid in usable])
        designs[period] = GwrDesign.build(
            coords, X, y, kernel=kernel,
            predictor_names=list(INDICATOR_NAMES), location_ids=usable,
        )
    return designs


def _tier_validation(tables: CityTables, point_br: dict[str, float],
                     radius_m: float) -> TierValidation:
    """50 m POI join, active-point filter, brand-premium tertiles, and the
    rank test on POI counts across tiers."""
    poi_lists = radius_join(tables.points, tables.pois, radius_m)
    active = filter_active(tables.points, poi_lists)
    if len(active) < 3:
        raise ComputationError(
            f"external validation needs at least 3 active points, got {len(active)}"
        )
    premium_ids = {p.id for p in tables.pois if p.is_premium}
    values = [point_br.get(p.id, 0.0) for p in active]
    labels = stats.tertile_split(values)
    totals = {t: [] for t in stats.TERTILE_LABELS}
    premiums = {t: [] for t in stats.TERTILE_LABELS}
    for p, label in zip(active, labels):
        hits = poi_lists[p.id]
        totals[label].append(len(hits))
        premiums[label].append(sum(1 for q in hits if q in premium_ids))
    for tier in ("low", "high"):
        if not totals[tier]:
            raise ComputationError(f"tier {tier!r} is empty; cannot form the growth contrast")
    mean_total = {t: (float(np.mean(v)) if v else math.nan) for t, v in totals.items()}
    mean_premium = {t: (float(np.mean(v)) if v else math.nan) for t, v in premiums.items()}
    groups = [totals[t] for t in stats.TERTILE_LABELS if totals[t]]
    if len(groups) < 2:
        raise ComputationError("fewer than 2 nonempty tiers; rank test undefined")
    kw = stats.kruskal_wallis(groups)
    return TierValidation(
        tier_n={t: len(v) for t, v in totals.items()},
        mean_total_poi=mean_total, mean_premium_poi=mean_premium,
        growth_total_pct=report.growth_pct(mean_total["high"], mean_total["low"]),
        growth_premium_pct=report.growth_pct(mean_premium["high"], mean_premium["low"]),
        kw_total=kw, n_active=len(active), n_points=len(tables.points),
    )


def emit_geojson(path: Path, tables: CityTables,
                 properties_by_segment: dict[str, dict[str, float]],
                 use_segment_geometry: bool = False):
    """One Point feature per sampling point (or LineString per segment when
    geometry was ingested), carrying the nine indicators plus A/U/P/sevi."""
    features = []
    if use_segment_geometry and tables.segment_geometry:
        for sid in sorted(properties_by_segment):
            coords = tables.segment_geometry.get(sid)
            if coords is None:
                raise ValidationError(f"no geometry for segment {sid!r}")
            features.append({
                "type": "Feature", "id": sid,
                "geometry": {"type": "LineString",
                             "coordinates": [[round(c[0], 7), round(c[1], 7)] for c in coords]},
                "properties": _round_floats(properties_by_segment[sid]),
            })
    else:
        for p in sorted(tables.points, key=lambda q: q.id):
            props = properties_by_segment.get(p.segment_id)
            if props is None:
                continue
            features.append({
                "type": "Feature", "id": p.id,
                "geometry": {"type": "Point",
                             "coordinates": [round(p.lon, 7), round(p.lat, 7)]},
                "properties": _round_floats(props),
            })
    doc = {"type": "FeatureCollection", "features": features}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


# ---------------------------------------------------------------------------
# the full run
# ---------------------------------------------------------------------------

class _Manifest:
    def __init__(self, outdir: Path, config_hash: str):
        self.outdir = outdir
        self.config_hash = config_hash
        self.stages: list[dict] = []

    def stage(self, name: str, files: list[str]):
        self.stages.append({"name": name, "files": sorted(files)})

    def write(self) -> Path:
        files = {}
        for stage in self.stages:
            for name in stage["files"]:
                files[name] = file_sha256(self.outdir / name)
        doc = {"config_sha256": self.config_hash, "stages": self.stages, "files": files}
        path = self.outdir / "manifest.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def _run_stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except SeviError as exc:
        raise StageError(name, exc) from exc


def run(config: PipelineConfig, workdir: Path, until: str | None = None) -> dict:
    """Execute the pipeline and return the manifest document.

    `until` stops after a named stage group ("spillover", "indicators",
    "sevi", "stats", or "gwr"); the manifest then covers only the stages
    that ran.
    """
    if until not in (None, "spillover", "indicators", "sevi", "stats", "gwr"):
        raise ValidationError(f"unknown stop stage {until!r}")
    workdir = Path(workdir)
    outdir = workdir / config.raw["output_dir"]
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest(outdir, config.sha256())
    weights_cfg = config.brand_weights()
    sp_cfg = config.spillover_config()
    window = config.raw["smoothing_window"]

    def _stop(marker: str) -> dict | None:
        if until == marker:
            manifest.write()
            with open(outdir / "manifest.json", "r", encoding="utf-8") as fh:
                return json.load(fh)
        return None

    def _load():
        paths = config.table_paths(workdir)
        if paths.brands is None:
            raise ValidationError("a brands table is required for the full run "
                                  "(inputs.brands); produce one with 'brands decode'")
        return load_tables(paths, config.raw["inputs"]["format"])

    tables = _run_stage("load", _load)
    manifest.stage("load", [])

    sigma_table = _run_stage("calibrate_sigma", spillover.calibrate_sigma, tables.anchors)
    write_csv(outdir / "sigma.csv", ("category", "sigma_m", "provenance"),
              [(cat, sigma_table.sigma_m[cat], sigma_table.provenance[cat])
               for cat in sorted(sigma_table.sigma_m)])
    manifest.stage("calibrate_sigma", ["sigma.csv"])

    points_xy = tables.points_xy()
    mv_point = _run_stage("spillover_field", spillover.field_all,
                          points_xy, tables.anchors, sigma_table, sp_cfg)
    mv_col = f"mv_{sp_cfg.decay}_{int(sp_cfg.threshold_m)}"
    write_csv(outdir / "mv.csv", ("point_id", mv_col),
              [(p.id, float(mv_point[i])) for i, p in enumerate(tables.points)])
    manifest.stage("spillover_field", ["mv.csv"])
    if (doc := _stop("spillover")) is not None:
        return doc

    mv_by_segment = _segment_mv(tables, mv_point)
    segment_ids, raw_matrix, seg_flags, point_br = _run_stage(
        "indicators", _indicator_table, tables, mv_by_segment, weights_cfg, window)
    write_csv(outdir / "indicators.csv",
              ("segment_id",) + INDICATOR_NAMES + ("no_signboards",),
              [(sid,) + tuple(float(v) for v in raw_matrix[i]) + (int(seg_flags[i]),)
               for i, sid in enumerate(segment_ids)])
    manifest.stage("indicators", ["indicators.csv"])
    if (doc := _stop("indicators")) is not None:
        return doc

    nm = _run_stage("normalize", scoring.align_and_normalize, raw_matrix, segment_ids)
    write_csv(outdir / "normalized.csv", ("segment_id",) + INDICATOR_NAMES,
              [(sid,) + tuple(float(v) for v in nm.values[i])
               for i, sid in enumerate(segment_ids)])
    manifest.stage("normalize", ["normalized.csv"])

    wm = _run_stage("entropy_weights", scoring.compute_weight_matrix, nm)
    weights_doc = {"columns": [vars(c) for c in nm.columns], "blocks": {}}
    for name in BLOCKS:
        lo, hi = BLOCKS[name]
        weights_doc["blocks"][name] = {
            "columns": list(INDICATOR_NAMES[lo:hi]),
            "weights": wm.block(name).tolist(),
            "entropy": wm.entropy.get(name, []),
        }
    write_json(outdir / "weights.json", weights_doc)
    manifest.stage("entropy_weights", ["weights.json"])

    def _scores():
        dims = scoring.block_aggregate(nm.values, wm)
        result = scoring.topsis(dims, segment_ids)
        eq, pca_index = scoring.alternative_indices(nm)
        return result, eq, pca_index

    sevi_result, sevi_eq, sevi_pca = _run_stage("scores", _scores)
    write_csv(outdir / "sevi.csv",
              ("segment_id", "activity", "utilization", "environment",
               "sevi", "sevi_eq", "sevi_pca"),
              [(sid, float(sevi_result.dims[i, 0]), float(sevi_result.dims[i, 1]),
                float(sevi_result.dims[i, 2]), float(sevi_result.sevi[i]),
                float(sevi_eq[i]), float(sevi_pca[i]))
               for i, sid in enumerate(segment_ids)])
    manifest.stage("scores", ["sevi.csv"])
    if (doc := _stop("sevi")) is not None:
        return doc

    def _stats():
        corr = stats.spearman_matrix(raw_matrix, list(INDICATOR_NAMES))
        model = stats.pca(raw_matrix, n_components=config.raw["pca_components"],
                          column_labels=list(INDICATOR_NAMES))
        return corr, model

    corr, pca_model = _run_stage("stats", _stats)
    write_csv(outdir / "correlation.csv", ("variable",) + INDICATOR_NAMES,
              [(INDICATOR_NAMES[i],) + tuple(float(v) for v in corr.values[i])
               for i in range(len(INDICATOR_NAMES))])
    k_comp = pca_model.loadings.shape[1]
    header = (("variable",) + tuple(f"pc{j + 1}_raw" for j in range(k_comp))
              + tuple(f"pc{j + 1}_rotated" for j in range(k_comp)))
    write_csv(outdir / "pca_loadings.csv", header,
              [(INDICATOR_NAMES[i],)
               + tuple(float(v) for v in pca_model.loadings[i])
               + tuple(float(v) for v in pca_model.rotated_loadings[i])
               for i in range(len(INDICATOR_NAMES))])
    write_json(outdir / "pca_summary.json", {
        "explained_variance_ratio": pca_model.explained_variance_ratio.tolist(),
        "retained_components": k_comp,
        "retained_variance": float(pca_model.explained_variance_ratio[:k_comp].sum()),
        "rotation_converged": pca_model.rotation_converged,
        "rotation_sweeps": pca_model.rotation_sweeps,
    })
    manifest.stage("stats", ["correlation.csv", "pca_loadings.csv", "pca_summary.json"])

    tier_validation = _run_stage("validation", _tier_validation,
                                 tables, point_br, float(config.raw["poi_radius_m"]))
    write_csv(outdir / "tier_validation.csv",
              ("tier", "n_points", "mean_total_poi", "mean_premium_poi"),
              [(t, tier_validation.tier_n[t], tier_validation.mean_total_poi[t],
                tier_validation.mean_premium_poi[t]) for t in stats.TERTILE_LABELS])
    write_json(outdir / "kw.json", {
        "h": tier_validation.kw_total.h, "dof": tier_validation.kw_total.dof,
        "p_value": tier_validation.kw_total.p_value,
        "tie_correction": tier_validation.kw_total.tie_correction,
        "growth_total_pct": tier_validation.growth_total_pct,
        "growth_premium_pct": tier_validation.growth_premium_pct,
        "n_active": tier_validation.n_active, "n_points": tier_validation.n_points,
    })
    manifest.stage("validation", ["tier_validation.csv", "kw.json"])
    if (doc := _stop("stats")) is not None:
        return doc

    def _gwr():
        x_matrix = nm.values if config.raw["gwr"]["x_source"] == "normalized" else raw_matrix
        designs = _gwr_designs(tables, segment_ids, x_matrix, config.raw["gwr"]["kernel"])
        fits = time_sliced(designs, config.bandwidth())
        return fits

    fits = _run_stage("gwr", _gwr)
    gwr_files = []
    for period in PERIODS:
        fit = fits[period]
        name = f"gwr_{period}.csv"
        header = (("segment_id", "beta_intercept")
                  + tuple(f"beta_{v}" for v in fit.predictor_names) + ("residual",))
        write_csv(outdir / name, header,
                  [(fit.location_ids[i],) + tuple(float(b) for b in fit.beta[i])
                   + (float(fit.residuals[i]),) for i in range(fit.n)])
        gwr_files.append(name)
    summary = {
        "periods": {
            period: {
                "adjusted_r2": fits[period].adjusted_r2,
                "aicc": fits[period].aicc,
                "bandwidth_m": fits[period].bandwidth,
                "adaptive_neighbors": fits[period].adaptive_neighbors,
                "kernel": fits[period].kernel,
                "trace_s": fits[period].trace_s,
                "trace_sts": fits[period].trace_sts,
                "n_ridged": fits[period].n_ridged,
                "n": fits[period].n,
            } for period in PERIODS
        },
        "mean_adjusted_r2": report.mean_adjusted_r2(
            [fits[p].adjusted_r2 for p in PERIODS]),
    }
    write_json(outdir / "gwr_summary.json", summary)
    gwr_files.append("gwr_summary.json")
    coef_rows = []
    for variable in config.raw["gwr"]["summary_variables"]:
        for cs in coef_summary(fits, variable):
            coef_rows.append((cs.variable, cs.period, cs.q1, cs.median, cs.q3,
                              cs.whisker_lo, cs.whisker_hi, len(cs.outliers)))
    write_csv(outdir / "coef_summary.csv",
              ("variable", "period", "q1", "median", "q3",
               "whisker_lo", "whisker_hi", "n_outliers"), coef_rows)
    gwr_files.append("coef_summary.csv")
    manifest.stage("gwr", gwr_files)
    if (doc := _stop("gwr")) is not None:
        return doc

    props = {}
    for i, sid in enumerate(segment_ids):
        entry = {name: float(raw_matrix[i, j]) for j, name in enumerate(INDICATOR_NAMES)}
        entry.update({
            "activity": float(sevi_result.dims[i, 0]),
            "utilization": float(sevi_result.dims[i, 1]),
            "environment": float(sevi_result.dims[i, 2]),
            "sevi": float(sevi_result.sevi[i]),
        })
        props[sid] = entry
    _run_stage("geojson", emit_geojson, outdir / "sevi.geojson", tables, props,
               use_segment_geometry=bool(tables.segment_geometry))
    manifest.stage("geojson", ["sevi.geojson"])

    sevi_stats = {
        "n_segments": float(len(segment_ids)),
        "sevi_min": float(sevi_result.sevi.min()),
        "sevi_mean": float(sevi_result.sevi.mean()),
        "sevi_max": float(sevi_result.sevi.max()),
        "spearman_sevi_eq": stats.spearman(sevi_result.sevi, sevi_eq),
        "spearman_sevi_pca": stats.spearman(sevi_result.sevi, sevi_pca),
    }
    text = report.render_run_summary(
        sevi_stats, {p: fits[p].adjusted_r2 for p in PERIODS},
        {name: wm.block(name) for name in BLOCKS}, tier_validation)
    (outdir / "summary.txt").write_text(text, encoding="utf-8")
    manifest.stage("report", ["summary.txt"])

    manifest.write()
    with open(outdir / "manifest.json", "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# robustness suite
# ---------------------------------------------------------------------------

def robustness(config: PipelineConfig, workdir: Path) -> RobustnessReport:
    """Threshold and decay sweeps for the GWR explanatory power, alternative
    composite-index correlations, and the external tier validation."""
    workdir = Path(workdir)
    outdir = workdir / config.raw["output_dir"]
    outdir.mkdir(parents=True, exist_ok=True)
    weights_cfg = config.brand_weights()
    window = config.raw["smoothing_window"]
    sp = config.raw["spillover"]
    base_cfg = config.spillover_config()

    paths = config.table_paths(workdir)
    if paths.brands is None:
        raise ValidationError("a brands table is required for robustness runs")
    tables = load_tables(paths, config.raw["inputs"]["format"])
    sigma_table = spillover.calibrate_sigma(tables.anchors)
    points_xy = tables.points_xy()

    def _r2_for(threshold: float, decay: str) -> dict[str, float]:
        cfg_v = spillover.SpilloverConfig(threshold_m=threshold, decay=decay)
        mv_point = spillover.field_all(points_xy, tables.anchors, sigma_table, cfg_v)
        mv_seg = _segment_mv(tables, mv_point)
        seg_ids, matrix, _, _ = _indicator_table(tables, mv_seg, weights_cfg, window)
        nm_v = scoring.align_and_normalize(matrix, seg_ids)
        x_matrix = nm_v.values if config.raw["gwr"]["x_source"] == "normalized" else matrix
        designs = _gwr_designs(tables, seg_ids, x_matrix, config.raw["gwr"]["kernel"])
        fits = time_sliced(designs, config.bandwidth())
        return {p: fits[p].adjusted_r2 for p in PERIODS}

    cache: dict[tuple[float, str], dict[str, float]] = {}

    def _cached(threshold: float, decay: str) -> dict[str, float]:
        key = (float(threshold), decay)
        if key not in cache:
            cache[key] = _r2_for(*key)
        return cache[key]

    r2_by_threshold = {p: {} for p in PERIODS}
    for d in sp["sweep_thresholds"]:
        r2 = _cached(float(d), base_cfg.decay)
        for p in PERIODS:
            r2_by_threshold[p][str(int(d))] = r2[p]
    r2_by_decay = {p: {} for p in PERIODS}
    for decay in sp["sweep_decays"]:
        r2 = _cached(base_cfg.threshold_m, decay)
        for p in PERIODS:
            r2_by_decay[p][decay] = r2[p]

    # baseline composite indices and their rank agreement
    mv_point = spillover.field_all(points_xy, tables.anchors, sigma_table, base_cfg)
    mv_seg = _segment_mv(tables, mv_point)
    seg_ids, matrix, _, point_br = _indicator_table(tables, mv_seg, weights_cfg, window)
    nm = scoring.align_and_normalize(matrix, seg_ids)
    wm = scoring.compute_weight_matrix(nm)
    sevi = scoring.topsis(scoring.block_aggregate(nm.values, wm), seg_ids).sevi
    sevi_eq, sevi_pca = scoring.alternative_indices(nm)
    corr = stats.spearman_matrix(np.column_stack([sevi, sevi_eq, sevi_pca]),
                                 ["sevi", "sevi_eq", "sevi_pca"])

    tier_validation = _tier_validation(tables, point_br, float(config.raw["poi_radius_m"]))

    rob = RobustnessReport(
        r2_by_threshold=r2_by_threshold, r2_by_decay=r2_by_decay,
        index_correlation={"labels": corr.labels, "matrix": corr.values.tolist()},
        tier_validation=tier_validation,
        thresholds=[float(d) for d in sp["sweep_thresholds"]],
        decays=list(sp["sweep_decays"]),
    )
    rob.validate_complete()

    write_json(outdir / "robustness.json", {
        "r2_by_threshold": rob.r2_by_threshold,
        "r2_by_decay": rob.r2_by_decay,
        "index_correlation": rob.index_correlation,
        "tier_validation": {
            "tier_n": tier_validation.tier_n,
            "mean_total_poi": tier_validation.mean_total_poi,
            "mean_premium_poi": tier_validation.mean_premium_poi,
            "growth_total_pct": tier_validation.growth_total_pct,
            "growth_premium_pct": tier_validation.growth_premium_pct,
            "kw": {"h": tier_validation.kw_total.h,
                   "dof": tier_validation.kw_total.dof,
                   "p_value": tier_validation.kw_total.p_value},
            "n_active": tier_validation.n_active,
            "n_points": tier_validation.n_points,
        },
    })
    (outdir / "robustness.txt").write_text(report.render_robustness(rob), encoding="utf-8")
    return rob


# ---------------------------------------------------------------------------
# brand decode / eval file workflows
# ---------------------------------------------------------------------------

def decode_to_files(config: PipelineConfig, workdir: Path) -> dict:
    """Run the offline (or live) two-stage decode and write assignments.csv,
    brands.csv, and decode_summary.json under the output directory."""
    workdir = Path(workdir)
    outdir = workdir / config.raw["output_dir"]
    outdir.mkdir(parents=True, exist_ok=True)
    dec = config.raw["decode"]
    db = brandsem.ReferenceDb.from_json(workdir / dec["reference_db"])
    if dec["backend"] == "offline":
        client = brandsem.OfflineFixtureClient.from_json(workdir / dec["fixtures"])
        parallelism = 1
    else:
        client = brandsem.HttpChatClient.from_env()
        parallelism = int(dec["parallelism"])
    corpus = brandsem.load_corpus(workdir / dec["corpus"])
    decoded = brandsem.decode_corpus(corpus, db, client, parallelism=parallelism)

    rows = []
    n_default = 0
    for item in decoded:
        for brand in sorted(item.assignment.tiers):
            source = item.assignment.provenance[brand]
            n_default += source == "default"
            rows.append((item.image_id, brand, item.assignment.tiers[brand], source))
    write_csv(outdir / "assignments.csv", ("image_id", "brand", "tier", "provenance"), rows)
    tally = brandsem.tally_by_point(decoded)
    write_csv(outdir / "brands.csv",
              ("point_id", "n_local", "n_international", "n_ordinary"),
              [(pid, t.n_local, t.n_international, t.n_ordinary)
               for pid, t in sorted(tally.items())])
    summary = {"images": len(decoded), "assignments": len(rows),
               "defaulted_to_ordinary": n_default, "points": len(tally)}
    write_json(outdir / "decode_summary.json", summary)
    return summary


def evaluate_files(gt_path: Path, pred_path: Path, out_path: Path | None = None) -> brandsem.EvalReport:
    """Evaluate a predictions CSV against ground truth; images present in the
    ground truth but absent from the predictions count as empty predictions."""
    gt = brandsem.load_labeled_pairs(gt_path)
    pred = brandsem.load_labeled_pairs(pred_path)
    for image_id in gt:
        pred.setdefault(image_id, set())
    rep = brandsem.evaluate(pred, gt)
    if out_path is not None:
        write_json(out_path, {
            "per_tier": {
                tier: {"precision": m.precision, "recall": m.recall, "f1": m.f1,
                       "tp": m.tp, "fp": m.fp, "fn": m.fn}
                for tier, m in rep.per_tier.items()
            },
            "overall": {"precision": rep.overall.precision,
                        "recall": rep.overall.recall, "f1": rep.overall.f1},
            "gt_counts": rep.gt_counts,
        })
    return rep


def ingest(config: PipelineConfig, workdir: Path) -> dict:
    """Validate the inputs and write round-tripped copies plus a summary."""
    workdir = Path(workdir)
    outdir = workdir / config.raw["output_dir"]
    tables = load_tables(config.table_paths(workdir), config.raw["inputs"]["format"])
    validated_dir = outdir / "validated"
    write_tables(tables, validated_dir)
    summary = {
        "points": len(tables.points), "segments": len(tables.segments),
        "anchors": len(tables.anchors), "pois": len(tables.pois),
        "lbs_segments": len(tables.lbs),
        "brand_points": len(tables.brands) if tables.brands else 0,
    }
    outdir.mkdir(parents=True, exist_ok=True)
    write_json(outdir / "ingest_summary.json", summary)
    return summary
