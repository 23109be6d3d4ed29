"""Batch command-line front end.

Subcommands: ``fit``, ``predict``, ``build-clim``, ``gauge``, ``eval`` and
``impact``.  Each takes ``--config PATH`` (flat key=value file) plus
``--seed`` and ``--threads``.  Outputs are computed fully before anything is
written, every run emits a manifest recording its inputs by content hash,
and reruns with the same inputs produce byte-identical outputs for any
thread count.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 solver error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
from datetime import datetime

from . import __version__
from . import climatology, evaluation, gauge, impact, rainmodel
from .configfile import Field, load_config
from .errors import ConfigError, DataError, SolverError
from .raster import Grid, GridGeometry, read_grid, sample_bilinear
from .rainmodel import ClimatePoint, SiteStatistics


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="flat key=value configuration file")
    common.add_argument("--seed", type=int, default=0,
                        help="seed for any randomized step (recorded in the "
                             "manifest; identical seeds give identical bytes)")
    common.add_argument("--threads", type=int, default=1,
                        help="worker count; results are identical for any N")

    parser = _Parser(prog="rainstats",
                     description="Rain-rate exceedance statistics toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common],
                   help="fit model constants to training site statistics")
    sub.add_parser("predict", parents=[common],
                   help="estimate site curves from climatology grids")
    sub.add_parser("build-clim", parents=[common],
                   help="build climatology grids from swath observations")
    sub.add_parser("gauge", parents=[common],
                   help="derive site statistics from tipping-bucket records")
    sub.add_parser("eval", parents=[common],
                   help="score predictions against observed statistics")
    sub.add_parser("impact", parents=[common],
                   help="tabulate heavy-rain population impact")
    return parser


# ---------------------------------------------------------------------------
# shared plumbing


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _require_inputs(cfg: dict, keys) -> None:
    for key in keys:
        path = cfg.get(key)
        if path is None:
            continue
        if not os.path.isfile(path):
            raise FileNotFoundError(f"input file not found: {path}")


def _check_output_dirs(cfg: dict, keys) -> None:
    for key in keys:
        path = cfg.get(key)
        if path is None:
            continue
        parent = os.path.dirname(path)
        if parent and not os.path.isdir(parent):
            raise ConfigError(f"output directory does not exist: {parent}")


def _write_manifest(path, command, args, cfg, input_keys, output_keys,
                    notes=None) -> None:
    lines = [
        f"command={command}",
        f"config={args.config}",
        f"config_sha256={_sha256(args.config)}",
        f"seed={args.seed}",
        f"version={__version__}",
    ]
    for key in sorted(k for k in input_keys if cfg.get(k) is not None):
        lines.append(f"input.{key}={cfg[key]}")
        lines.append(f"input.{key}.sha256={_sha256(cfg[key])}")
    for key, value in sorted((notes or {}).items()):
        lines.append(f"note.{key}={value}")
    for key in sorted(k for k in output_keys if cfg.get(k) is not None):
        lines.append(f"output.{key}={cfg[key]}")
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def _manifest_path(cfg: dict, primary_output_key: str) -> str:
    return cfg.get("out_manifest") or cfg[primary_output_key] + ".manifest"


def _validate_ladder(ladder):
    if ladder is None:
        return rainmodel.STANDARD_LADDER
    if not ladder:
        raise ConfigError("ladder must list at least one probability")
    for a, b in zip(ladder, ladder[1:]):
        if b <= a:
            raise ConfigError("ladder must be strictly increasing")
    for p in ladder:
        if not (0 < p <= 100):
            raise ConfigError(f"ladder probability {p} outside (0, 100]")
    return tuple(ladder)


def _config_check(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# fit


_FIT_SCHEMA = {
    "sites": Field("str", required=True),
    "climate": Field("str", required=True),
    "out_params": Field("str", required=True),
    "out_residuals": Field("str", required=True),
    "out_report": Field("str", required=True),
    "out_manifest": Field("str"),
}


def _cmd_fit(args) -> None:
    cfg = load_config(args.config, _FIT_SCHEMA)
    _require_inputs(cfg, ["sites", "climate"])
    _check_output_dirs(cfg, ["out_params", "out_residuals", "out_report",
                             "out_manifest"])

    sites = rainmodel.read_sites_csv(cfg["sites"])
    climate = rainmodel.read_climate_csv(cfg["climate"])
    training = []
    for s in sites:
        if s.site_id not in climate:
            raise DataError(f"no climate record for site {s.site_id}")
        training.append((s, climate[s.site_id]))

    result = rainmodel.fit_params(training, threads=max(1, args.threads))

    residual_rows = []
    for s, c in training:
        retained = [(p, r) for p, r in s.points if r > 0]
        if not retained:
            continue
        curve = rainmodel.estimate_site_curve(c, result.params,
                                              [p for p, _ in retained])
        for (p, r), (_, pred) in zip(retained, curve):
            residual_rows.append([s.site_id, repr(p), repr(r), repr(pred),
                                  repr((pred - r) / r)])

    rainmodel.write_params(result.params, cfg["out_params"])
    with open(cfg["out_residuals"], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["site_id", "p_percent", "observed", "predicted",
                    "rel_error"])
        w.writerows(residual_rows)
    with open(cfg["out_report"], "w", newline="", encoding="utf-8") as f:
        f.write(f"objective={result.objective!r}\n"
                f"n_points={result.n_points}\n"
                f"n_sites={len(training)}\n")
    _write_manifest(_manifest_path(cfg, "out_params"), "fit", args, cfg,
                    ["sites", "climate"],
                    ["out_params", "out_residuals", "out_report"])


# ---------------------------------------------------------------------------
# predict


_PREDICT_SCHEMA = {
    "mt_grid": Field("str", required=True),
    "p0_grid": Field("str", required=True),
    "params": Field("str", required=True),
    "locations": Field("str", required=True),
    "ladder": Field("floats"),
    "out_sites": Field("str", required=True),
    "out_manifest": Field("str"),
}


def _read_locations_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["site_id", "lat", "lon", "country"]:
            raise DataError(f"{path}: expected header "
                            f"site_id,lat,lon,country, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path} line {lineno}: expected 4 columns")
            try:
                rows.append((row[0], float(row[1]), float(row[2]), row[3]))
            except ValueError:
                raise DataError(f"{path} line {lineno}: non-numeric "
                                "coordinate") from None
    return rows


def _cmd_predict(args) -> None:
    cfg = load_config(args.config, _PREDICT_SCHEMA)
    _require_inputs(cfg, ["mt_grid", "p0_grid", "params", "locations"])
    _check_output_dirs(cfg, ["out_sites", "out_manifest"])
    ladder = _validate_ladder(cfg["ladder"])

    mt = read_grid(cfg["mt_grid"])
    p0 = read_grid(cfg["p0_grid"])
    params = rainmodel.read_params(cfg["params"])
    locations = _read_locations_csv(cfg["locations"])

    out_sites = []
    skipped = 0
    for site_id, lat, lon, country in locations:
        mt_v = sample_bilinear(mt, lat, lon)
        p0_v = sample_bilinear(p0, lat, lon)
        if mt_v == mt.geometry.nodata or p0_v == p0.geometry.nodata:
            skipped += 1
            continue
        curve = rainmodel.estimate_site_curve(
            ClimatePoint(max(mt_v, 0.0), min(max(p0_v, 0.0), 100.0)),
            params, ladder)
        out_sites.append(SiteStatistics(site_id, lat, lon, country, 1.0,
                                        tuple(curve)))

    rainmodel.write_sites_csv(out_sites, cfg["out_sites"])
    _write_manifest(_manifest_path(cfg, "out_sites"), "predict", args, cfg,
                    ["mt_grid", "p0_grid", "params", "locations"],
                    ["out_sites"], notes={"skipped_locations": skipped})


# ---------------------------------------------------------------------------
# build-clim


_BUILD_CLIM_SCHEMA = {
    "observations": Field("str", required=True),
    "reference_mt": Field("str", required=True),
    "elevation": Field("str", required=True),
    "ncols": Field("int", required=True),
    "nrows": Field("int", required=True),
    "xll": Field("float", required=True),
    "yll": Field("float", required=True),
    "cell": Field("float", required=True),
    "nodata": Field("float", required=True),
    "k_uniform": Field("int", default=climatology.DEFAULT_K_UNIFORM),
    "k_gauss": Field("int", default=climatology.DEFAULT_K_GAUSS),
    "sigma_gauss": Field("float"),
    "dedup_window_s": Field("float",
                            default=climatology.DEFAULT_DEDUP_WINDOW_S),
    "out_mt": Field("str", required=True),
    "out_p0": Field("str", required=True),
    "out_report": Field("str", required=True),
    "out_manifest": Field("str"),
}


def _cmd_build_clim(args) -> None:
    cfg = load_config(args.config, _BUILD_CLIM_SCHEMA)
    _require_inputs(cfg, ["observations", "reference_mt", "elevation"])
    _check_output_dirs(cfg, ["out_mt", "out_p0", "out_report",
                             "out_manifest"])
    try:
        GridGeometry(cfg["ncols"], cfg["nrows"], cfg["xll"], cfg["yll"],
                     cfg["cell"], cfg["nodata"])
    except ValueError as e:
        raise ConfigError(f"bad output geometry: {e}") from None
    for key in ("k_uniform", "k_gauss"):
        _config_check(cfg[key] >= 1 and cfg[key] % 2 == 1,
                      f"{key} must be odd and positive, got {cfg[key]}")
    _config_check(cfg["sigma_gauss"] is None or cfg["sigma_gauss"] > 0,
                  "sigma_gauss must be positive")
    _config_check(cfg["dedup_window_s"] > 0,
                  "dedup_window_s must be positive")
    climatology.build_climatology(cfg, threads=max(1, args.threads))
    _write_manifest(_manifest_path(cfg, "out_mt"), "build-clim", args, cfg,
                    ["observations", "reference_mt", "elevation"],
                    ["out_mt", "out_p0", "out_report"])


# ---------------------------------------------------------------------------
# gauge


_GAUGE_SCHEMA = {
    "sites": Field("str", required=True),
    "span_start": Field("str", required=True),
    "span_end": Field("str", required=True),
    "bucket_mm": Field("float"),
    "ladder": Field("floats"),
    "min_count": Field("int", default=20),
    "exclude": Field("strs", default=()),
    "out_sites": Field("str", required=True),
    "out_manifest": Field("str"),
}


def _read_gauge_sites_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["site_id", "lat", "lon", "country", "tips_path"]:
            raise DataError(f"{path}: expected header "
                            f"site_id,lat,lon,country,tips_path, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise DataError(f"{path} line {lineno}: expected 5 columns")
            try:
                rows.append((row[0], float(row[1]), float(row[2]), row[3],
                             row[4]))
            except ValueError:
                raise DataError(f"{path} line {lineno}: non-numeric "
                                "coordinate") from None
    return rows


def _parse_span_time(text: str, key: str) -> float:
    try:
        return datetime.fromisoformat(
            text.replace("Z", "+00:00")).timestamp()
    except ValueError:
        raise ConfigError(f"config key {key!r}: bad ISO8601 time "
                         f"{text!r}") from None


def _cmd_gauge(args) -> None:
    cfg = load_config(args.config, _GAUGE_SCHEMA)
    _require_inputs(cfg, ["sites"])
    _check_output_dirs(cfg, ["out_sites", "out_manifest"])
    ladder = _validate_ladder(cfg["ladder"])
    span = (_parse_span_time(cfg["span_start"], "span_start"),
            _parse_span_time(cfg["span_end"], "span_end"))
    if span[1] <= span[0]:
        raise ConfigError("span_end must be after span_start")
    _config_check(cfg["bucket_mm"] is None or cfg["bucket_mm"] > 0,
                  "bucket_mm must be positive")
    _config_check(cfg["min_count"] >= 1, "min_count must be >= 1")
    excluded = set(cfg["exclude"])

    site_rows = _read_gauge_sites_csv(cfg["sites"])
    for _, _, _, _, tips_path in site_rows:
        if not os.path.isfile(tips_path):
            raise FileNotFoundError(f"input file not found: {tips_path}")

    out_sites = []
    skipped = 0
    for site_id, lat, lon, country, tips_path in site_rows:
        if site_id in excluded:
            skipped += 1
            continue
        tips = gauge.read_tips_csv(tips_path)
        bucket = cfg["bucket_mm"]
        if bucket is None:
            depths = {t.depth for t in tips}
            if len(depths) > 1:
                raise DataError(f"{tips_path}: mixed bucket depths "
                                f"{sorted(depths)}; set bucket_mm")
            bucket = depths.pop() if depths else 0.254
        series = gauge.tips_to_rates(tips, bucket, span)
        series = gauge.qc_filter(series)
        selected = gauge.select_periods(series)
        if selected is None:
            skipped += 1
            continue
        points = gauge.exceedance_stats(selected, ladder, cfg["min_count"])
        if not points:
            skipped += 1
            continue
        years = selected.n_minutes / gauge.MINUTES_PER_YEAR
        out_sites.append(SiteStatistics(site_id, lat, lon, country, years,
                                        tuple(points)))

    rainmodel.write_sites_csv(out_sites, cfg["out_sites"])
    _write_manifest(_manifest_path(cfg, "out_sites"), "gauge", args, cfg,
                    ["sites"], ["out_sites"],
                    notes={"skipped_sites": skipped})


# ---------------------------------------------------------------------------
# eval


_EVAL_SCHEMA = {
    "samples": Field("str", required=True),
    "sites": Field("str"),
    "rec_thresholds": Field("floats",
                            default=tuple(float(t) for t in
                                          range(10, 101, 10))),
    "classify_p": Field("float", default=0.01),
    "threshold": Field("float", default=95.0),
    "out_report": Field("str", required=True),
    "out_rec": Field("str", required=True),
    "out_manifest": Field("str"),
}


def _read_site_countries_csv(path):
    out = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["site_id", "country"]:
            raise DataError(f"{path}: expected header site_id,country, "
                            f"got {header}")
        for row in reader:
            if row:
                out[row[0]] = row[1]
    return out


def _cmd_eval(args) -> None:
    cfg = load_config(args.config, _EVAL_SCHEMA)
    _require_inputs(cfg, ["samples", "sites"])
    _check_output_dirs(cfg, ["out_report", "out_rec", "out_manifest"])
    ts = cfg["rec_thresholds"]
    _config_check(bool(ts) and all(a < b for a, b in zip(ts, ts[1:])),
                  "rec_thresholds must be non-empty and ascending")
    _config_check(0 < cfg["classify_p"] <= 100,
                  "classify_p must be in (0, 100]")
    _config_check(cfg["threshold"] >= 0, "threshold must be >= 0")

    samples = evaluation.read_error_samples_csv(cfg["samples"])
    if not samples:
        raise DataError(f"{cfg['samples']}: no samples")
    rel_pct = [100.0 * evaluation.relative_error(s) for s in samples]
    bias = [evaluation.bias_error(s) for s in samples]

    lines = [f"count={len(samples)}"]

    def _summary_block(prefix, values):
        s = evaluation.p311_summary(values)
        lines.append(f"{prefix}.mean={s.mean:.4f}")
        lines.append(f"{prefix}.sd={s.sd:.4f}")
        lines.append(f"{prefix}.rms={s.rms:.4f}")

    _summary_block("rel_error_pct", rel_pct)
    _summary_block("bias_error_mm_h", bias)
    for p in sorted({s.p for s in samples}):
        sel = [100.0 * evaluation.relative_error(s) for s in samples
               if s.p == p]
        _summary_block(f"p.{p!r}.rel_error_pct", sel)

    classify_rows = [s for s in samples if s.p == cfg["classify_p"]]
    if classify_rows:
        thr = cfg["threshold"]
        actuals = [s.observed > thr for s in classify_rows]
        preds = [s.predicted > thr for s in classify_rows]
        cm = evaluation.confusion(actuals, preds)
        lines.append(f"classify.p={cfg['classify_p']!r}")
        lines.append(f"classify.threshold={thr!r}")
        for name in ("tn", "fp", "fn", "tp"):
            lines.append(f"classify.by_site.{name}={getattr(cm, name)}")
        lines.append(f"classify.by_site.accuracy="
                     f"{evaluation.accuracy(cm):.4f}")
        lines.append(f"classify.by_site.mcc={evaluation.mcc(cm):.4f}")
        if cfg["sites"] is not None:
            countries = _read_site_countries_csv(cfg["sites"])
            records = []
            for s, a, p in zip(classify_rows, actuals, preds):
                if s.site_id not in countries:
                    raise DataError(f"no country for site {s.site_id}")
                records.append((countries[s.site_id], a, p))
            pairs = evaluation.by_country(records)
            ccm = evaluation.confusion([a for a, _ in pairs.values()],
                                       [p for _, p in pairs.values()])
            for name in ("tn", "fp", "fn", "tp"):
                lines.append(f"classify.by_country.{name}="
                             f"{getattr(ccm, name)}")
            lines.append(f"classify.by_country.accuracy="
                         f"{evaluation.accuracy(ccm):.4f}")
            lines.append(f"classify.by_country.mcc="
                         f"{evaluation.mcc(ccm):.4f}")

    fractions = evaluation.rec_curve([abs(e) for e in rel_pct],
                                     cfg["rec_thresholds"])

    with open(cfg["out_report"], "w", newline="", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    with open(cfg["out_rec"], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["threshold_pct", "fraction"])
        for t, frac in zip(cfg["rec_thresholds"], fractions):
            w.writerow([repr(t), repr(frac)])
    _write_manifest(_manifest_path(cfg, "out_report"), "eval", args, cfg,
                    ["samples", "sites"], ["out_report", "out_rec"])


# ---------------------------------------------------------------------------
# impact


_IMPACT_SCHEMA = {
    "mt_grid": Field("str", required=True),
    "p0_grid": Field("str", required=True),
    "params": Field("str", required=True),
    "pop": Field("str", required=True),
    "countries": Field("str", required=True),
    "zones": Field("str"),
    "p": Field("float", default=0.01),
    "threshold": Field("float", default=95.0),
    "out_impact": Field("str", required=True),
    "out_zones": Field("str"),
    "out_manifest": Field("str"),
}


def _cmd_impact(args) -> None:
    cfg = load_config(args.config, _IMPACT_SCHEMA)
    if (cfg["zones"] is None) != (cfg["out_zones"] is None):
        raise ConfigError("zones and out_zones must be given together")
    _require_inputs(cfg, ["mt_grid", "p0_grid", "params", "pop", "countries",
                          "zones"])
    _check_output_dirs(cfg, ["out_impact", "out_zones", "out_manifest"])
    _config_check(0 < cfg["p"] <= 100, "p must be in (0, 100]")
    _config_check(cfg["threshold"] >= 0, "threshold must be >= 0")

    mt = read_grid(cfg["mt_grid"])
    p0 = read_grid(cfg["p0_grid"])
    params = rainmodel.read_params(cfg["params"])
    pop = read_grid(cfg["pop"])
    countries = read_grid(cfg["countries"])

    rates = impact.rate_map(mt, p0, params, cfg["p"])
    mask, nodata_pixels = impact.heavy_mask(rates, cfg["threshold"])
    heavy = impact.zonal_population(pop, mask, countries)
    everywhere = Grid.full(mask.geometry, 1.0)
    totals = impact.zonal_population(pop, everywhere, countries)

    impact_rows = []
    for code in sorted(totals.by_code):
        impact_rows.append([str(code), repr(totals.by_code[code]),
                            repr(heavy.by_code.get(code, 0.0))])
    impact_rows.append(["unassigned", repr(totals.unassigned),
                        repr(heavy.unassigned)])
    impact_rows.append(["total", repr(totals.total), repr(heavy.total)])

    zone_rows = None
    if cfg["zones"] is not None:
        zones = read_grid(cfg["zones"])
        coverage = impact.zone_coverage(zones, pop)
        zone_rows = [[str(code), f"{share.land_pct:.4f}",
                      f"{share.populated_pct:.4f}", f"{share.pop_pct:.4f}"]
                     for code, share in sorted(coverage.items())]

    with open(cfg["out_impact"], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["country_code", "total_pop", "heavy_pop"])
        w.writerows(impact_rows)
    if zone_rows is not None:
        with open(cfg["out_zones"], "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["zone_code", "land_pct", "populated_pct", "pop_pct"])
            w.writerows(zone_rows)
    _write_manifest(_manifest_path(cfg, "out_impact"), "impact", args, cfg,
                    ["mt_grid", "p0_grid", "params", "pop", "countries",
                     "zones"],
                    ["out_impact", "out_zones"],
                    notes={"nodata_rate_pixels": nodata_pixels})


# ---------------------------------------------------------------------------
# entry points


_HANDLERS = {
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "build-clim": _cmd_build_clim,
    "gauge": _cmd_gauge,
    "eval": _cmd_eval,
    "impact": _cmd_impact,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        _HANDLERS[args.command](args)
        return 0
    except ConfigError as e:
        print(f"rainstats: config error: {e}", file=sys.stderr)
        return 1
    except SolverError as e:
        print(f"rainstats: solver error: {e}", file=sys.stderr)
        return 3
    except (DataError, FileNotFoundError, ValueError, OSError) as e:
        print(f"rainstats: data error: {e}", file=sys.stderr)
        return 2


def run() -> None:
    sys.exit(main())
