import csv
import os

import numpy as np
import pytest

from rainstats import cli
from rainstats.climatology import SwathObservation, write_observations_csv
from rainstats.gauge import TipEvent, write_tips_csv
from rainstats.rainmodel import (ClimatePoint, ModelParams, SiteStatistics,
                                 estimate_site_curve, rain_rate,
                                 read_params, write_params, write_sites_csv)
from rainstats.raster import Grid, GridGeometry, write_grid

ND = -9999.0
PARAMS = ModelParams(1.0, 20000.0, 26.0)


def run_cli(*argv):
    return cli.main(list(argv))


def write_config(path, **kv):
    path.write_text("".join(f"{k}={v}\n" for k, v in kv.items()))


def read_report(path):
    out = {}
    for line in path.read_text().splitlines():
        key, _, value = line.partition("=")
        out[key] = value
    return out


# ---------------------------------------------------------------------------
# fit


def _write_fit_inputs(tmp_path, n_sites=5):
    rng = np.random.default_rng(61)
    sites, climate_rows = [], []
    for i in range(n_sites):
        climate = ClimatePoint(float(rng.uniform(400, 3000)),
                               float(rng.uniform(1, 9)))
        points = tuple((p, r) for p, r in estimate_site_curve(climate, PARAMS)
                       if r > 0)
        sites.append(SiteStatistics(f"s{i}", 0.0, 0.0, "NA", 5.0, points))
        climate_rows.append((f"s{i}", climate.mt, climate.p0))
    write_sites_csv(sites, tmp_path / "train_sites.csv")
    with open(tmp_path / "train_climate.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["site_id", "mt_mm", "p0_percent"])
        for sid, mt, p0 in climate_rows:
            w.writerow([sid, repr(mt), repr(p0)])
    return sites


def test_fit_end_to_end(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    sites = _write_fit_inputs(tmp_path)
    write_config(tmp_path / "fit.cfg", sites="train_sites.csv",
                 climate="train_climate.csv", out_params="params.txt",
                 out_residuals="residuals.csv", out_report="fit_report.txt")
    assert run_cli("fit", "--config", "fit.cfg") == 0

    report = read_report(tmp_path / "fit_report.txt")
    assert float(report["objective"]) < 1e-6
    fitted = read_params(tmp_path / "params.txt")
    assert fitted.x > 0 and fitted.y > 0 and fitted.z > 0

    with open(tmp_path / "residuals.csv", newline="") as f:
        rows = list(csv.reader(f))
    expected_rows = sum(sum(1 for _, r in s.points if r > 0) for s in sites)
    assert rows[0] == ["site_id", "p_percent", "observed", "predicted",
                       "rel_error"]
    assert len(rows) - 1 == expected_rows
    assert os.path.exists(tmp_path / "params.txt.manifest")


def test_fit_missing_input_exits_2_without_outputs(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    write_config(tmp_path / "fit.cfg", sites="absent.csv",
                 climate="also_absent.csv", out_params="params.txt",
                 out_residuals="residuals.csv", out_report="fit_report.txt")
    assert run_cli("fit", "--config", "fit.cfg") == 2
    for name in ("params.txt", "residuals.csv", "fit_report.txt",
                 "params.txt.manifest"):
        assert not os.path.exists(tmp_path / name)


def test_unknown_config_key_exits_1(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    write_config(tmp_path / "fit.cfg", sites="a.csv", climate="b.csv",
                 out_params="p", out_residuals="r", out_report="q",
                 bogus_key="1")
    assert run_cli("fit", "--config", "fit.cfg") == 1


def test_usage_error_exits_1():
    assert run_cli("fit") == 1          # missing --config
    assert run_cli() == 1               # missing subcommand


def test_bad_config_values_exit_1(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    _write_clim_config(tmp_path, "c.cfg")
    text = (tmp_path / "c.cfg").read_text()
    (tmp_path / "c.cfg").write_text(text.replace("k_gauss=5", "k_gauss=4"))
    assert run_cli("build-clim", "--config", "c.cfg") == 1

    (tmp_path / "samples.csv").write_text(
        "site_id,p_percent,observed,predicted\na,0.01,50.0,60.0\n")
    write_config(tmp_path / "e.cfg", samples="samples.csv",
                 out_report="m.txt", out_rec="r.csv",
                 rec_thresholds="50,10")
    assert run_cli("eval", "--config", "e.cfg") == 1


# ---------------------------------------------------------------------------
# predict


def test_predict_matches_library_curves(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    g = GridGeometry(10, 10, 0.0, 0.0, 0.5, ND)
    rng = np.random.default_rng(62)
    mt = Grid(g, rng.uniform(300, 3000, 100))
    p0 = Grid(g, rng.uniform(1, 9, 100))
    write_grid(mt, tmp_path / "mt.grd")
    write_grid(p0, tmp_path / "p0.grd")
    write_params(PARAMS, tmp_path / "params.txt")
    with open(tmp_path / "locs.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["site_id", "lat", "lon", "country"])
        w.writerow(["a", "2.25", "2.25", "XX"])
        w.writerow(["b", "1.1", "3.7", "YY"])
    write_config(tmp_path / "p.cfg", mt_grid="mt.grd", p0_grid="p0.grd",
                 params="params.txt", locations="locs.csv",
                 out_sites="pred.csv", ladder="0.01,0.1,1")
    assert run_cli("predict", "--config", "p.cfg") == 0

    from rainstats.raster import sample_bilinear
    from rainstats.rainmodel import read_sites_csv
    out = read_sites_csv(tmp_path / "pred.csv")
    assert [s.site_id for s in out] == ["a", "b"]
    for s in out:
        climate = ClimatePoint(sample_bilinear(mt, s.lat, s.lon),
                               sample_bilinear(p0, s.lat, s.lon))
        expected = estimate_site_curve(climate, PARAMS, (0.01, 0.1, 1.0))
        assert list(s.points) == expected


# ---------------------------------------------------------------------------
# build-clim


def _write_clim_config(tmp_path, cfg_name="c.cfg"):
    g = GridGeometry(16, 16, 30.0, 9.0, 1.0 / 120.0, ND)
    rng = np.random.default_rng(63)
    t, stream = 0.0, []
    for _ in range(80):
        t += float(rng.uniform(0, 150))
        stream.append(SwathObservation(
            t, float(rng.uniform(9.02, 9.11)), float(rng.uniform(30.02, 30.11)),
            float(rng.uniform(0, 15)), bool(rng.uniform() < 0.6), 4.5))
    write_observations_csv(stream, tmp_path / "obs.csv")
    write_grid(Grid.full(g, 900.0), tmp_path / "ref.grd")
    write_grid(Grid(g, rng.uniform(0, 1500, 256)), tmp_path / "elev.grd")
    write_config(tmp_path / cfg_name, observations="obs.csv",
                 reference_mt="ref.grd", elevation="elev.grd",
                 ncols=g.ncols, nrows=g.nrows, xll=g.xll, yll=g.yll,
                 cell=g.cell, nodata=g.nodata, k_uniform=9, k_gauss=5,
                 out_mt="mt.grd", out_p0="p0.grd", out_report="report.txt")


def test_build_clim_rerun_identical_bytes(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    _write_clim_config(tmp_path)
    assert run_cli("build-clim", "--config", "c.cfg") == 0
    outputs = ["mt.grd", "p0.grd", "report.txt", "mt.grd.manifest"]
    first = {name: (tmp_path / name).read_bytes() for name in outputs}
    assert run_cli("build-clim", "--config", "c.cfg", "--threads", "8") == 0
    for name in outputs:
        assert (tmp_path / name).read_bytes() == first[name]


# ---------------------------------------------------------------------------
# gauge


def test_gauge_end_to_end(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    start = 1104537600.0  # 2005-01-01T00:00:00Z
    tips = []
    t = start + 86400.0
    for _ in range(500):
        for i in range(30):
            tips.append(TipEvent(t + 60.0 * i, 0.254))
        t += 86400.0 * 0.8
    write_tips_csv(tips, tmp_path / "tips_a.csv")
    with open(tmp_path / "gsites.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["site_id", "lat", "lon", "country", "tips_path"])
        w.writerow(["a", "6.5", "3.4", "NGA", "tips_a.csv"])
        w.writerow(["b", "6.6", "3.5", "NGA", "tips_a.csv"])
    write_config(tmp_path / "g.cfg", sites="gsites.csv",
                 span_start="2005-01-01T00:00:00Z",
                 span_end="2006-06-01T00:00:00Z",
                 exclude="b", out_sites="stats.csv")
    assert run_cli("gauge", "--config", "g.cfg") == 0

    from rainstats.rainmodel import read_sites_csv
    out = read_sites_csv(tmp_path / "stats.csv")
    assert [s.site_id for s in out] == ["a"]  # b was excluded
    assert out[0].points
    rates = [r for _, r in out[0].points]
    assert all(x >= y for x, y in zip(rates, rates[1:]))
    assert out[0].duration_years == pytest.approx(1.0, abs=0.01)


# ---------------------------------------------------------------------------
# eval


def _write_eval_samples(tmp_path):
    # two samples realizing the reference summary row (-3.1, 30.9, 31.0) at
    # display precision,
    # plus a 20-country classification block at p = 0.01
    rows = [["site_id", "p_percent", "observed", "predicted"]]
    rows.append(["ovr1", "1.0", "100.0", repr(100.0 - 33.98)])
    rows.append(["ovr2", "1.0", "100.0", repr(100.0 + 27.78)])

    combos = ([("tn", False, False)] * 6 + [("fp", False, True)] * 1
              + [("fn", True, False)] * 5 + [("tp", True, True)] * 8)
    site_rows = [["site_id", "country"]]
    for i, (kind, actual, predicted) in enumerate(combos):
        sid = f"c{i:02d}"
        obs = 120.0 if actual else 60.0
        pred = 120.0 if predicted else 60.0
        rows.append([sid, "0.01", repr(obs), repr(pred)])
        site_rows.append([sid, f"CTY{i:02d}"])

    with open(tmp_path / "samples.csv", "w", newline="") as f:
        csv.writer(f, lineterminator="\n").writerows(rows)
    with open(tmp_path / "countries.csv", "w", newline="") as f:
        csv.writer(f, lineterminator="\n").writerows(site_rows)


def test_eval_report_and_rec(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    _write_eval_samples(tmp_path)
    write_config(tmp_path / "e.cfg", samples="samples.csv",
                 sites="countries.csv", out_report="metrics.txt",
                 out_rec="rec.csv", rec_thresholds="10,20,50,100")
    assert run_cli("eval", "--config", "e.cfg") == 0
    report = read_report(tmp_path / "metrics.txt")

    # the two p=1% rows carry mean -3.1%, sd 30.88%: rms prints as 31.0
    block = report["p.1.0.rel_error_pct.rms"]
    assert abs(float(block) - 31.0) <= 0.05
    assert f"{float(block):.1f}" == "31.0"
    assert float(report["p.1.0.rel_error_pct.mean"]) == pytest.approx(-3.1)
    assert float(report["p.1.0.rel_error_pct.sd"]) == pytest.approx(30.88)

    # by-country confusion equals the constructed 6/1/5/8 split
    assert report["classify.by_country.tn"] == "6"
    assert report["classify.by_country.fp"] == "1"
    assert report["classify.by_country.fn"] == "5"
    assert report["classify.by_country.tp"] == "8"
    assert abs(float(report["classify.by_country.accuracy"]) - 0.70) <= 0.005
    assert abs(float(report["classify.by_country.mcc"]) - 0.45) <= 0.005

    with open(tmp_path / "rec.csv", newline="") as f:
        rec_rows = list(csv.reader(f))
    assert rec_rows[0] == ["threshold_pct", "fraction"]
    fractions = [float(r[1]) for r in rec_rows[1:]]
    assert fractions == sorted(fractions)
    assert fractions[-1] == 1.0


# ---------------------------------------------------------------------------
# impact


def test_impact_matches_hand_tabulation(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    g = GridGeometry(4, 4, 0.0, 0.0, 1.0, ND)
    mt_vals = np.array([[3500.0, 3500.0, 400.0, 400.0]] * 4)
    p0_vals = np.full((4, 4), 5.0)
    pop_vals = np.arange(16, dtype=float).reshape(4, 4)
    country_vals = np.array([[1, 1, 2, 2]] * 4, dtype=float)
    write_grid(Grid(g, mt_vals), tmp_path / "mt.grd")
    write_grid(Grid(g, p0_vals), tmp_path / "p0.grd")
    write_grid(Grid(g, pop_vals), tmp_path / "pop.grd")
    write_grid(Grid(g, country_vals), tmp_path / "countries.grd")
    zone_vals = np.array([[9, 9, 8, 8]] * 4, dtype=float)
    write_grid(Grid(g, zone_vals), tmp_path / "zones.grd")
    write_params(PARAMS, tmp_path / "params.txt")
    write_config(tmp_path / "i.cfg", mt_grid="mt.grd", p0_grid="p0.grd",
                 params="params.txt", pop="pop.grd",
                 countries="countries.grd", zones="zones.grd",
                 out_impact="impact.csv", out_zones="zones.csv")

    heavy_west = rain_rate(0.01, ClimatePoint(3500.0, 5.0), PARAMS) > 95.0
    heavy_east = rain_rate(0.01, ClimatePoint(400.0, 5.0), PARAMS) > 95.0
    assert heavy_west and not heavy_east

    assert run_cli("impact", "--config", "i.cfg") == 0
    with open(tmp_path / "impact.csv", newline="") as f:
        rows = {r[0]: (float(r[1]), float(r[2]))
                for r in list(csv.reader(f))[1:]}
    west_pop = pop_vals[:, :2].sum()
    east_pop = pop_vals[:, 2:].sum()
    assert rows["1"] == (west_pop, west_pop)  # all heavy
    assert rows["2"] == (east_pop, 0.0)       # none heavy
    assert rows["total"] == (pop_vals.sum(), west_pop)

    with open(tmp_path / "zones.csv", newline="") as f:
        zrows = {r[0]: [float(v) for v in r[1:]]
                 for r in list(csv.reader(f))[1:]}
    assert zrows["9"][0] == pytest.approx(50.0)
    assert zrows["8"][2] == pytest.approx(100.0 * east_pop / pop_vals.sum())


def test_impact_solver_failure_exits_3(tmp_path, monkeypatch):
    # a nearly flat exceedance tail keeps P(10000 mm/h) above the target
    # probability, so the inversion hits its bracket cap
    monkeypatch.chdir(tmp_path)
    g = GridGeometry(2, 2, 0.0, 0.0, 1.0, ND)
    write_grid(Grid.full(g, 4000.0), tmp_path / "mt.grd")
    write_grid(Grid.full(g, 10.0), tmp_path / "p0.grd")
    write_grid(Grid.full(g, 1.0), tmp_path / "pop.grd")
    write_grid(Grid.full(g, 1.0), tmp_path / "countries.grd")
    write_params(ModelParams(1e-4, 20000.0, 1000.0), tmp_path / "params.txt")
    write_config(tmp_path / "i.cfg", mt_grid="mt.grd", p0_grid="p0.grd",
                 params="params.txt", pop="pop.grd",
                 countries="countries.grd", out_impact="impact.csv")
    assert run_cli("impact", "--config", "i.cfg") == 3
    assert not os.path.exists(tmp_path / "impact.csv")


def test_eval_malformed_samples_exits_2(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "samples.csv").write_text(
        "site_id,p_percent,observed,predicted\na,0.01,oops,1.0\n")
    write_config(tmp_path / "e.cfg", samples="samples.csv",
                 out_report="metrics.txt", out_rec="rec.csv")
    assert run_cli("eval", "--config", "e.cfg") == 2
    assert not os.path.exists(tmp_path / "metrics.txt")


def test_impact_requires_paired_zone_keys(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    write_config(tmp_path / "i.cfg", mt_grid="a", p0_grid="b", params="c",
                 pop="d", countries="e", zones="f",
                 out_impact="impact.csv")
    assert run_cli("impact", "--config", "i.cfg") == 1


# ---------------------------------------------------------------------------
# determinism across seeds and thread counts


def test_eval_rerun_identical_bytes(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    _write_eval_samples(tmp_path)
    write_config(tmp_path / "e.cfg", samples="samples.csv",
                 out_report="metrics.txt", out_rec="rec.csv")
    assert run_cli("eval", "--config", "e.cfg", "--seed", "7") == 0
    blobs = {n: (tmp_path / n).read_bytes()
             for n in ("metrics.txt", "rec.csv", "metrics.txt.manifest")}
    assert run_cli("eval", "--config", "e.cfg", "--seed", "7",
                   "--threads", "4") == 0
    for n, blob in blobs.items():
        assert (tmp_path / n).read_bytes() == blob
