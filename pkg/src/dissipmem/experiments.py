"""Named experiment recipes and result bundles.

A bundle is a directory holding ``manifest.json`` (config echo, toolkit
version and a git-style SHA-1 of every other file), a per-trajectory CSV, an
aggregated CSV and a fit JSON.  Nothing in a bundle depends on the wall clock
or on the thread count, so re-running a config reproduces it byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, analysis, decoders, engine, oracle
from .config import dump_config
from .lattice import Model, StabilizerConfig, build_geometry
from .rates import RateTable

TRAJ_FILE = "trajectories.csv"
AGG_FILE = "aggregate.csv"
FIT_FILE = "fits.json"
SCAN_FILE = "scan.csv"
SERIES_FILE = "series.csv"
MANIFEST = "manifest.json"
ERROR_FILE = "error.json"

SCAN_COLUMNS = ("noise_rate", "tau", "tau_err", "gamma1", "gamma2", "residual",
                "n_samples")

PLOT_SCHEMAS = {
    "overlap": ("N", "overlap", "stderr", "n_traj"),
    "log-overlap": ("N", "log1m_overlap"),
    "autocorr": ("noise_rate", "tau", "tau_err", "gamma1", "gamma2"),
    "equilibration": ("N", "time", "m"),
    "metastability": ("inv_field_rate", "mean_lifetime", "stderr", "n_censored",
                      "n_traj"),
}


class BundleError(FileNotFoundError):
    """A bundle file needed for plot data is missing or unreadable."""


def git_blob_sha1(data: bytes) -> str:
    """Hash of ``data`` as ``git hash-object`` computes it."""
    h = hashlib.sha1(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def point_seed(seed: int, *tags: int) -> int:
    """Independent 64-bit seed for one grid point of an experiment."""
    ss = np.random.SeedSequence([int(seed), *(int(t) for t in tags)])
    return int(ss.generate_state(1, np.uint64)[0])


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def csv_bytes(columns, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row[c]) for c in columns])
    return buf.getvalue().encode("utf-8")


def _json_clean(obj):
    if isinstance(obj, dict):
        return {str(k): _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def json_bytes(obj) -> bytes:
    return (json.dumps(_json_clean(obj), indent=2, sort_keys=True) + "\n").encode("utf-8")


# -- recipes ---------------------------------------------------------------
# Each recipe returns {filename: bytes}; the runner adds the manifest.

def _engine_config(cfg, seed, t_max, trajectories=None, stride=None):
    return engine.EngineConfig(scheme=cfg["scheme"], seed=seed,
                               n_trajectories=trajectories or cfg["trajectories"],
                               t_max=t_max, record_stride=stride or cfg["record_stride"])


def overlap_point(model, N, noise, t_max, cfg, seed, n_threads=None,
                  relevant="winding_y"):
    """Quench one ensemble from the code state and decode every trajectory."""
    model = Model(model)
    variant = cfg.get("variant", "detailed_balance")
    rates = RateTable.for_model(model, cfg["kappa"], noise, variant)
    geometry = build_geometry(model, N)
    ec = _engine_config(cfg, seed, t_max)
    outcomes = engine.run_ensemble(StabilizerConfig(geometry), rates, ec,
                                   postprocess=lambda r: decoders.decode(r.final),
                                   n_threads=n_threads)
    protocol = "toric2d" if model is Model.TORIC2D else "ising"
    vals = decoders.overlap_values(outcomes, protocol, relevant)
    p = float(vals.mean())
    se = float(math.sqrt(p * (1 - p) / vals.size)) if vals.size > 1 else float("nan")
    agg = {"model": model.value, "noise_rate": float(noise), "N": N, "overlap": p,
           "stderr": se, "n_traj": int(vals.size),
           "n_ties": int(sum(o.tie_flag for o in outcomes))}
    rows = []
    for i, o in enumerate(outcomes):
        rows.append({"model": model.value, "noise_rate": float(noise), "N": N,
                     **o.row(i)})
    return agg, rows


OVERLAP_AGG = ("model", "noise_rate", "N", "overlap", "stderr", "n_traj", "n_ties")
OVERLAP_TRAJ = ("model", "noise_rate", "N") + decoders.CSV_COLUMNS


def _overlap_fits(aggs):
    fits = {}
    for key in sorted({(a["model"], a["noise_rate"]) for a in aggs}):
        pts = sorted((a for a in aggs if (a["model"], a["noise_rate"]) == key),
                     key=lambda a: a["N"])
        sizes = [a["N"] for a in pts]
        ov = [a["overlap"] for a in pts]
        entry = {"sizes": sizes, "overlaps": ov,
                 "monotone_increasing": bool(all(b > a for a, b in zip(ov, ov[1:])))}
        try:
            fit = analysis.overlap_scaling_fit(sizes, ov, [a["n_traj"] for a in pts])
            entry.update({"slope": fit.slope, "intercept": fit.intercept,
                          "slope_ci": list(fit.slope_ci),
                          "ci_excludes_zero": fit.excludes_zero()})
        except (analysis.ResolutionError, ValueError) as exc:
            entry["fit_error"] = str(exc)
        fits[f"{key[0]}@{fmt(key[1])}"] = entry
    return fits


def _run_overlap_grid(cfg, model, sizes, noises, t_max, n_threads, tag=0,
                      relevant="winding_y"):
    aggs, rows = [], []
    for i, noise in enumerate(noises):
        for j, N in enumerate(sizes):
            a, r = overlap_point(model, N, noise, t_max, cfg,
                                 point_seed(cfg["seed"], tag, i, j), n_threads,
                                 relevant)
            aggs.append(a)
            rows.extend(r)
    return aggs, rows


def recipe_overlap(cfg, n_threads=None):
    model = Model.ISING2D if cfg["experiment"] == "ising-overlap" else Model.TORIC2D
    aggs, rows = _run_overlap_grid(cfg, model, cfg["sizes"], cfg["noise_rates"],
                                   cfg["t_max"], n_threads,
                                   relevant=cfg.get("relevant_winding", "winding_y"))
    return {TRAJ_FILE: csv_bytes(OVERLAP_TRAJ, rows),
            AGG_FILE: csv_bytes(OVERLAP_AGG, aggs),
            FIT_FILE: json_bytes(_overlap_fits(aggs))}


def recipe_comparison(cfg, n_threads=None):
    a1, r1 = _run_overlap_grid(cfg, Model.ISING2D, cfg["ising_sizes"],
                               cfg["ising_noise_rates"], cfg["ising_t_max"], n_threads,
                               tag=1)
    a2, r2 = _run_overlap_grid(cfg, Model.TORIC2D, cfg["toric_sizes"],
                               cfg["toric_noise_rates"], cfg["toric_t_max"], n_threads,
                               tag=2, relevant=cfg["relevant_winding"])
    return {TRAJ_FILE: csv_bytes(OVERLAP_TRAJ, r1 + r2),
            AGG_FILE: csv_bytes(OVERLAP_AGG, a1 + a2),
            FIT_FILE: json_bytes(_overlap_fits(a1 + a2))}


def probe_sites(n_sites: int, count: int) -> tuple:
    """``count`` probe sites spread evenly over the lattice."""
    count = max(1, min(count, n_sites))
    return tuple(int(s) for s in np.linspace(0, n_sites, count, endpoint=False))


def recipe_autocorr(cfg, n_threads=None):
    model = Model.ISING2D if cfg["experiment"] == "ising-autocorr" else Model.TORIC4D
    N = cfg["size"]
    probes = (0,)
    if model is Model.ISING2D:
        probes = probe_sites(N * N, cfg["probe_count"])
    ec = engine.EngineConfig(scheme=cfg["scheme"], seed=cfg["seed"],
                             n_trajectories=cfg["trajectories"], t_max=1.0,
                             record_stride=1, probes=probes)
    scan = analysis.critical_scan(model, cfg["noise_rates"], ec, N, cfg["kappa"],
                                  cfg["variant"], max_lag=cfg["max_lag"],
                                  n_boot=cfg["bootstrap"], n_threads=n_threads,
                                  keep_estimates=True, observable=cfg["observable"],
                                  global_steps=cfg["global_steps"],
                                  burn_in_steps=cfg["burn_in_steps"])
    rows = []
    for p in scan.points:
        if p.estimate is None or p.estimate.per_series is None:
            continue
        for k, chi in enumerate(p.estimate.per_series):
            rows.append({"noise_rate": p.noise_rate, "series_index": k,
                         "chi0": float(chi[0]), "chi1": float(chi[1])})
    fits = {"peak": scan.peak, "peak_index": scan.peak_index, "interior": scan.interior,
            "probes": list(probes), "points": []}
    for p in scan.points:
        fits["points"].append({
            "noise_rate": p.noise_rate, "error": p.error,
            "single": p.single.to_dict() if p.single else None,
            "double": p.double.to_dict() if p.double else None})
    table = scan.table()
    return {TRAJ_FILE: csv_bytes(("noise_rate", "series_index", "chi0", "chi1"), rows),
            AGG_FILE: csv_bytes(SCAN_COLUMNS, table),
            SCAN_FILE: csv_bytes(SCAN_COLUMNS, table),
            FIT_FILE: json_bytes(fits)}


def recipe_metastability(cfg, n_threads=None):
    N = cfg["size"]
    geometry = build_geometry(Model.ISING2D, N)
    start = StabilizerConfig(geometry, np.ones(geometry.n_sites, dtype=np.uint8))
    rows, aggs = [], []
    pool_threads = engine.default_threads() if n_threads is None else n_threads
    for i, fr in enumerate(sorted(cfg["field_rates"])):
        rates = RateTable.for_model(Model.ISING2D, cfg["kappa"], cfg["noise"],
                                    cfg["variant"], field_rate=fr)
        seed = point_seed(cfg["seed"], 3, i)

        def one(k):
            return engine.first_passage_time(start, rates, seed, k, cfg["t_max"])

        with ThreadPoolExecutor(max_workers=max(1, pool_threads)) as pool:
            times = list(pool.map(one, range(cfg["trajectories"])))
        for k, t in enumerate(times):
            rows.append({"field_rate": fr, "traj_index": k,
                         "time": cfg["t_max"] if t is None else t,
                         "censored": t is None})
        done = np.array([cfg["t_max"] if t is None else t for t in times])
        aggs.append({"field_rate": fr, "inv_field_rate": 1.0 / fr,
                     "mean_lifetime": float(done.mean()),
                     "median_lifetime": float(np.median(done)),
                     "stderr": float(done.std(ddof=1) / math.sqrt(done.size))
                     if done.size > 1 else float("nan"),
                     "n_censored": int(sum(t is None for t in times)),
                     "n_traj": len(times)})
    inv = np.array([a["inv_field_rate"] for a in aggs])
    life = np.array([a["mean_lifetime"] for a in aggs])
    fits = {"censoring_time": cfg["t_max"], "points": len(aggs)}
    if len(aggs) >= 2:
        slope, icpt = np.polyfit(inv, np.log(life), 1)
        fits.update({"log_lifetime_slope": float(slope), "log_lifetime_intercept":
                     float(icpt)})
    cols = ("field_rate", "inv_field_rate", "mean_lifetime", "median_lifetime",
            "stderr", "n_censored", "n_traj")
    return {TRAJ_FILE: csv_bytes(("field_rate", "traj_index", "time", "censored"), rows),
            AGG_FILE: csv_bytes(cols, aggs),
            FIT_FILE: json_bytes(fits)}


def equilibration_point(N, cfg, seed, n_threads=None, absolute=None):
    """Ensemble-mean magnetization series from a Bernoulli start.

    Returns ``(times, mean_series, final_magnetizations)``.  ``absolute``
    selects the mean of ``|m|``; by default it is used only for the unbiased
    start, where the signed mean vanishes identically.
    """
    if absolute is None:
        absolute = cfg["p_flip"] == 0.5
    rates = RateTable.for_model(Model.ISING2D, cfg["kappa"], cfg["noise"], cfg["variant"])
    geometry = build_geometry(Model.ISING2D, N)
    ec = _engine_config(cfg, seed, cfg["t_max"], stride=cfg.get("record_stride", 10))
    recs = engine.run_ensemble(engine.BernoulliStart(cfg["p_flip"]), rates, ec,
                               geometry=geometry, n_threads=n_threads,
                               postprocess=lambda r: (r.times, r.magnetization))
    times = recs[0][0]
    m = np.vstack([r[1] for r in recs])
    series = np.abs(m).mean(axis=0) if absolute else m.mean(axis=0)
    return times, series, m[:, -1]


def recipe_equilibration(cfg, n_threads=None):
    obs = cfg["observable"]
    absolute = None if obs == "auto" else obs == "absolute"
    rows, aggs, series_rows = [], [], []
    for j, N in enumerate(cfg["sizes"]):
        t, s, final = equilibration_point(N, cfg, point_seed(cfg["seed"], 4, j),
                                          n_threads, absolute)
        eq = analysis.equilibration_time(t, s, cfg["eps"])
        aggs.append({"N": N, "equilibration_time": eq.time, "m_ss": eq.m_ss,
                     "censored": eq.censored})
        series_rows.extend({"N": N, "time": float(a), "m": float(b)} for a, b in zip(t, s))
        rows.extend({"N": N, "traj_index": k, "final_magnetization": float(v)}
                    for k, v in enumerate(final))
    fits = {"eps": cfg["eps"], "sizes": cfg["sizes"],
            "times": [a["equilibration_time"] for a in aggs]}
    done = [(a["N"], a["equilibration_time"]) for a in aggs
            if a["equilibration_time"] is not None and a["equilibration_time"] > 0]
    if len(done) >= 2:
        fits["growth_exponent"] = analysis.growth_exponent([d[0] for d in done],
                                                           [d[1] for d in done])
    return {TRAJ_FILE: csv_bytes(("N", "traj_index", "final_magnetization"), rows),
            AGG_FILE: csv_bytes(("N", "equilibration_time", "m_ss", "censored"), aggs),
            SERIES_FILE: csv_bytes(("N", "time", "m"), series_rows),
            FIT_FILE: json_bytes(fits)}


def recipe_oracle(cfg, n_threads=None):
    results = oracle.run_verification()
    rows = [{"name": r.name, "residual": r.residual, "comparison": r.comparison,
             "tolerance": r.tolerance, "passed": r.passed} for r in results]
    return {AGG_FILE: csv_bytes(("name", "residual", "comparison", "tolerance",
                                 "passed"), rows),
            FIT_FILE: (oracle.report_json(results) + "\n").encode("utf-8")}


RECIPES = {
    "ising-overlap": recipe_overlap,
    "tc2d-overlap": recipe_overlap,
    "tc2d-vs-ising": recipe_comparison,
    "ising-autocorr": recipe_autocorr,
    "tc4d-autocorr": recipe_autocorr,
    "ising-metastability": recipe_metastability,
    "ising-equilibration": recipe_equilibration,
    "oracle-verify": recipe_oracle,
}


def manifest(cfg: dict, files: dict) -> bytes:
    return json_bytes({
        "toolkit": "dissipmem",
        "version": __version__,
        "experiment": cfg["experiment"],
        "config": cfg,
        "config_toml": dump_config(cfg),
        "files": {name: {"sha1": git_blob_sha1(data), "bytes": len(data)}
                  for name, data in sorted(files.items())},
    })


def run_experiment(cfg: dict, out_dir=None, n_threads=None) -> Path:
    """Run a validated config and write its bundle; returns the bundle path."""
    cfg = dict(cfg)
    if out_dir is not None:
        cfg["output_dir"] = str(out_dir)
    out = Path(cfg["output_dir"])
    files = RECIPES[cfg["experiment"]](cfg, n_threads)
    out.mkdir(parents=True, exist_ok=True)
    stale = out / ERROR_FILE
    if stale.exists():
        stale.unlink()
    for name, data in files.items():
        (out / name).write_bytes(data)
    (out / MANIFEST).write_bytes(manifest(cfg, files))
    return out


def write_error(out_dir, cfg: dict | None, exc: BaseException) -> bytes:
    """Machine-readable failure record; written to ``out_dir`` when given."""
    payload = json_bytes({
        "error": type(exc).__name__,
        "module": type(exc).__module__,
        "message": str(exc),
        "experiment": (cfg or {}).get("experiment"),
        "details": getattr(exc, "errors", None),
    })
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / ERROR_FILE).write_bytes(payload)
    return payload


# -- plot data --------------------------------------------------------------

def _read_csv(path: Path) -> list:
    if not path.is_file():
        raise BundleError(f"missing bundle file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _select(rows, key, value, label):
    values = sorted({r[key] for r in rows}, key=float if key != "model" else str)
    if value is None:
        if len(values) > 1:
            flag = "--model" if key == "model" else "--noise"
            raise ValueError(f"bundle has several {label} values {values}; "
                             f"pick one with {flag}")
        return rows
    sel = [r for r in rows if (r[key] == value if key == "model"
                               else math.isclose(float(r[key]), float(value)))]
    if not sel:
        raise ValueError(f"no rows with {label} = {value}; available {values}")
    return sel


def emit_plotdata(bundle, figure: str, noise=None, model=None):
    """Plot-ready rows for ``figure``.

    Returns ``(columns, rows, skipped)``; ``skipped`` counts rows dropped by the
    ``log-overlap`` rule (an overlap of exactly 1 has no logarithm).
    """
    bundle = Path(bundle)
    if figure not in PLOT_SCHEMAS:
        raise ValueError(f"unknown figure {figure!r}; choose from {sorted(PLOT_SCHEMAS)}")
    if not bundle.is_dir():
        raise BundleError(f"missing bundle directory: {bundle}")
    cols = PLOT_SCHEMAS[figure]
    skipped = 0
    if figure in ("overlap", "log-overlap"):
        rows = _read_csv(bundle / AGG_FILE)
        if rows and "overlap" not in rows[0]:
            raise ValueError(f"{bundle / AGG_FILE} is not an overlap table")
        rows = _select(rows, "model", model, "model")
        rows = _select(rows, "noise_rate", noise, "noise_rate")
        rows = sorted(rows, key=lambda r: int(r["N"]))
        if figure == "overlap":
            out = [{c: r[c] for c in cols} for r in rows]
        else:
            out = []
            for r in rows:
                p = float(r["overlap"])
                if p >= 1.0:
                    skipped += 1
                    continue
                out.append({"N": r["N"], "log1m_overlap": fmt(math.log1p(-p))})
    elif figure == "autocorr":
        rows = _read_csv(bundle / SCAN_FILE)
        out = [{c: r[c] for c in cols} for r in rows]
    elif figure == "equilibration":
        out = [{c: r[c] for c in cols} for r in _read_csv(bundle / SERIES_FILE)]
    else:
        rows = _read_csv(bundle / AGG_FILE)
        if rows and "inv_field_rate" not in rows[0]:
            raise ValueError(f"{bundle / AGG_FILE} is not a metastability table")
        rows = sorted(rows, key=lambda r: float(r["inv_field_rate"]))
        out = [{c: r[c] for c in cols} for r in rows]
    return cols, out, skipped
