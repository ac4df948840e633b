"""Command-line experiment runner.

Every run writes plain CSV tables plus ``manifest.json`` (resolved config,
package version and SHA-256 of every output) into ``--out``. Realization
``i`` always uses seed ``seed + i``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, ConfigError, ExperimentConfig, load_config, validate
from .critical import (
    EtaFromAutocorrelation,
    EtaFromFractal,
    EtaFromReturn,
    autocorrelation,
    coarse_grain_moment,
    eigenstate_distributions,
    powers_of_two,
    return_probabilities,
)
from .disorder import clean_invariant
from .evolve import (
    PointSourceRun,
    PositionDistribution,
    average_over_disorder,
    classicalize,
    fit_diffusive,
    fit_localized,
    geometric_snapshots,
    run_point_source,
    variance_series,
)
from .scatter import (
    averaged_transmission,
    build_geometry,
    invariant_from_transmission,
    round_invariant,
    transmission_at_energy,
    transmission_series,
)
from .spectral import block_eigenvalues, build_u2_block, classify_statistics, spacings_from_block, tail_analysis
from .validation import DegenerateFitError

__all__ = ["main", "run"]

log = logging.getLogger("splitwalk")

EXIT_RUNTIME, EXIT_CONFIG, EXIT_CAP = 1, 3, 4


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


class _Outputs:
    """Single writer for all result files of one run."""

    def __init__(self, root: Path):
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)
        self.files = []

    def csv(self, name: str, header, rows):
        path = self.root / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.files.append(name)
        return path

    def manifest(self, cfg: ExperimentConfig, started: float):
        sums = {}
        for name in self.files:
            sums[name] = hashlib.sha256((self.root / name).read_bytes()).hexdigest()
        doc = {
            "package": "splitwalk",
            "version": __version__,
            "experiment": cfg.experiment,
            "config": cfg.to_dict(),
            "files": sums,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
            "elapsed_s": round(time.time() - started, 3),
        }
        with open(self.root / "manifest.json", "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _map(fn, jobs, workers: int) -> list:
    """Ordered map; results come back in job order whatever the worker count."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


# --- evolve -------------------------------------------------------------------


def _evolve_job(spec, extents, t_max, snapshots, mode):
    if mode == "quantum":
        run = run_point_source(spec, extents, t_max, snapshots)
    else:
        run = classicalize(spec, extents, t_max, snapshots, mode=mode)
    return [(d.probability, d.p_leave) for d in run.distributions]


def _run_evolve(cfg: ExperimentConfig, out: _Outputs):
    t_max = cfg.resolved_t_max()
    snaps = sorted(set(cfg.snapshots) | {t_max}) if cfg.snapshots else geometric_snapshots(t_max)
    specs = [cfg.disorder_spec(cfg.seed + i) for i in range(cfg.realizations)]
    results = _map(_evolve_job, [(s, cfg.extents, t_max, snaps, cfg.mode) for s in specs], cfg.workers)

    def runner(spec, extents, t_max, snapshots):
        res = results[spec.seed - cfg.seed]
        origin = (extents[0] // 2, extents[1] // 2)
        dists = [PositionDistribution(p, t, origin, 1, leave) for (p, leave), t in zip(res, snapshots)]
        return PointSourceRun(dists, res[-1][1], np.array([r[1] for r in res]))

    dists = average_over_disorder(specs, cfg.extents, t_max, snaps, runner)
    series = variance_series(dists)
    out.csv("variance.csv", ["t", "variance", "rms", "p_leave"],
            [(d.t, v, r, d.p_leave) for d, v, r in zip(dists, series.variance, series.rms)])
    final = dists[-1]
    a, b = final.cell_coordinates()
    mask = final.occupied_mask()
    out.csv("distribution.csv", ["n_plus", "n_minus", "p"],
            zip(a[mask], b[mask], final.probability[mask]))
    for axis in ("plus", "minus"):
        x, p = final.cut(axis)
        out.csv(f"cut_{axis}.csv", ["x", "p"], zip(x, p))
    rows = [("power_law", "exponent", series.exponent, series.exponent_err),
            ("power_law", "prefactor", series.prefactor, series.prefactor_err)]
    for fitter in (fit_localized, fit_diffusive):
        try:
            fit = fitter(final)
        except DegenerateFitError as exc:
            log.warning("%s skipped: %s", fitter.__name__, exc)
            continue
        for k, v in fit.parameters.items():
            rows.append((fit.model, k, v, fit.errors.get(k, float("nan"))))
        for k, v in fit.goodness.items():
            rows.append((fit.model, k, v, float("nan")))
    out.csv("fit.csv", ["model", "key", "value", "error"], rows)


# --- scatter ------------------------------------------------------------------


def _scatter_job(spec, L_x, L_y, cut, t_max):
    geom, coins = build_geometry(L_x, L_y, cut, spec.generate((L_x, L_y)))
    rec = transmission_series(geom, coins, None, t_max, keep_series=False)
    return averaged_transmission(rec, warn=False)


def _scatter_rows(cfg: ExperimentConfig):
    sizes = cfg.sizes or ((cfg.L_x, cfg.L_y),)
    jobs, keys = [], []
    for th1, th2 in cfg.theta_points():
        for lx, ly in sizes:
            tm = cfg.resolved_t_max() if len(sizes) == 1 else replace(cfg, L_x=lx, L_y=ly, t_max=None).resolved_t_max()
            for cut in cfg.cuts:
                for i in range(cfg.realizations):
                    spec = replace(cfg, theta1=th1, theta2=th2).disorder_spec(cfg.seed + i)
                    jobs.append((spec, lx, ly, cut, tm))
                    keys.append((th1, th2, cut, lx, ly, spec.seed, tm))
    return keys, _map(_scatter_job, jobs, cfg.workers)


def _run_scatter(cfg: ExperimentConfig, out: _Outputs):
    keys, results = _scatter_rows(cfg)
    rows = []
    table = {}
    for (th1, th2, cut, lx, ly, seed, tm), res in zip(keys, results):
        if not res["converged"]:
            log.warning("t_max=%d leaves %.3g in the system at L=(%d,%d)", tm, 1 - res["min_absorbed"], lx, ly)
        rows.append((th1, th2, cut, lx, ly, seed, res["even"], res["odd"], res["total"]))
        table[(th1, th2, cut, lx, ly, seed)] = res
    out.csv("transmission.csv", ["theta1", "theta2", "cut", "L_x", "L_y", "seed", "T_even", "T_odd", "T_total"], rows)

    if "A" in cfg.cuts and "B" in cfg.cuts:
        inv = []
        for (th1, th2, cut, lx, ly, seed), res in table.items():
            if cut != "A":
                continue
            nu = invariant_from_transmission(res["total"], table[(th1, th2, "B", lx, ly, seed)]["total"])
            inv.append((th1, th2, lx, ly, seed, nu, round_invariant(nu)[0], clean_invariant(th1, th2)))
        out.csv("invariant.csv", ["theta1", "theta2", "L_x", "L_y", "seed", "nu", "nu_rounded", "nu_clean"], inv)

    sizes = cfg.sizes or ((cfg.L_x, cfg.L_y),)
    if len(sizes) > 1:
        srows, summary = [], []
        for th1, th2 in cfg.theta_points():
            for cut in cfg.cuts:
                means = []
                for lx, ly in sizes:
                    vals = np.array([v["total"] for k, v in table.items() if k[:5] == (th1, th2, cut, lx, ly)])
                    means.append(vals.mean())
                    sem = vals.std(ddof=1) / np.sqrt(vals.size) if vals.size > 1 else float("nan")
                    srows.append((th1, th2, cut, lx, ly, vals.mean(), sem))
                Lx = np.array([s[0] for s in sizes], float)
                if np.all(np.asarray(means) > 0):
                    slope = float(np.polyfit(Lx, np.log(means), 1)[0])
                    label = "insulating" if np.exp(slope * (Lx.max() - Lx.min())) < 0.5 else "diffusive"
                else:
                    slope, label = float("nan"), "undetermined"
                summary.append((th1, th2, cut, slope, label))
        out.csv("scaling.csv", ["theta1", "theta2", "cut", "L_x", "L_y", "T_mean", "T_sem"], srows)
        out.csv("scaling_summary.csv", ["theta1", "theta2", "cut", "slope", "classification"], summary)

    if len(cfg.theta_points()) == 1 and len(sizes) == 1:
        # energy-resolved view for a single setting, first realization only
        spec = cfg.disorder_spec(cfg.seed)
        for cut in cfg.cuts:
            geom, coins = build_geometry(cfg.L_x, cfg.L_y, cut, spec.generate((cfg.L_x, cfg.L_y)))
            rec = transmission_series(geom, coins, None, cfg.resolved_t_max())
            er = transmission_at_energy(rec)
            out.csv(f"energy_{cut}.csv", ["epsilon", "T"], zip(er.epsilon, er.T))
            counts, edges = np.histogram(er.eigenvalues.ravel(), bins=50, range=(0.0, 1.0))
            out.csv(f"eigenvalues_{cut}.csv", ["bin_lo", "bin_hi", "count"], zip(edges[:-1], edges[1:], counts))


# --- spectrum -----------------------------------------------------------------


def _spectrum_job(spec, extents, block):
    ens = spacings_from_block(block_eigenvalues(build_u2_block(spec.generate(extents), block)), block)
    return ens.s


def _run_spectrum(cfg: ExperimentConfig, out: _Outputs):
    specs = [cfg.disorder_spec(cfg.seed + i) for i in range(cfg.realizations)]
    samples = _map(_spectrum_job, [(s, cfg.extents, cfg.block) for s in specs], cfg.workers)
    summary = []
    for spec, s in zip(specs, samples):
        label, ks = classify_statistics(s)
        summary.append((spec.seed, cfg.block, s.size, s.mean(), ks["poisson"], ks["gue"], label))
    pooled = np.concatenate(samples)
    if len(samples) > 1:
        label, ks = classify_statistics(pooled)
        summary.append(("pooled", cfg.block, pooled.size, pooled.mean(), ks["poisson"], ks["gue"], label))
    out.csv("spacings.csv", ["s"], ((v,) for v in pooled))
    out.csv("summary.csv", ["seed", "block", "N", "mean_s", "ks_poisson", "ks_gue", "classification"], summary)
    counts, edges = np.histogram(pooled, bins=50, range=(0.0, 4.0))
    out.csv("histogram.csv", ["bin_lo", "bin_hi", "count"], zip(edges[:-1], edges[1:], counts))
    try:
        tf = tail_analysis(pooled)
        out.csv("tail.csv", ["s_min", "rate", "r2", "curvature", "lr", "n_tail", "exponential"],
                [(2.5, tf.rate, tf.r2, tf.curvature, tf.lr, tf.n_tail, tf.exponential)])
    except DegenerateFitError as exc:
        log.info("tail analysis skipped: %s", exc)


# --- critical -----------------------------------------------------------------


def _eigen_job(spec, extents, count, block):
    return [d.p for d in eigenstate_distributions(spec, extents, count, block=block)]


def _return_job(spec, extents, times):
    return return_probabilities(spec, extents, times, 1)[0]


def _run_critical(cfg: ExperimentConfig, out: _Outputs):
    estimates = []
    if {"autocorrelation", "fractal"} & set(cfg.methods):
        specs = [cfg.disorder_spec(cfg.seed + i) for i in range(cfg.realizations)]
        batches = _map(_eigen_job, [(s, cfg.extents, cfg.eig_count, cfg.block) for s in specs], cfg.workers)
        dists = [p for b in batches for p in b]
        L = cfg.extents[0]
        if "autocorrelation" in cfg.methods:
            r = powers_of_two(L // 2)
            X = np.array([autocorrelation(p, r) for p in dists])
            out.csv("autocorrelation.csv", ["r", "lnR"], ((rv, v) for row in np.log(X) for rv, v in zip(r, row)))
            estimates.append(EtaFromAutocorrelation().fit(X, r, L).estimate())
        if "fractal" in cfg.methods:
            l = np.array([v for v in powers_of_two(min(cfg.extents)) if all(e % v == 0 for e in cfg.extents)])
            X = np.array([[coarse_grain_moment(p, v) for v in l] for p in dists])
            out.csv("fractal.csv", ["l", "ln_p2"], ((lv, v) for row in np.log(X) for lv, v in zip(l, row)))
            estimates.append(EtaFromFractal().fit(X, l, min(cfg.extents)).estimate())
    if "return" in cfg.methods:
        times = powers_of_two(cfg.resolved_t_max(), lower=2)
        specs = [cfg.disorder_spec(cfg.seed + i) for i in range(cfg.return_realizations)]
        X = np.array(_map(_return_job, [(s, cfg.return_extents, times) for s in specs], cfg.workers))
        out.csv("return.csv", ["t", "ln_p0"], ((t, v) for row in np.log(X) for t, v in zip(times, row)))
        estimates.append(EtaFromReturn().fit(X, times).estimate())
    out.csv("estimates.csv", ["method", "eta", "ci", "slope", "slope_err", "n_samples"],
            [(e.method, e.eta, e.ci, e.slope, e.slope_err, e.n_samples) for e in estimates])


# --- binary sweep -------------------------------------------------------------


def _spread_job(specs, extents, steps):
    dist = average_over_disorder(specs, extents, steps, [steps])[-1]
    return dist.rms()


def binary_sweep(cfg: ExperimentConfig, out: _Outputs):
    """Transmission and spread over ``(dtheta, p_A)``.

    Set B always follows set A through
    ``theta1_B = theta1_A - dtheta`` and ``theta2_B = theta2_A + dtheta``.
    """
    a1, a2 = cfg.binary_a
    points = [(d, p) for d in cfg.dtheta_grid for p in cfg.p_a_grid]

    def point_cfg(d, p):
        return replace(cfg, binary_b=(a1 - d, a2 + d), p_a=float(p))

    jobs, keys = [], []
    for d, p in points:
        for cut in cfg.cuts:
            for i in range(cfg.realizations):
                spec = point_cfg(d, p).disorder_spec(cfg.seed + i)
                jobs.append((spec, cfg.L_x, cfg.L_y, cut, cfg.resolved_t_max()))
                keys.append((d, p, a1 - d, a2 + d, cut, spec.seed))
    results = _map(_scatter_job, jobs, cfg.workers)
    out.csv("binary_transmission.csv",
            ["dtheta", "p_a", "theta1_b", "theta2_b", "cut", "seed", "T_even", "T_odd", "T_total"],
            [k + (r["even"], r["odd"], r["total"]) for k, r in zip(keys, results)])
    if cfg.spread_realizations > 0:
        sjobs = [([point_cfg(d, p).disorder_spec(cfg.seed + i) for i in range(cfg.spread_realizations)],
                  cfg.spread_extents, cfg.spread_steps) for d, p in points]
        rms = _map(_spread_job, sjobs, cfg.workers)
        out.csv("binary_rms.csv", ["dtheta", "p_a", "t", "rms", "realizations"],
                [(d, p, cfg.spread_steps, r, cfg.spread_realizations) for (d, p), r in zip(points, rms)])


_RUNNERS = {
    "evolve": _run_evolve,
    "scatter": _run_scatter,
    "spectrum": _run_spectrum,
    "critical": _run_critical,
    "binary-sweep": binary_sweep,
}


def run(cfg: ExperimentConfig, out_dir) -> Path:
    """Validate, run one experiment and write its outputs plus manifest."""
    problems = validate(cfg)
    for sev, path, msg in problems:
        if sev == "warning":
            log.warning("%s: %s", path, msg)
    errors = [p for p in problems if p[0] == "error"]
    if errors:
        raise ConfigError(errors[0][1], errors[0][2])
    started = time.time()
    out = _Outputs(Path(out_dir))
    _RUNNERS[cfg.experiment](cfg, out)
    out.manifest(cfg, started)
    return out.root


def _error_line(code: str, message: str, field_path=None) -> str:
    doc = {"status": "error", "code": code, "message": message}
    if field_path:
        doc["field"] = field_path
    return "error: " + json.dumps(doc, sort_keys=True)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI config file")
    common.add_argument("--preset", metavar="NAME", help=f"named parameter set: {', '.join(PRESETS)}")
    common.add_argument("--seed", type=int, metavar="N", help="seed base (realization i uses N + i)")
    common.add_argument("--workers", type=int, metavar="N", help="worker processes")
    common.add_argument("--out", metavar="DIR", default="splitwalk-out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="splitwalk", description="Split-step quantum walk experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, experiment in (("evolve", "evolve"), ("scatter", "scatter"), ("spectrum", "spectrum"),
                             ("critical", "critical"), ("binary-sweep", "binary-sweep"), ("validate", None)):
        sub.add_parser(name, parents=[common])
    return parser


def _resolve(args) -> ExperimentConfig:
    base = ExperimentConfig()
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {args.preset!r}")
        base = PRESETS[args.preset]
    cfg = load_config(args.config, base) if args.config else base
    updates = {}
    if args.command != "validate":
        updates["experiment"] = args.command
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.workers is not None:
        updates["workers"] = args.workers
    return replace(cfg, **updates)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        if args.command == "validate":
            problems = validate(cfg)
            for sev, path, msg in problems:
                print(json.dumps({"severity": sev, "field": path, "message": msg}, sort_keys=True))
            if any(p[0] == "error" for p in problems):
                first = next(p for p in problems if p[0] == "error")
                print(_error_line("invalid-config", first[2], first[1]), file=sys.stderr)
                return EXIT_CONFIG
            print(json.dumps({"status": "ok", "warnings": len(problems)}))
            return 0
        root = run(cfg, args.out)
    except ConfigError as exc:
        print(_error_line("invalid-config", exc.message, exc.field), file=sys.stderr)
        return EXIT_CONFIG
    except MemoryError as exc:
        print(_error_line("resource", str(exc) or "out of memory"), file=sys.stderr)
        return EXIT_CAP
    except ValueError as exc:
        code, status = ("resource-cap", EXIT_CAP) if "cap" in str(exc) else ("invalid-input", EXIT_RUNTIME)
        print(_error_line(code, str(exc)), file=sys.stderr)
        return status
    except Exception as exc:  # noqa: BLE001 - surfaced as a machine-readable line
        print(_error_line("runtime", f"{type(exc).__name__}: {exc}"), file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"status": "ok", "out": str(root)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
