"""Command-line front end.

Exit codes: 0 success, 1 error (including usage errors), 2 sampler did not
converge, 3 validation failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .rng import MAX_SEED

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_VALIDATION = 0, 1, 2, 3

log = logging.getLogger("cdrsim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _levels(text: str) -> list[float]:
    try:
        out = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}") from None
    if not out or any(not 0 < x < 1 for x in out):
        raise argparse.ArgumentTypeError("levels must be a comma-separated list of values in (0, 1)")
    return out


def _versions() -> dict[str, Any]:
    from .scenario import SCHEMA_VERSION
    from .simulate import TRUTH_SCHEMA_VERSION

    return {"tool_version": __version__, "config_schema": SCHEMA_VERSION, "truth_schema": TRUTH_SCHEMA_VERSION}


def _prepare_out(out: Path, names: Sequence[str], force: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    clash = [n for n in names if (out / n).exists()]
    if clash and not force:
        raise UsageError(f"refusing to overwrite {', '.join(clash)} in {out} (use --force)")


def _write_json(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _metadata(args: argparse.Namespace, config_hash: str | None = None, **extra) -> dict[str, Any]:
    meta = {
        **_versions(),
        "command": args.command,
        "argv": list(getattr(args, "_argv", [])),
        "seed": getattr(args, "seed", None),
        "config_hash": config_hash,
    }
    meta.update(extra)
    return meta


def _scenario(path: str):
    from .scenario import demo_config, load_config, scenario_from_dict

    tree = demo_config() if path == "demo" else load_config(path)
    return scenario_from_dict(tree)


# --- subcommands -------------------------------------------------------------

def cmd_init_config(args) -> int:
    from .scenario import demo_config, dump_config

    out = Path(args.out)
    if out.exists() and not args.force:
        raise UsageError(f"refusing to overwrite {out} (use --force)")
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_config(demo_config(), out, "json" if out.suffix == ".json" else "yaml")
    print(out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simulate import batch_simulate, write_truth

    if args.realizations < 1:
        raise UsageError("--realizations must be >= 1")
    scenario = _scenario(args.config)
    out = Path(args.out)
    names = [f"dataset_{k:04d}.csv" for k in range(args.realizations)]
    truths = [f"truth_{k:04d}.json" for k in range(args.realizations)]
    _prepare_out(out, names + truths + ["run.json"], args.force)
    datasets = batch_simulate(scenario, args.realizations, args.seed, args.threads)
    for ds, n, t in zip(datasets, names, truths):
        ds.to_csv(out / n)
        write_truth(ds.truth, out / t)
    _write_json(
        out / "run.json",
        _metadata(args, scenario.config_hash(), config=scenario.to_dict(), realizations=args.realizations),
    )
    print(f"wrote {args.realizations} dataset(s) to {out}")
    return EXIT_OK


def _mixing_params(path: str | None):
    from .mixing import MixingParams
    from .scenario import load_config
    from .sensitivity import example_params

    if path is None:
        return example_params()
    tree = load_config(path)
    base = example_params().__dict__.copy()
    unknown = sorted(set(tree) - set(base))
    if unknown:
        raise UsageError(f"unknown mixing parameters: {', '.join(unknown)}")
    base.update(tree)
    return MixingParams(**base)


def cmd_sensitivity(args) -> int:
    from .rng import derive_rng
    from .sensitivity import local_sensitivity, mixing_sobol

    out = Path(args.out)
    if args.mode == "local":
        _prepare_out(out, ["local_sensitivity.csv", "run.json"], args.force)
        p = _mixing_params(args.params)
        res = local_sensitivity(p, args.element, args.perturbation)
        _write_rows(
            out / "local_sensitivity.csv",
            ["parameter", "symbol", "value", "delta_ppm", "derivative", "step", "richardson_rel_diff", "step_adjusted"],
            res,
        )
        for r in res:
            print(f"{r.symbol:>6s} {r.delta_ppm:+10.4f} ppm")
    else:
        if args.seed is None:
            raise UsageError("--seed is required for --mode sobol")
        _prepare_out(out, ["sobol_s1.csv", "sobol_s2.csv", "run.json"], args.force)
        res = mixing_sobol(None, args.n_base, derive_rng(args.seed, "sobol"), args.n_boot)
        _write_rows(out / "sobol_s1.csv", ["parameter", "S1", "S1_se"], zip(res.names, res.S1, res.S1_se))
        rows = []
        for i in range(len(res.names)):
            for j in range(i + 1, len(res.names)):
                rows.append((res.names[i], res.names[j], res.S2[i, j], res.S2_se[i, j]))
        _write_rows(out / "sobol_s2.csv", ["parameter_i", "parameter_j", "S2", "S2_se"], rows)
        for n, s in zip(res.names, res.S1):
            print(f"{n:>28s} S1={s:.4f}")
    _write_json(out / "run.json", _metadata(args, mode=args.mode))
    return EXIT_OK


def _load_dataset(path: str):
    from .simulate import Dataset

    return Dataset.from_csv(Path(path))


def cmd_estimate(args) -> int:
    from .estimate import bootstrap, estimator_for, scenario_tables
    from .rng import derive_rng

    scenario = _scenario(args.config)
    ds = _load_dataset(args.data)
    out = Path(args.out)
    _prepare_out(out, ["estimate.json", "run.json"], args.force)
    est = estimator_for(scenario, stock=args.stock)
    tables = scenario_tables(ds, scenario, stock=args.stock)
    result = bootstrap(tables, est, args.B, args.levels, derive_rng(args.seed, "bootstrap"), seed=args.seed)
    doc = result.to_dict()
    doc["stock_basis"] = args.stock
    _write_json(out / "estimate.json", doc)
    _write_json(out / "run.json", _metadata(args, scenario.config_hash(), data=str(args.data)))
    print(f"CDR point estimate {result.point:.4f} t")
    for lvl, (lo, hi) in result.intervals.items():
        print(f"  {lvl:>5.0%} interval [{lo:.4f}, {hi:.4f}]")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .bayes import BayesConfig, BayesData, sample_posterior, write_summary
    from .scenario import load_config

    cfg = BayesConfig.from_dict(load_config(args.bayes_config)) if args.bayes_config else BayesConfig()
    ds = _load_dataset(args.data)
    data = BayesData.from_dataset(ds, cfg.elements)
    out = Path(args.out)
    _prepare_out(out, ["draws.csv", "summary.json", "run.json"], args.force)
    draws = sample_posterior(data, cfg, args.chains, args.draws, args.warmup, args.seed, args.thin)
    draws.to_long_csv(out / "draws.csv")
    extra = {}
    if args.truth:
        from .simulate import read_truth

        extra["truth_cdr"] = read_truth(args.truth)["cdr"]
    doc = write_summary(draws, out / "summary.json", args.hdi_mass, extra)
    _write_json(out / "run.json", _metadata(args, None, bayes_config=cfg.to_dict(), data=str(args.data)))
    s = doc["nodes"]["CDR_total"]
    print(f"CDR_total mean {s['mean']:.3f} t, {args.hdi_mass:.0%} HDI [{s['hdi_lo']:.3f}, {s['hdi_hi']:.3f}]")
    if not draws.converged:
        for name, v in draws.failures().items():
            print(f"not converged: {name} r_hat={v['r_hat']:.4f} ess={v['ess']:.0f}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_validate(args) -> int:
    from .estimate import validate_coverage

    scenario = _scenario(args.config)
    out = Path(args.out)
    _prepare_out(out, ["coverage.csv", "points.csv", "run.json"], args.force)
    rep = validate_coverage(scenario, args.realizations, args.B, args.levels, args.seed, threads=args.threads,
                            stock=args.stock)
    _write_rows(out / "coverage.csv", ["level", "nominal", "empirical", "n"], [r.values() for r in rep.rows()])
    _write_rows(
        out / "points.csv", ["realization", "point_t", "truth_t"],
        [(k, p, t) for k, (p, t) in enumerate(zip(rep.points, rep.truths))],
    )
    bad = [lvl for lvl in rep.levels if abs(rep.coverage[lvl] - lvl) > args.tolerance]
    bias_ok = abs(rep.rel_bias) < args.max_bias
    _write_json(
        out / "run.json",
        _metadata(args, scenario.config_hash(), realizations=args.realizations, B=args.B,
                  rel_bias=rep.rel_bias, mean_point_t=rep.mean_point, mean_truth_t=rep.mean_truth,
                  passed=not bad and bias_ok),
    )
    for r in rep.rows():
        print(f"nominal {r['nominal']:.2f} empirical {r['empirical']:.3f}")
    print(f"relative bias {rep.rel_bias:+.4f}")
    if bad or not bias_ok:
        print("validation failed", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_triangle(args) -> int:
    from .mixing import TriangleScenario, triangle_pathology_demo
    from .rng import derive_rng

    if args.draws < 1:
        raise UsageError("--draws must be >= 1")
    out = Path(args.out)
    _prepare_out(out, ["triangle.csv", "triangle.json"], args.force)
    sc = TriangleScenario()
    res = triangle_pathology_demo(sc, args.draws, args.noise, derive_rng(args.seed, "triangle"))
    _write_rows(
        out / "triangle.csv", ["draw", "tracer_kgkg", "mobile_kgkg", "dissolution_fraction", "outside_unit_interval"],
        [(i, t, m, d, int(not 0 <= d <= 1)) for i, (t, m, d) in enumerate(zip(res.tracer, res.mobile, res.dissolution))],
    )
    _write_json(
        out / "triangle.json",
        _metadata(args, None, scenario=sc.__dict__, draws=args.draws, rel_noise=args.noise,
                  fraction_outside=res.fraction_outside),
    )
    print(f"fraction of dissolution fractions outside [0, 1]: {res.fraction_outside:.4f}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cdrsim", description="Simulate, estimate and infer CDR for enhanced rock weathering trials.")
    v = _versions()
    p.add_argument("--version", action="version",
                   version=f"cdrsim {v['tool_version']} (config schema {v['config_schema']}, truth schema {v['truth_schema']})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed_required=True):
        sp.add_argument("--seed", type=_seed, required=seed_required)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")

    sp = sub.add_parser("init-config", help="write the demo scenario config")
    sp.add_argument("--out", required=True, help="file to write (.yaml or .json)")
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_init_config)

    sp = sub.add_parser("simulate", help="simulate datasets with truth manifests")
    sp.add_argument("config", help="scenario file, or 'demo'")
    sp.add_argument("--realizations", "-n", type=int, default=1)
    sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sensitivity", help="local or Sobol sensitivity of core concentration")
    sp.add_argument("--mode", choices=("local", "sobol"), required=True)
    sp.add_argument("--params", help="YAML/JSON mixing parameters for --mode local")
    sp.add_argument("--element", default=None)
    sp.add_argument("--perturbation", type=float, default=0.01)
    sp.add_argument("--n-base", type=int, default=2**16)
    sp.add_argument("--n-boot", type=int, default=100)
    common(sp, seed_required=False)
    sp.set_defaults(func=cmd_sensitivity)

    sp = sub.add_parser("estimate", help="cation-stock CDR estimate with bootstrap intervals")
    sp.add_argument("config", help="scenario file, or 'demo' (supplies area, density and depth)")
    sp.add_argument("data", help="dataset CSV")
    sp.add_argument("--B", type=int, default=2000)
    sp.add_argument("--levels", type=_levels, default=[0.5, 0.8, 0.9, 0.95])
    sp.add_argument("--stock", choices=("nominal", "measured"), default="nominal",
                    help="convert concentration to mass with nominal density x depth, or use per-sample stocks from measured mass")
    common(sp)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("infer", help="Bayesian posterior for CDR")
    sp.add_argument("data", help="dataset CSV")
    sp.add_argument("--bayes-config", help="YAML/JSON prior overrides")
    sp.add_argument("--truth", help="truth manifest to copy into the summary")
    sp.add_argument("--chains", type=int, default=8)
    sp.add_argument("--draws", type=int, default=4000)
    sp.add_argument("--warmup", type=int, default=20000)
    sp.add_argument("--thin", type=int, default=10)
    sp.add_argument("--hdi-mass", type=float, default=0.95)
    common(sp)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("validate", help="coverage of bootstrap intervals over simulated realizations")
    sp.add_argument("config", help="scenario file, or 'demo'")
    sp.add_argument("--realizations", "-n", type=int, default=500)
    sp.add_argument("--B", type=int, default=1000)
    sp.add_argument("--levels", type=_levels, default=[0.5, 0.8, 0.9, 0.95])
    sp.add_argument("--tolerance", type=float, default=0.05, help="allowed |empirical - nominal| coverage")
    sp.add_argument("--max-bias", type=float, default=0.03, help="allowed relative bias of the mean point estimate")
    sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sp.add_argument("--stock", choices=("nominal", "measured"), default="nominal")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("triangle", help="dissolution-fraction pathology under measurement noise")
    sp.add_argument("--noise", type=float, default=0.1, help="relative sd of the mixture concentrations")
    sp.add_argument("--draws", type=int, default=10000)
    common(sp)
    sp.set_defaults(func=cmd_triangle)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args._argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"cdrsim: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"cdrsim {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
