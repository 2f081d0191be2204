"""Command-line front end.

Subcommands:

- ``estimate``  batch per-series variance estimation from a dataset CSV
- ``alpha``     mixing coefficient / triviality report for a permutation
- ``simulate``  Monte Carlo sweeps (presets or an INI config file)
- ``diagnose``  consistency and noise-conservation diagnostics
"""

from __future__ import annotations

import argparse
import configparser
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from . import __version__
from . import estimators as est
from . import io as sio
from .design import DesignSchedule, NoReplication, build_design
from .estimators import TrivialPermutation
from .permutations import alpha as mixing_alpha
from .permutations import is_trivial, noise_conservation_gap
from .reml import AllStartsFailed, SizeGuard, reml_estimate
from .sweeps import (
    SweepConfig,
    emit_sweep_table,
    run_block_sweep,
    run_reml_comparison,
    run_timeseries_sweep,
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="base RNG seed (echoed)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--output", "-o", default=None, help="output path (default stdout)")


def _schedule_from_args(args) -> DesignSchedule:
    if getattr(args, "input", None):
        design, _ = sio.read_dataset(args.input)
        return design
    if getattr(args, "schedule", None):
        return build_design([s.strip() for s in args.schedule.split(",")])
    raise SystemExit("either --input or --schedule is required")


def _emit(args, lines) -> None:
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_estimate(args) -> int:
    design, series = sio.read_dataset(args.input)
    methods = [m.strip() for m in args.estimators.split(",") if m.strip()]
    perm = sio.parse_permutation(args.permutation, design, seed=args.seed)

    def run_series(s):
        rows = []
        for method in methods:
            try:
                if method == "shuffle":
                    e = est.shuffle_estimate(s, design, perm)
                elif method == "mom":
                    e = est.mom_estimate(s, design)
                elif method.startswith("reml"):
                    family = method.split(":", 1)[1] if ":" in method else "exp_nugget"
                    _, e = reml_estimate(s, design, family=family, seed=args.seed)
                else:
                    raise SystemExit(f"unknown estimator {method!r}")
                rows.append(sio.estimate_row(s.series_id, e))
            except (TrivialPermutation, NoReplication, SizeGuard, AllStartsFailed) as exc:
                rows.append(sio.error_row(s.series_id, method, type(exc).__name__))
        return rows

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            per_series = list(pool.map(run_series, series))
    else:
        per_series = [run_series(s) for s in series]

    config_lines = [
        f"shufflevar {__version__} estimate",
        f"input = {args.input}",
        f"permutation = {args.permutation}",
        f"estimators = {','.join(methods)}",
        f"seed = {args.seed}",
        f"threads = {args.threads}",
    ]
    out = args.output or "/dev/stdout"
    sio.write_estimates(out, [r for rows in per_series for r in rows], config_lines)
    return 0


def cmd_alpha(args) -> int:
    design = _schedule_from_args(args)
    perm = sio.parse_permutation(args.permutation, design, seed=args.seed)
    a = mixing_alpha(design, perm)
    trivial = is_trivial(perm, design)
    lines = [
        f"T = {design.T}  m = {design.m}  n = {design.n}",
        f"permutation = {perm.family}",
        f"alpha = {a:.12g}",
        f"trivial = {'yes' if trivial else 'no'}",
    ]
    if args.noise:
        model = sio.parse_noise(args.noise)
        Sigma = model.materialize(design)
        gap = noise_conservation_gap(Sigma, design, perm)
        lines.append(f"noise_conservation_gap = {gap:.12g}")
    _emit(args, lines)
    return 0


def cmd_diagnose(args) -> int:
    design = _schedule_from_args(args)
    candidates = ["reverse", "shift:1", "block-random"]
    if design.T % 2 == 0:
        candidates.append("odd-even")
    Sigma = None
    lines = [f"T = {design.T}  m = {design.m}  n = {design.n}"]
    if args.noise:
        model = sio.parse_noise(args.noise)
        Sigma = model.materialize(design)
        diag = est.consistency_diagnostic(Sigma, design.m, design.n)
        lines.append(f"consistency_diagnostic = {diag:.12g}")
    for spec in candidates:
        perm = sio.parse_permutation(spec, design, seed=args.seed)
        a = mixing_alpha(design, perm)
        line = f"{spec}: alpha = {a:.12g} trivial = {'yes' if is_trivial(perm, design) else 'no'}"
        if Sigma is not None:
            gap = noise_conservation_gap(Sigma, design, perm)
            line += f" gap = {gap:.12g}"
        lines.append(line)
    _emit(args, lines)
    return 0


_PRESETS = {
    "block": dict(kind="block"),
    "timeseries": dict(kind="timeseries"),
    "reml-comparison": dict(
        kind="reml",
        sigma2_A_grid=(0.0, 0.2, 0.4, 0.6, 0.8),
        estimators=("shuffle", "reml"),
    ),
}


def _sweep_config_from_ini(path) -> tuple:
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    sec = parser["sweep"]
    kind = sec.get("kind", "block")
    kwargs = {}
    for key in ("m", "n", "n_blocks", "replicates", "seed", "threads",
                "reml_starts", "reml_max_evals"):
        if key in sec:
            kwargs[key] = sec.getint(key)
    for key in ("sigma2_block", "sigma2_unit", "lam1", "lam2", "sigma2_eps",
                "reml_xatol"):
        if key in sec:
            kwargs[key] = sec.getfloat(key)
    if "sigma2_A_grid" in sec:
        kwargs["sigma2_A_grid"] = tuple(
            float(v) for v in sec["sigma2_A_grid"].split(",")
        )
    if "estimators" in sec:
        kwargs["estimators"] = tuple(
            v.strip() for v in sec["estimators"].split(",")
        )
    if "reml_family" in sec:
        kwargs["reml_family"] = sec["reml_family"]
    return kind, kwargs


def cmd_simulate(args) -> int:
    if args.config:
        kind, kwargs = _sweep_config_from_ini(args.config)
    elif args.preset:
        preset = dict(_PRESETS[args.preset])
        kind = preset.pop("kind")
        kwargs = preset
    else:
        raise SystemExit("either --config or --preset is required")
    cfg = SweepConfig(**kwargs)
    overrides = {}
    if args.replicates is not None:
        overrides["replicates"] = args.replicates
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if overrides:
        cfg = replace(cfg, **overrides)

    runner = {
        "block": run_block_sweep,
        "timeseries": run_timeseries_sweep,
        "reml": run_reml_comparison,
    }[kind]
    result = runner(cfg)
    emit_sweep_table(result, args.output or "/dev/stdout")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shufflevar",
        description="Signal-variance and explainable-variance estimation "
        "under correlated noise.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="batch per-series estimation")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--permutation", default="reverse")
    p.add_argument("--estimators", default="shuffle,mom")
    _add_common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("alpha", help="mixing coefficient report")
    p.add_argument("--input", "-i")
    p.add_argument("--schedule", help="comma-separated stimulus labels")
    p.add_argument("--permutation", default="reverse")
    p.add_argument("--noise", help="covariance hypothesis, e.g. exp-nugget:0.7,30")
    _add_common(p)
    p.set_defaults(func=cmd_alpha)

    p = sub.add_parser("simulate", help="Monte Carlo sweep")
    p.add_argument("--config", help="INI config file with a [sweep] section")
    p.add_argument("--preset", choices=sorted(_PRESETS))
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--output", "-o", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", help="consistency and conservation diagnostics")
    p.add_argument("--input", "-i")
    p.add_argument("--schedule")
    p.add_argument("--noise")
    _add_common(p)
    p.set_defaults(func=cmd_diagnose)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
