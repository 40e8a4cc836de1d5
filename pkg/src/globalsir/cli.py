"""Command-line front end: preprocess raw case tables, run the two-step
fit, simulate trajectories, and compare fitted models.

Every command is deterministic for a fixed seed and config, never mutates
its inputs, and reports failures as one machine-parsable line on stderr
(``Category: message``) with a category-specific exit code:

    1  usage / missing or unreadable file
    2  data validation (schema, gaps, monotonicity, windows)
    3  fit did not converge (reports are still written)
    4  non-finite trajectory during simulation
    5  mismatched data between compared reports
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import _fast, fitting, metrics, models, pipeline
from .ode import IntegratorConfig, Method, NonFiniteState, StepLimitExceeded, integrate

log = logging.getLogger("globalsir")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NO_CONVERGENCE = 3
EXIT_NON_FINITE = 4
EXIT_MISMATCH = 5


def default_config() -> dict:
    return {
        "seed": 0,
        "out_dir": ".",
        "fit": fitting.FitConfig().to_dict(),
        "integrator": {
            "method": "rk45_adaptive",
            "step": 0.1,
            "rtol": 1e-6,
            "atol": 1e-8,
            "max_steps": 500000,
        },
        "preprocess": {
            "incubation_days": 5,
            "test_turnaround_days": 1,
            "infectious_days": 14,
            "recovery_fraction": 0.97,
        },
    }


def load_config(path) -> dict:
    cfg = default_config()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
        for key, value in user.items():
            if isinstance(value, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
    return cfg


def _fit_config(cfg: dict, seed=None) -> fitting.FitConfig:
    d = dict(cfg["fit"])
    if seed is not None:
        d["seed"] = seed
    d["y0"] = tuple(d["y0"])
    d["weights"] = tuple(d["weights"])
    d["bounds"] = {k: tuple(v) for k, v in d.get("bounds", {}).items()}
    return fitting.FitConfig(**d)


def _write_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _write_trajectory_csv(path: Path, times, states) -> None:
    lines = ["t,S,I,R"]
    for t, row in zip(times, states.T if states.shape[0] == 3 else states):
        lines.append(",".join([f"{t:.12g}"] + [f"{v:.12g}" for v in row]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_preprocess(args, cfg) -> int:
    raw = pipeline.read_raw_csv(args.raw_csv)
    pp = cfg["preprocess"]

    def pick(flag, key):
        return pp[key] if flag is None else flag

    triple = pipeline.derive_sir(
        raw,
        incubation_days=pick(args.incubation_days, "incubation_days"),
        test_turnaround_days=pick(args.turnaround_days, "test_turnaround_days"),
        infectious_days=pick(args.infectious_days, "infectious_days"),
        recovery_fraction=pick(args.recovery_fraction, "recovery_fraction"),
    )
    pipeline.export_triple(triple, args.out_csv)
    stats = pipeline.describe(triple)
    stats_path = args.stats_csv or str(Path(args.out_csv).with_suffix("")) + "_stats.csv"
    pipeline.write_stats_csv(stats, stats_path)
    log.info("wrote %s and %s", args.out_csv, stats_path)
    return EXIT_OK


def _report_payload(fit: fitting.FitResult, fitness: metrics.FitnessReport) -> dict:
    payload = fit.to_dict()
    payload["fitness"] = fitness.to_dict()
    return payload


def cmd_fit(args, cfg) -> int:
    data = pipeline.read_triple(args.triple_csv)
    fit_cfg = _fit_config(cfg, seed=args.seed)
    out_dir = Path(args.out_dir or cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    standard, extended = fitting.two_step_fit(data, fit_cfg)
    reports = {}
    for fit in (standard, extended):
        states = fit.model_states(data)
        fitness = metrics.fitness_report(fit.model, data, states, fit.k_params)
        reports[fit.model] = fitness
        _write_json(_report_payload(fit, fitness), out_dir / f"{fit.model}_fit.json")
        _write_trajectory_csv(out_dir / f"{fit.model}_trajectory.csv",
                              data.day_numbers(), states)

    table = metrics.compare_reports(reports["standard"], reports["extended"])
    (out_dir / "comparison.csv").write_text(table.to_csv_text(), encoding="utf-8")
    (out_dir / "comparison.txt").write_text(table.to_text(), encoding="utf-8")
    log.info("preferred model: %s", table.preferred)

    if not (standard.converged and extended.converged):
        print("NoConvergence: optimizer hit its evaluation budget; "
              "reports were still written", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_simulate(args, cfg) -> int:
    with open(args.params_file, encoding="utf-8") as fh:
        raw_params = json.load(fh)
    params = models.params_from_dict(raw_params)
    y0 = tuple(float(v) for v in args.y0.split(",")) if args.y0 \
        else tuple(cfg["fit"]["y0"])
    if len(y0) != 3:
        raise ValueError("y0 must be S,I,R")

    if args.model == "standard":
        system = models.standard_sir_rhs(params.sir)
    else:
        system = models.extended_sir_rhs(params)

    days = args.days
    if days < 0:
        raise ValueError("days must be >= 0")
    if days == 0:
        times = np.array([0.0])
        states = np.array([y0])
    else:
        icfg = cfg["integrator"]
        config = IntegratorConfig(
            method=Method(icfg["method"]), step=icfg["step"],
            rtol=icfg["rtol"], atol=icfg["atol"], max_steps=icfg["max_steps"],
        )
        times = np.arange(days + 1, dtype=float)
        traj = integrate(system, y0, (0.0, float(days)), times, config)
        states = traj.states
        if not models.compartments_nonnegative(traj):
            log.warning("trajectory has negative compartment values")
    _write_trajectory_csv(Path(args.out_csv), times, states)
    return EXIT_OK


def cmd_compare(args, cfg) -> int:
    payloads = []
    for path in (args.report_a, args.report_b):
        with open(path, encoding="utf-8") as fh:
            payloads.append(json.load(fh))
    fps = [p.get("data_fingerprint") for p in payloads]
    if fps[0] != fps[1]:
        raise metrics.MismatchedData(
            "reports were fitted against different datasets"
        )
    reports = [metrics.FitnessReport.from_dict(p["fitness"]) for p in payloads]
    table = metrics.compare_reports(*reports)
    out = Path(args.out_prefix)
    out.parent.mkdir(parents=True, exist_ok=True)
    Path(str(out) + ".csv").write_text(table.to_csv_text(), encoding="utf-8")
    Path(str(out) + ".txt").write_text(table.to_text(), encoding="utf-8")
    print(table.to_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="globalsir",
        description="SIR modeling with global-dynamics forcing: preprocess, "
                    "fit, simulate, compare.",
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out-dir", default=None)
    parser.add_argument("--verbose", action="store_true")
    parser.add_argument("--print-default-config", action="store_true",
                        help="print the full default config and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("preprocess", help="raw case CSV -> S/I/R triple CSV")
    p.add_argument("raw_csv")
    p.add_argument("out_csv")
    p.add_argument("--stats-csv")
    p.add_argument("--incubation-days", type=int, default=None)
    p.add_argument("--turnaround-days", type=int, default=None)
    p.add_argument("--infectious-days", type=int, default=None)
    p.add_argument("--recovery-fraction", type=float, default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("fit", help="two-step fit; writes reports and curves")
    p.add_argument("triple_csv")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="integrate a model from a params file")
    p.add_argument("params_file")
    p.add_argument("out_csv")
    p.add_argument("--model", choices=("standard", "extended"),
                   default="extended")
    p.add_argument("--days", type=int, default=211)
    p.add_argument("--y0", help="comma-separated S,I,R initial state")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="render two fit reports side by side")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("out_prefix")
    p.set_defaults(func=cmd_compare)
    return parser


_ERROR_EXITS = (
    (pipeline.PipelineError, EXIT_DATA),
    (metrics.MismatchedData, EXIT_MISMATCH),
    ((NonFiniteState, StepLimitExceeded), EXIT_NON_FINITE),
    ((FileNotFoundError, OSError, json.JSONDecodeError, ValueError,
      fitting.FittingError), EXIT_USAGE),
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    if args.print_default_config:
        print(json.dumps(default_config(), indent=2, sort_keys=True))
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE
    try:
        cfg = load_config(args.config)
        _fast.warm_up()
        return args.func(args, cfg)
    except Exception as exc:  # one parsable line per error category
        for types, code in _ERROR_EXITS:
            if isinstance(exc, types):
                print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
