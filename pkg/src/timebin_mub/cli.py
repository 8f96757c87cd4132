"""Command-line front end.

Subcommands ``optimize``, ``evaluate``, ``qkd`` and ``chipscan``. Exit codes:
0 success, 2 invalid arguments or configuration, 3 output not writable,
4 solution file unreadable, corrupted or of an unsupported version.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .cascade import DeviceSpec
from .chipscan import chip_sweep
from .mub import TransferSet, basis_states, probability_tables, states_to_csv
from .optimize import OptimizerConfig, eom_pattern_distance, leakage, optimize
from .qkd import PerturbationConfig, UndefinedConditionalError, monte_carlo, qber_from_tables, skf
from .solution_io import SolutionFormatError, load_solution, save_solution

logger = logging.getLogger("timebin_mub")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNWRITABLE = 3
EXIT_SOLUTION = 4

DEVICE_DEFAULTS = {"S": 32, "N": 2, "d": 2, "output_offset": 0, "enforce_min_size": True}
OPTIMIZER_DEFAULTS = {
    "restarts": 20,
    "max_iterations": 5000,
    "gradient_mode": "analytic",
    "fd_step": 1e-5,
    "tolerance": 0.0,
    "rng_seed": 0,
    "convention": "rows",
    "fbg_init": "uniform",
    "fbg_init_order": 3,
    "fbg_init_amplitude": 1.0,
}
QKD_DEFAULTS = {
    "sigmas": [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5],
    "trials": 1000,
    "rng_seed": 0,
    "weight_by_detection": False,
}
SECTIONS = {"device": DEVICE_DEFAULTS, "optimizer": OPTIMIZER_DEFAULTS, "qkd": QKD_DEFAULTS}


class ConfigError(ValueError):
    pass


class CliExit(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _check_type(section, key, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        )
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{section}.{key}: expected {type(default).__name__}, got {value!r}")


def parse_config(text: str, allowed=("device", "optimizer", "qkd")) -> dict:
    """Parse a JSON run configuration, rejecting unknown sections and keys.

    Missing keys take the documented defaults in ``SECTIONS``.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    out = {}
    for section in allowed:
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"section {section!r} must be an object")
        defaults = SECTIONS[section]
        bad = set(given) - set(defaults)
        if bad:
            raise ConfigError(f"unknown key(s) in {section!r}: {sorted(bad)}")
        merged = dict(defaults)
        for key, value in given.items():
            _check_type(section, key, value, defaults[key])
            merged[key] = value
        out[section] = merged
    return out


def _read_config(path, allowed):
    if path is None:
        return parse_config("{}", allowed)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliExit(EXIT_CONFIG, f"cannot read config {path}: {exc}")
    try:
        return parse_config(text, allowed)
    except ConfigError as exc:
        raise CliExit(EXIT_CONFIG, str(exc))


def _ensure_writable(path):
    path = Path(path)
    parent = path.parent if str(path.parent) else Path(".")
    if path.is_dir() or not parent.is_dir() or not os.access(parent, os.W_OK):
        raise CliExit(EXIT_UNWRITABLE, f"cannot write to {path}")
    if path.exists() and not os.access(path, os.W_OK):
        raise CliExit(EXIT_UNWRITABLE, f"cannot write to {path}")


def _write_text(path, text):
    _ensure_writable(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliExit(EXIT_UNWRITABLE, f"cannot write to {path}: {exc}")


def _load(path):
    try:
        return load_solution(path)
    except (OSError, SolutionFormatError) as exc:
        raise CliExit(EXIT_SOLUTION, f"cannot use solution {path}: {exc}")


def _workers(value):
    return value if value is not None else (os.cpu_count() or 1)


def cmd_optimize(args):
    cfg = _read_config(args.config, ("device", "optimizer"))
    if args.seed is not None:
        cfg["optimizer"]["rng_seed"] = args.seed
    try:
        spec = DeviceSpec(**cfg["device"])
        config = OptimizerConfig(**cfg["optimizer"])
    except (TypeError, ValueError) as exc:
        raise CliExit(EXIT_CONFIG, f"invalid configuration: {exc}")
    _ensure_writable(args.out)

    solution = optimize(spec, config, workers=_workers(args.workers))
    transfer = TransferSet.from_solution(spec, solution)
    try:
        save_solution(solution, args.out)
    except OSError as exc:
        raise CliExit(EXIT_UNWRITABLE, f"cannot write to {args.out}: {exc}")

    meta = solution.metadata
    restart_mse = np.array(meta["restart_mse"])
    print(f"achieved_mse      {solution.achieved_mse:.6e}")
    print(f"leakage           {leakage(transfer):.3e}")
    print(f"restarts_run      {meta['restarts_run']} (best #{meta['best_restart']}, "
          f"{meta['iterations']} iterations, converged={meta['converged']})")
    print(f"restart_mse       min {restart_mse.min():.3e}  median {np.median(restart_mse):.3e}"
          f"  max {restart_mse.max():.3e}")
    dist = ", ".join(f"{x:.3g}" for x in eom_pattern_distance(solution))
    print(f"eom_pattern_dist  [{dist}] rad per cell")
    print(f"wall_time         {meta['wall_time']:.1f} s")
    print(f"solution          {args.out}")
    return EXIT_OK


def _states_path(out, explicit):
    if explicit:
        return explicit
    out = Path(out)
    return str(out.with_name(out.stem + "_states" + (out.suffix or ".csv")))


def cmd_evaluate(args):
    solution = _load(args.solution)
    spec = solution.spec
    transfer = TransferSet.from_solution(spec, solution)
    states = basis_states(transfer)
    tables = probability_tables(transfer, states)
    states_out = _states_path(args.out, args.states_out)
    _ensure_writable(args.out)
    _ensure_writable(states_out)
    _write_text(args.out, tables.to_csv())
    _write_text(states_out, states_to_csv(states))

    from .mub import epsilon_mse
    d, nb = spec.d, spec.n_bases
    matched = np.array([tables.postselected[m, m, n, n] for m in range(nb) for n in range(d)])
    mismatched = [tables.postselected[p, m] for p in range(nb) for m in range(nb) if p != m]
    print(f"epsilon_mse       {epsilon_mse(transfer.V, solution.convention):.6e}")
    print(f"leakage           {leakage(transfer):.3e}")
    print(f"detection         min {tables.detection.min():.6f}  max {tables.detection.max():.6f}")
    print(f"matched_correct   min {np.nanmin(matched):.6f}")
    print(f"mismatched_dev    max {np.nanmax(np.abs(np.array(mismatched) - 1.0 / d)):.3e}")
    print(f"undefined         {int(tables.undefined.sum())}")
    try:
        q = qber_from_tables(tables)
        print(f"qber              {q:.6e}")
        print(f"skf               {skf(q, d):.6f}")
    except UndefinedConditionalError as exc:
        print(f"qber              undefined ({exc})")
    print(f"tables            {args.out}")
    print(f"states            {states_out}")
    return EXIT_OK


def _parse_sigmas(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliExit(EXIT_CONFIG, f"--sigmas must be comma-separated numbers, got {text!r}")
    if not values:
        raise CliExit(EXIT_CONFIG, "--sigmas is empty")
    return values


def cmd_qkd(args):
    cfg = _read_config(args.config, ("qkd",))["qkd"]
    solution = _load(args.solution)
    sigmas = _parse_sigmas(args.sigmas) if args.sigmas is not None else cfg["sigmas"]
    trials = args.trials if args.trials is not None else cfg["trials"]
    seed = args.seed if args.seed is not None else cfg["rng_seed"]
    try:
        config = PerturbationConfig(trials=trials, rng_seed=seed,
                                    weight_by_detection=cfg["weight_by_detection"])
        if any(not s >= 0 for s in sigmas):
            raise ValueError("sigmas must be nonnegative")
    except ValueError as exc:
        raise CliExit(EXIT_CONFIG, f"invalid configuration: {exc}")
    _ensure_writable(args.out)
    dump = Path(args.out).with_suffix(".json") if args.verbose else None
    if dump is not None:
        _ensure_writable(dump)

    report = monte_carlo(solution, sigmas, config, workers=_workers(args.workers),
                         source=str(args.solution))
    _write_text(args.out, report.to_csv())
    if dump is not None:
        _write_text(dump, report.to_json(per_trial=True))
    for s in report.per_sigma:
        print(f"sigma={s.sigma:<8.4g} qber={s.qber_mean:.4e}+-{s.qber_std:.1e}  "
              f"skf={s.skf_mean:.4f}+-{s.skf_std:.1e}  failed={s.failed_trials}")
    if report.unusable:
        print("warning: more than 1% failed trials at some sigma; solution unusable")
    print(f"report            {args.out}")
    return EXIT_OK


def cmd_chipscan(args):
    solution = _load(args.solution)
    result = chip_sweep(solution)
    _write_text(args.out, result.to_csv())
    print(f"full_mse          {result.full_mse:.6e}")
    for k, e in zip(result.chip_counts, result.mse):
        print(f"K={k:<4d} epsilon_mse={e:.6e}")
    print(f"sweep             {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="timebin-mub",
        description="Design and stress-test time-bin MUB measurements built from EOM/FBG cascades.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", action="store_true", help="log progress to stderr")
    common.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: all CPUs)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", parents=[common], help="search for a MUB solution")
    p.add_argument("--config", help="JSON config with 'device' and 'optimizer' sections")
    p.add_argument("--out", required=True, help="solution file to write")
    p.add_argument("--seed", type=int, help="override optimizer.rng_seed")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("evaluate", parents=[common], help="probability tables and basis states")
    p.add_argument("--solution", required=True)
    p.add_argument("--out", required=True, help="probability-table CSV")
    p.add_argument("--states-out", help="basis-state CSV (default: <out>_states.csv)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("qkd", parents=[common], help="Monte-Carlo phase-error study")
    p.add_argument("--solution", required=True)
    p.add_argument("--config", help="JSON config with a 'qkd' section")
    p.add_argument("--sigmas", help="comma-separated phase-error std devs (rad)")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="report CSV; --verbose adds a per-trial JSON")
    p.set_defaults(func=cmd_qkd)

    p = sub.add_parser("chipscan", parents=[common], help="error versus kept FBG chips")
    p.add_argument("--solution", required=True)
    p.add_argument("--out", required=True, help="sweep CSV")
    p.set_defaults(func=cmd_chipscan)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be positive", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CliExit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
