"""Command-line entry point: ``qtwp run|batch|sweep|theory``.

Every output file starts with a ``# config=`` line holding the resolved
command; its ``argv`` entry replays the command exactly.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from qtwp import __version__
from qtwp.analytics import (
    batch_stats,
    empirical_metrics,
    expected_sd_error_rate,
    rows_to_csv,
    theory_decoherence,
    theory_table_csv,
)
from qtwp.sim_engine import ConfigError, SimConfig, fmt, run_many, run_simulation, trace_to_csv

log = logging.getLogger("qtwp")

MODE_CHOICES = ("quantum-ideal", "quantum-variant", "direct", "sdc-tdd", "ping-pong")
FLAG_FOR_FIELD = {
    "mode": "--mode",
    "c": "--c",
    "noise": "--noise",
    "t1": "--t1",
    "t2": "--t2",
    "delta": "--delta",
    "rounds_per_swap": "--rounds-per-swap",
    "seed": "--seed",
    "slots": "--slots",
    "rounds": "--rounds",
}


class UsageError(Exception):
    def __init__(self, flag: str, message: str):
        super().__init__(f"{flag}: {message}")


def _c_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None
    if lo > hi:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return lo, hi


def _run_flags(p: argparse.ArgumentParser, default_noise: Optional[str] = None, with_mode: bool = True) -> None:
    if with_mode:
        p.add_argument("--mode", choices=MODE_CHOICES, default="quantum-ideal")
    p.add_argument("--slots", type=int, default=None, help="slot horizon (default 1000)")
    p.add_argument("--rounds", type=int, default=None, help="round horizon instead of --slots")
    p.add_argument("--seed", type=int, default=0)
    if with_mode:
        p.add_argument("--c", type=int, default=None, help="coherence budget in slots")
    p.add_argument("--noise", choices=("none", "cliff", "t1t2"), default=default_noise,
                   help="memory model; --t1/--t2 imply t1t2")
    p.add_argument("--t1", type=float, default=None, help="relaxation time in slots (default 20)")
    p.add_argument("--t2", type=float, default=None, help="dephasing time in slots (default 18)")
    p.add_argument("--delta", type=float, default=0.0, help="setup delay per role swap, in slots")
    p.add_argument("--rounds-per-swap", type=int, default=1)
    if with_mode:
        p.add_argument("--exclude-presharing", action="store_true",
                       help="sdc-tdd only: do not charge pair distribution")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qtwp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = sub.choices

    p = sub.add_parser("run", help="single run: per-slot trace CSV and summary JSON")
    _run_flags(p)
    p.add_argument("--out-prefix", default="run")

    p = sub.add_parser("batch", help="many seeds: per-run metrics and boxplot statistics")
    _run_flags(p)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--truncate", type=int, default=100, help="slot count of the truncated view")
    p.add_argument("--out-prefix", default="batch")

    p = sub.add_parser("sweep", help="coherence-budget sweep of the variant protocol")
    _run_flags(p, default_noise="t1t2", with_mode=False)
    p.add_argument("--c-range", type=_c_range, default=(2, 10))
    p.add_argument("--runs-per-c", type=int, default=100)
    p.add_argument("--out-prefix", default="sweep")

    p = sub.add_parser("theory", help="closed-form R/E table")
    p.add_argument("--c-range", type=_c_range, default=None)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--n", type=int, default=1, help="rounds between role swaps")
    p.add_argument("--out-prefix", default="theory")
    return parser


def _config_from_args(args: argparse.Namespace, **overrides) -> SimConfig:
    noise = args.noise
    if noise is None:
        noise = "t1t2" if (args.t1 is not None or args.t2 is not None) else "none"
    slots, rounds = args.slots, args.rounds
    if slots is not None and rounds is not None:
        raise UsageError("--rounds", "give either --slots or --rounds, not both")
    if slots is None and rounds is None:
        slots = 1000
    fields = dict(
        mode=getattr(args, "mode", "quantum-variant").replace("-", "_"),
        coherence=getattr(args, "c", None),
        noise=noise,
        t1=20.0 if args.t1 is None else args.t1,
        t2=18.0 if args.t2 is None else args.t2,
        delta=args.delta,
        rounds_per_swap=args.rounds_per_swap,
        seed=args.seed,
        slots=slots,
        rounds=rounds,
        include_presharing=not getattr(args, "exclude_presharing", False),
    )
    fields.update(overrides)
    try:
        return SimConfig(**fields)
    except ConfigError as e:
        raise UsageError(FLAG_FOR_FIELD.get(e.field, e.field), str(e).split(": ", 1)[1]) from None


def _echo(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    """Resolved arguments (minus output location) and an argv that replays them."""
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in ("out_prefix", "command")}
    argv = [args.command]
    for action in parser.subcommands[args.command]._actions:
        if not action.option_strings or action.dest in ("help", "out_prefix"):
            continue
        value = getattr(args, action.dest)
        flag = action.option_strings[0]
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                argv.append(flag)
        elif value is not None:
            if isinstance(value, tuple):
                value = f"{value[0]}:{value[1]}"
            argv += [flag, str(value)]
    resolved = {k: (list(v) if isinstance(v, tuple) else v) for k, v in resolved.items()}
    return {"command": args.command, "argv": argv, "args": resolved, "version": __version__}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def cmd_run(args, parser) -> int:
    cfg = _config_from_args(args, record_trace=True)
    echo = _echo(args, parser)
    echo["config"] = cfg.to_dict()
    trace = run_simulation(cfg)
    m = empirical_metrics(trace)
    prefix = Path(args.out_prefix)
    Path(f"{prefix}.trace.csv").write_text(trace_to_csv(trace, echo))
    summary = {
        "config": echo,
        "totals": {
            "slots_simulated": trace.n_slots,
            "rounds": m.n_rounds,
            "bits": m.n_bits,
            "qubits": m.n_qubits,
            "delay_charged": m.delay,
            "elapsed": m.n_slots + m.delay,
            "discarded_qubits": trace.discarded_qubits,
            "termination": trace.termination,
        },
        "R": m.rate,
        "E": m.efficiency,
        "sd_bits_total": m.n_sd_bits,
        "sd_bit_errors": m.n_sd_bit_errors,
        "sd_error_rate": m.sd_error_rate,
    }
    Path(f"{prefix}.summary.json").write_text(_dump(summary))
    print(f"R={fmt(m.rate)} E={fmt(m.efficiency)} sd_error_rate={fmt(m.sd_error_rate)}")
    return 0


def _batch_metrics(job: tuple[SimConfig, int]):
    cfg, truncate = job
    trace = run_simulation(cfg)
    return empirical_metrics(trace, upto_slot=truncate), empirical_metrics(trace)


def cmd_batch(args, parser) -> int:
    if args.runs < 1:
        raise UsageError("--runs", "must be >= 1")
    base = _config_from_args(args)
    if base.slots is None:
        raise UsageError("--rounds", "batch needs a slot horizon (--slots)")
    configs = [_config_from_args(args, seed=args.seed + i) for i in range(args.runs)]
    results = run_many([(c, args.truncate) for c in configs], _batch_metrics)
    echo = _echo(args, parser)
    echo["config"] = base.to_dict()
    views = {f"{args.truncate}": [r[0] for r in results], f"{base.slots}": [r[1] for r in results]}
    header = ["seed"]
    for label in views:
        header += [f"R_{label}", f"E_{label}", f"err_rate_{label}", f"rounds_{label}"]
    rows = []
    for i, cfg in enumerate(configs):
        row = [cfg.seed]
        for ms in views.values():
            m = ms[i]
            row += [m.rate, m.efficiency, m.sd_error_rate, m.n_rounds]
        rows.append(row)
    prefix = Path(args.out_prefix)
    Path(f"{prefix}.batch.csv").write_text(rows_to_csv(header, rows, json.dumps(echo, sort_keys=True)))
    summary = {"config": echo, "views": {}}
    for label, ms in views.items():
        view = {"R": batch_stats(m.rate for m in ms).to_dict(),
                "E": batch_stats(m.efficiency for m in ms).to_dict()}
        errs = [m.sd_error_rate for m in ms if not np.isnan(m.sd_error_rate)]
        if errs:
            view["err_rate"] = batch_stats(errs).to_dict()
        summary["views"][label] = view
        print(f"[{label} slots] R median={fmt(view['R']['median'])} IQR={fmt(view['R']['iqr'])} "
              f"E median={fmt(view['E']['median'])} IQR={fmt(view['E']['iqr'])}")
    Path(f"{prefix}.batch.json").write_text(_dump(summary))
    return 0


def _sweep_metrics(cfg: SimConfig):
    return empirical_metrics(run_simulation(cfg))


SWEEP_HEADER = ["c", "R_theory", "E_theory"] + [
    f"{name}_{stat}"
    for name in ("R_sim", "E_sim", "err_rate")
    for stat in ("mean", "se", "q1", "median", "q3", "outliers")
] + ["err_rate_oracle"]


def cmd_sweep(args, parser) -> int:
    lo, hi = args.c_range
    if args.runs_per_c < 1:
        raise UsageError("--runs-per-c", "must be >= 1")
    if lo < 2:
        raise UsageError("--c-range", "coherence budget must be >= 2")
    cs = list(range(lo, hi + 1))
    configs = [_config_from_args(args, mode="quantum_variant", coherence=c, seed=args.seed + i)
               for c in cs for i in range(args.runs_per_c)]
    results = run_many(configs, _sweep_metrics)
    echo = _echo(args, parser)
    echo["config"] = configs[0].to_dict()
    rows = []
    for j, c in enumerate(cs):
        ms = results[j * args.runs_per_c:(j + 1) * args.runs_per_c]
        th = theory_decoherence(c)
        row = [c, th.rate, th.efficiency]
        for values in ([m.rate for m in ms], [m.efficiency for m in ms], [m.sd_error_rate for m in ms]):
            s = batch_stats(values)
            row += [s.mean, s.standard_error, s.q1, s.median, s.q3, len(s.outliers)]
        noise = configs[j * args.runs_per_c].noise_params
        row.append(expected_sd_error_rate(noise, c) if noise is not None else 0.0)
        rows.append(row)
    Path(f"{args.out_prefix}.sweep.csv").write_text(rows_to_csv(SWEEP_HEADER, rows, json.dumps(echo, sort_keys=True)))
    for row in rows:
        print(f"c={row[0]} R={fmt(row[3])} (theory {fmt(row[1])}) err_rate={fmt(row[15])}")
    return 0


def cmd_theory(args, parser) -> int:
    if args.delta < 0:
        raise UsageError("--delta", "must be >= 0")
    if args.n < 1:
        raise UsageError("--n", "must be >= 1")
    cs = []
    if args.c_range is not None:
        lo, hi = args.c_range
        if lo < 2:
            raise UsageError("--c-range", "coherence budget must be >= 2")
        cs = list(range(lo, hi + 1))
    echo = _echo(args, parser)
    text = theory_table_csv(cs, args.delta, args.n, json.dumps(echo, sort_keys=True))
    Path(f"{args.out_prefix}.theory.csv").write_text(text)
    sys.stdout.write(text.split("\n", 1)[1])
    return 0


COMMANDS = {"run": cmd_run, "batch": cmd_batch, "sweep": cmd_sweep, "theory": cmd_theory}


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args, parser)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"qtwp {args.command}: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - report, exit 1
        log.exception("%s failed", args.command)
        print(f"qtwp {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
