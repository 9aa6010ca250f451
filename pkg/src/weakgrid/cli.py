"""Command-line entry point.

Subcommands:

* ``run``      one scenario -> trace CSV + metrics JSON + console summary
* ``compare``  both synchronization modes on the same network, side by side
* ``sweep``    line-reactance sweep -> classification table + crossover
* ``validate`` fast self-checks of the algebraic core

A classification of unstable is a simulation *result*: completed runs exit 0
regardless of the outcome.  Exit code 2 flags configuration errors, 1 I/O
errors or failed validation checks.
"""

from __future__ import annotations

import argparse
import math
import os
import random
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigInvalid, load_config, scenario_from_dict
from .controller import ControlParams, PllState, current_references, pll_update
from .frames import (
    DqVector,
    ThreePhaseSample,
    abc_to_dq,
    balanced_abc,
    dq_to_abc,
    instantaneous_power,
    nominal_base,
    rotate_frame,
    wrap_angle,
)
from .presets import get_preset, preset_names
from .scenario import InsufficientTrace, Metrics, Scenario, impedance_sweep, run
from .synclink import SyncMode, compensate_angle
from .traceio import write_metrics_json, write_plant_rate_csv, write_trace_csv

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2


def _out_dir(args) -> Path:
    if args.out:
        out = Path(args.out)
    elif os.environ.get("WEAKGRID_OUT"):
        out = Path(os.environ["WEAKGRID_OUT"])
    else:
        out = Path("weakgrid-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_scenario(args) -> Scenario:
    if args.config and args.preset:
        raise ConfigInvalid("give either --config or --preset, not both")
    if args.config:
        scenario = load_config(args.config)
    elif args.preset:
        scenario = get_preset(args.preset)
    else:
        raise ConfigInvalid("one of --config or --preset is required")

    doc = None
    overrides = {}
    if args.sync:
        overrides.setdefault("sync", {})["mode"] = args.sync
    if args.delay is not None:
        overrides.setdefault("sync", {})["delay"] = args.delay
    if args.compensate:
        overrides.setdefault("sync", {})["compensation"] = True
    if args.fault_cycles is not None:
        overrides.setdefault("fault", {})["duration_cycles"] = args.fault_cycles
    if args.dt is not None:
        overrides.setdefault("timing", {})["dt_plant"] = args.dt
    if overrides:
        from .config import scenario_to_dict

        doc = scenario_to_dict(scenario)
        for section, vals in overrides.items():
            doc[section].update(vals)
        scenario = scenario_from_dict(doc)
    return scenario


def _print_metrics(label: str, metrics: Metrics) -> None:
    def fmt_t(x: float) -> str:
        return "not-settled" if math.isinf(x) else f"{x:.4f} s"

    print(f"[{label}] classification: {metrics.stable}")
    print(f"[{label}] steady p/q:     {metrics.steady_p:+.4f} / {metrics.steady_q:+.4f} pu")
    print(
        f"[{label}] settle p/q/v:   {fmt_t(metrics.settle_time_p)} / "
        f"{fmt_t(metrics.settle_time_q)} / {fmt_t(metrics.settle_time_v)}"
    )
    print(f"[{label}] overshoot p:    {metrics.overshoot_p:.4f} pu")
    print(f"[{label}] scr:            {metrics.scr:.4f}")


def cmd_run(args) -> int:
    scenario = _load_scenario(args)
    out = _out_dir(args)
    trace, metrics = run(scenario, plant_rate_log=args.plant_rate)
    tag = f"{scenario.label}_{scenario.sync_mode.value}"
    trace_path = out / f"trace_{tag}.csv"
    write_trace_csv(trace, trace_path)
    write_metrics_json(metrics, scenario, out / f"metrics_{tag}.json")
    if args.plant_rate:
        write_plant_rate_csv(trace.plant_log, out / f"plant_{tag}.csv")
    _print_metrics(tag, metrics)
    print(f"[{tag}] trace:          {trace_path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if args.preset:
        base_scenario = get_preset(args.preset)
    elif args.config:
        base_scenario = load_config(args.config)
    else:
        raise ConfigInvalid("one of --config or --preset is required")
    out = _out_dir(args)

    from dataclasses import replace

    results = {}
    for mode in (SyncMode.PCC, SyncMode.STRONG_GRID):
        scenario = replace(
            base_scenario, sync_mode=mode, delay=0.0, compensation_enabled=False
        )
        trace, metrics = run(scenario)
        tag = f"{scenario.label}_{mode.value}"
        write_trace_csv(trace, out / f"trace_{tag}.csv")
        write_metrics_json(metrics, scenario, out / f"metrics_{tag}.json")
        results[mode.value] = metrics
        _print_metrics(tag, metrics)

    report = {
        "label": base_scenario.label,
        "pcc": results["pcc"].as_dict(),
        "sg": results["sg"].as_dict(),
    }
    import json

    (out / f"compare_{base_scenario.label}.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n"
    )
    faster = (
        "sg"
        if results["sg"].settle_time_p <= results["pcc"].settle_time_p
        else "pcc"
    )
    print(f"[compare] faster real-power settling: {faster}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.x_min >= args.x_max:
        raise ConfigInvalid("--x-min must be below --x-max")
    if args.steps < 2:
        raise ConfigInvalid("--steps must be at least 2")
    if args.preset:
        template = get_preset(args.preset)
    elif args.config:
        template = load_config(args.config)
    else:
        raise ConfigInvalid("one of --config or --preset is required")
    out = _out_dir(args)

    xs = list(np.linspace(args.x_min, args.x_max, args.steps))
    result = impedance_sweep(template, xs)

    lines = ["x_line,mode,classification"]
    for row in result.rows:
        lines.append(f"{row.x_line:.12g},{row.mode},{row.classification}")
    sweep_path = out / "sweep.csv"
    sweep_path.write_text("\n".join(lines) + "\n")

    for row in result.rows:
        print(f"[sweep] x_line={row.x_line:.5f} {row.mode:>3}: {row.classification}")
    if result.crossover_x is not None:
        print(f"[sweep] crossover x_line: {result.crossover_x:.5f}")
    else:
        print("[sweep] no crossover in the given range")
    if result.dominance_violations:
        print(f"[sweep] WARNING reverse separation at x_line: {result.dominance_violations}")
    print(f"[sweep] table: {sweep_path}")
    return EXIT_OK


# --- validate ----------------------------------------------------------------


def _suite_transforms(rng) -> tuple[int, list[str]]:
    failures = []
    n = 0
    for _ in range(300):
        d, q = rng.uniform(-2, 2), rng.uniform(-2, 2)
        theta = rng.uniform(-10, 10)
        x = dq_to_abc(DqVector(d, q), theta)
        back = abc_to_dq(x, theta)
        n += 1
        if abs(back.d - d) > 1e-12 or abs(back.q - q) > 1e-12:
            failures.append(f"round trip drifted at theta={theta}")
        n += 1
        shifted = abc_to_dq(x, theta + 4 * math.pi)
        if abs(shifted.d - d) > 1e-9 or abs(shifted.q - q) > 1e-9:
            failures.append(f"2pi periodicity broken at theta={theta}")
    return n, failures


def _suite_power_invariance(rng) -> tuple[int, list[str]]:
    failures = []
    n = 0
    for _ in range(1000):
        v = DqVector(rng.uniform(-2, 2), rng.uniform(-2, 2))
        i = DqVector(rng.uniform(-3, 3), rng.uniform(-3, 3))
        delta = rng.uniform(-7, 7)
        p0, q0 = instantaneous_power(v, i)
        p1, q1 = instantaneous_power(rotate_frame(v, delta), rotate_frame(i, delta))
        n += 1
        scale = max(abs(p0), abs(q0), 1e-9)
        if abs(p1 - p0) > 1e-12 * scale + 1e-14 or abs(q1 - q0) > 1e-12 * scale + 1e-14:
            failures.append(f"power changed under rotation delta={delta}")
    return n, failures


def _suite_reference_identity(rng) -> tuple[int, list[str]]:
    failures = []
    n = 0
    for _ in range(1000):
        mag = rng.uniform(0.6, 1.8)
        ang = rng.uniform(0, 2 * math.pi)
        v = DqVector(mag * math.cos(ang), mag * math.sin(ang))
        p_set, q_set = rng.uniform(-1, 1), rng.uniform(-1, 1)
        ref, guarded = current_references(v, p_set, q_set)
        n += 1
        if guarded:
            continue
        p, q = instantaneous_power(v, ref)
        if abs(p - p_set) > 1e-12 or abs(q - q_set) > 1e-12:
            failures.append(f"reference identity broke at v={v}")
    return n, failures


def _suite_compensation(rng) -> tuple[int, list[str]]:
    base = nominal_base()
    failures = []
    n = 0
    for _ in range(500):
        t = rng.uniform(0, 10)
        k = rng.randrange(0, 400)
        tau = k * 5e-5
        phi_now = wrap_angle(base.omega_nominal * t)
        phi_delayed = wrap_angle(base.omega_nominal * (t - tau))
        rebuilt = compensate_angle(phi_delayed, tau, base)
        err = abs(math.remainder(rebuilt - phi_now, 2 * math.pi))
        n += 1
        if err > 1e-9:
            failures.append(f"compensation error {err} at tau={tau}")
    return n, failures


def _suite_pll_lock(rng) -> tuple[int, list[str]]:
    base = nominal_base()
    ctrl = ControlParams()
    failures = []
    pll = PllState(phase=wrap_angle(1.0), integrator=0.0)
    n_ticks = int(round(0.5 / ctrl.t_sample))
    for j in range(n_ticks):
        t = j * ctrl.t_sample
        pll = pll_update(pll, balanced_abc(1.0, base.omega_nominal * t), ctrl, base)
    t_end = n_ticks * ctrl.t_sample
    err = abs(math.remainder(pll.phase - wrap_angle(base.omega_nominal * t_end), 2 * math.pi))
    if err > 0.01:
        failures.append(f"pll error {err:.4f} rad after 0.5 s from 1 rad offset")
    return 1, failures


def cmd_validate(args) -> int:
    rng = random.Random(20260808)
    suites = [
        ("transforms", _suite_transforms),
        ("power-invariance", _suite_power_invariance),
        ("reference-identity", _suite_reference_identity),
        ("delay-compensation", _suite_compensation),
        ("pll-lock", _suite_pll_lock),
    ]
    any_failed = False
    for name, fn in suites:
        n, failures = fn(rng)
        status = "PASS" if not failures else "FAIL"
        print(f"[validate] {name}: {status} ({n} checks, {len(failures)} failures)")
        for msg in failures[:5]:
            print(f"[validate]   {msg}")
        any_failed |= bool(failures)
    return EXIT_IO if any_failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weakgrid",
        description="Weak-grid VSC synchronization simulator",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_overrides=True):
        p.add_argument("--config", help="JSON scenario file")
        p.add_argument("--preset", choices=preset_names(), help="shipped scenario")
        p.add_argument("--out", help="output directory (default $WEAKGRID_OUT or ./weakgrid-out)")
        if with_overrides:
            p.add_argument("--sync", choices=[m.value for m in SyncMode])
            p.add_argument("--delay", type=float, help="channel delay in seconds")
            p.add_argument("--compensate", action="store_true", help="enable delay compensation")
            p.add_argument("--fault-cycles", type=float, dest="fault_cycles")
            p.add_argument("--dt", type=float, help="plant integration step in seconds")
            p.add_argument("--seed", type=int, help="reserved; the simulator is deterministic")

    p_run = sub.add_parser("run", help="run one scenario")
    add_common(p_run)
    p_run.add_argument("--plant-rate", action="store_true", help="also dump every plant step")
    p_run.set_defaults(fn=cmd_run)

    p_cmp = sub.add_parser("compare", help="run both synchronization modes")
    add_common(p_cmp, with_overrides=False)
    p_cmp.set_defaults(fn=cmd_compare)

    p_sweep = sub.add_parser("sweep", help="line-reactance sweep")
    add_common(p_sweep, with_overrides=False)
    p_sweep.add_argument("--x-min", type=float, required=True, dest="x_min")
    p_sweep.add_argument("--x-max", type=float, required=True, dest="x_max")
    p_sweep.add_argument("--steps", type=int, required=True)
    p_sweep.set_defaults(fn=cmd_sweep)

    p_val = sub.add_parser("validate", help="run the fast property suites")
    p_val.set_defaults(fn=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigInvalid as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError, InsufficientTrace) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
