"""Command-line interface: ``gsure-restore {degrade,restore,eval,sweep,scenarios}``.

Exit status is 0 on success, 1 when a run fails and 2 for usage errors.
Every command prints its resolved configuration (including seeds) to stderr
as one ``# config:`` JSON line before doing any work.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .harness import (
    BUDGETS,
    BUILTIN_SCENARIOS,
    Degraded,
    METHODS,
    Scenario,
    degrade,
    find_scenario,
    load_scenarios,
    method_config,
    restore,
    run_experiment,
    truth_monitor,
    write_trace_csv,
)
from .image import load_image, psnr, save_image
from .linop import ml_estimate
from .network import NetConfig
from .solvers import LR_SCHEDULES

JOBS_ENV = "GSURE_RESTORE_JOBS"

log = logging.getLogger("gsure_restore")


class UsageError(Exception):
    pass


def _print_config(cfg: dict) -> None:
    print("# config: " + json.dumps(cfg, sort_keys=True, default=str), file=sys.stderr, flush=True)


def _sidecar_path(image_path) -> Path:
    return Path(image_path).with_suffix(".json")


def _resolve_scenario(name: str | None, source: str | None, sidecar: dict | None) -> Scenario:
    if name:
        try:
            return find_scenario(name, source)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if sidecar and "scenario" in sidecar:
        return Scenario.from_dict(sidecar["scenario"])
    raise UsageError("no scenario: pass --scenario or provide the sidecar JSON written by 'degrade'")


def _require_file(path: str, what: str) -> None:
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")


def cmd_degrade(args) -> int:
    _require_file(args.input, "input image")
    scenario = _resolve_scenario(args.scenario, args.scenarios, None)
    _print_config({"command": "degrade", "input": args.input, "scenario": scenario.to_dict(), "seed": args.seed,
                   "output": args.output})
    deg = degrade(load_image(args.input), scenario, args.seed, NetConfig().stride, crop=True)
    save_image(deg.observed, args.output)
    sidecar = {
        "scenario": scenario.to_dict(),
        "seed": args.seed,
        "sigma": scenario.sigma,
        "sigma_sq": scenario.sigma_sq,
        "crop": deg.crop,
        "source": args.input,
    }
    if args.save_truth:
        save_image(deg.truth, args.save_truth)
        sidecar["truth"] = args.save_truth
    _sidecar_path(args.output).write_text(json.dumps(sidecar, indent=2) + "\n")
    print(f"wrote {args.output} and {_sidecar_path(args.output)}")
    return 0


def _method_overrides(args, method: str) -> dict:
    o = {}
    if method in ("gsure", "dip"):
        if args.iterations is not None:
            o["iterations"] = args.iterations
        if args.lr is not None:
            o["lr"] = args.lr
        if args.selection is not None:
            o["selection"] = args.selection
        if args.lr_schedule is not None:
            o["lr_schedule"] = args.lr_schedule
    else:
        if args.iterations is not None:
            o["n_iter"] = args.iterations
        if args.inner_iters is not None:
            o["inner_iters"] = args.inner_iters
        if args.lr is not None:
            o["inner_lr"] = args.lr
        if args.beta is not None:
            o["beta"] = args.beta
        if args.rho is not None:
            o["rho"] = args.rho
        if args.denoiser is not None:
            o["denoiser"] = args.denoiser
        if args.output_variable is not None:
            o["output"] = args.output_variable
    return o


def cmd_restore(args) -> int:
    _require_file(args.input, "input image")
    sidecar_file = _sidecar_path(args.input)
    sidecar = json.loads(sidecar_file.read_text()) if sidecar_file.is_file() else None
    scenario = _resolve_scenario(args.scenario, args.scenarios, sidecar)
    sigma_sq = args.sigma_sq if args.sigma_sq is not None else (sidecar or {}).get("sigma_sq")
    needs_sigma = args.method in ("gsure", "pnp-gsure")
    if needs_sigma and sigma_sq is None:
        raise UsageError(f"method {args.method} needs the noise level: pass --sigma-sq or keep the sidecar JSON")
    if sigma_sq is not None:
        scenario = Scenario(scenario.name, scenario.task, scenario.kernel, float(sigma_sq), scenario.xi, scenario.alpha)
    try:
        config = method_config(args.method, scenario, args.budget, _method_overrides(args, args.method), args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    y = load_image(args.input)
    net = NetConfig()
    lr_shape = y.shape[1:]
    hr_shape = (lr_shape[0] * scenario.alpha, lr_shape[1] * scenario.alpha)
    if hr_shape[0] % net.stride or hr_shape[1] % net.stride:
        raise UsageError(f"restored size {hr_shape} must be divisible by {net.stride}")
    op = scenario.operator(hr_shape)

    truth = load_image(args.truth) if args.truth else None
    deg = Degraded(y, truth, op, scenario, args.seed)
    _print_config({"command": "restore", "input": args.input, "method": args.method, "scenario": scenario.to_dict(),
                   "seed": args.seed, "budget": args.budget, "solver": config.to_dict(), "net": asdict(net)})
    monitor = truth_monitor(deg) if truth is not None else None
    result = restore(args.method, deg, config, net, monitor)

    save_image(result.restored, args.output)
    trace = args.trace or str(Path(args.output).with_suffix(".trace.csv"))
    write_trace_csv(result, trace)
    summary = {
        "method": args.method,
        "seed": args.seed,
        "selected_iteration": result.selected_iteration,
        "iterations_logged": len(result.traces),
        "config": result.config,
        "output": args.output,
        "trace": trace,
    }
    if truth is not None:
        summary["psnr"] = psnr(result.restored, truth)
        summary["ml_psnr"] = psnr(ml_estimate(op, y), truth)
    result_path = args.result or str(Path(args.output).with_suffix(".result.json"))
    Path(result_path).write_text(json.dumps(summary, indent=2, default=str) + "\n")
    print(f"wrote {args.output}, {trace} and {result_path}")
    if truth is not None:
        print(f"PSNR {summary['psnr']:.2f} dB (x_ML {summary['ml_psnr']:.2f} dB)")
    return 0


def cmd_eval(args) -> int:
    _require_file(args.restored, "restored image")
    _require_file(args.truth, "truth image")
    _print_config({"command": "eval", "restored": args.restored, "truth": args.truth})
    print(f"{psnr(load_image(args.restored), load_image(args.truth)):.2f}")
    return 0


def cmd_sweep(args) -> int:
    if args.images_dir != "bundled" and not Path(args.images_dir).exists():
        raise UsageError(f"image directory not found: {args.images_dir}")
    try:
        scenarios = load_scenarios(args.scenarios)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    overrides = {}
    for m in args.methods:
        o = _method_overrides(args, m)
        if o:
            overrides[m] = o
    _print_config({"command": "sweep", "images": args.images_dir, "scenarios": [s.name for s in scenarios],
                   "methods": args.methods, "budget": args.budget, "jobs": args.jobs, "seed": args.seed,
                   "overrides": overrides, "out_dir": args.out_dir})
    report = run_experiment(args.images_dir, scenarios, args.methods, overrides, args.jobs, args.out_dir, args.seed,
                            args.budget)
    for a in report.aggregates:
        print(f"{a['scenario']:>12} {a['method']:>10}  n={a['n']}  mean PSNR {a['mean_psnr']:.2f} dB")
    failures = report.failures
    print(f"{len(report.rows)} runs, {len(failures)} failed; report in {args.out_dir}")
    for r in failures:
        print(f"  FAILED {r['image']}/{r['scenario']}/{r['method']}: {r['error']}", file=sys.stderr)
    return 1 if failures else 0


def cmd_scenarios(args) -> int:
    try:
        sources = [args.source] if args.source else list(BUILTIN_SCENARIOS)
        _print_config({"command": "scenarios", "sources": sources})
        for src in sources:
            for s in load_scenarios(src):
                print(f"{s.name:>10}  {s.task:<6}  {s.kernel.describe():<24} sigma^2={s.sigma_sq:<5g} xi={s.xi:<6g} alpha={s.alpha}")
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return 0


def _default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _add_solver_flags(p) -> None:
    p.add_argument("--iterations", type=int, help="training iterations (ADMM iterations for pnp-* methods)")
    p.add_argument("--inner-iters", type=int, help="Adam steps per ADMM iteration")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--lr-schedule", choices=LR_SCHEDULES, help="learning-rate schedule for gsure/dip (default: constant)")
    p.add_argument("--selection", help="model selection: min-smoothed[:W], fixed:K or last")
    p.add_argument("--beta", type=float, help="P&P prior weight")
    p.add_argument("--rho", type=float, help="P&P penalty parameter")
    p.add_argument("--denoiser", help="identity, tv[:iters[:tol[:k]]] or 'cmd:PROGRAM {input} {output} {sigma}'")
    p.add_argument("--output-variable", choices=("z", "f"), help="P&P output: denoised z (default) or network f")
    p.add_argument("--budget", choices=BUDGETS, default="desk", help="iteration budget (default: desk)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsure-restore", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="blur/decimate an image and add noise")
    p.add_argument("--input", required=True)
    p.add_argument("--scenario", required=True, help="scenario name, e.g. deblur-2 or sr-4")
    p.add_argument("--scenarios", help="TOML/JSON file to look the scenario up in")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--save-truth", help="also write the (cropped) ground truth here")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("restore", help="restore a degraded image")
    p.add_argument("--input", required=True)
    p.add_argument("--scenario", help="scenario name (default: from the sidecar JSON)")
    p.add_argument("--scenarios", help="TOML/JSON file to look the scenario up in")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--sigma-sq", type=float, help="noise variance in display units (default: from the sidecar)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--trace", help="trace CSV path (default: OUTPUT with .trace.csv)")
    p.add_argument("--result", help="result JSON path (default: OUTPUT with .result.json)")
    p.add_argument("--truth", help="ground truth, used only to add PSNR to the trace")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("eval", help="print the PSNR of an image against the truth")
    p.add_argument("--restored", required=True)
    p.add_argument("--truth", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run images x scenarios x methods and write a report")
    p.add_argument("--images-dir", default="bundled", help="directory of PNGs, or 'bundled' (default)")
    p.add_argument("--scenarios", default="paper-deblur", help="builtin set or TOML/JSON file")
    p.add_argument("--methods", nargs="+", default=["dip", "gsure"], choices=METHODS)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=_default_jobs(), help=f"parallel runs (default: ${JOBS_ENV} or 1)")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("scenarios", help="list scenario definitions")
    p.add_argument("source", nargs="?", help="builtin set or TOML/JSON file (default: all builtins)")
    p.set_defaults(func=cmd_scenarios)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
