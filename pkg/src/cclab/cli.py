"""Command-line interface.

Subcommands:
  predict   steady-state share curve for a preset (stdout or CSV)
  fluid     one fluid-model run
  sim       one packet-level run
  sweep     full experiment matrix (buffers x engines x trials)
  report    tables and SVG figures from a sweep directory

Exit codes: 0 success, 1 any cell failed, 2 configuration error.
"""

import argparse
import sys
from pathlib import Path

from . import fluid as fluid_mod
from . import harness, metrics, packetsim
from .core import load_scenario, validate
from .steady_state import predict_curve


def _common(parser):
    parser.add_argument("--preset", default="ware-40ms-10mbps",
                        help="scenario preset name")
    parser.add_argument("--mix", default=None,
                        help="flow mix, e.g. 5xbbrv1+5xcubic (preset default if omitted)")
    parser.add_argument("--buffers", default=None,
                        help="comma-separated buffer sizes in BDP (preset sweep if omitted)")
    parser.add_argument("--trials", type=int, default=3)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--time-scale", type=float, default=harness.DEFAULT_TIME_SCALE,
                        help="multiplies duration and analysis window of packet runs")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--out", default="out", help="output directory")


def _parse_buffers(arg, preset_name):
    if arg is None:
        return harness.PRESETS[preset_name].sweep
    try:
        buffers = tuple(float(b) for b in arg.split(",") if b.strip())
    except ValueError:
        raise harness.ConfigError(f"cannot parse --buffers {arg!r}")
    if not buffers:
        raise harness.ConfigError("empty --buffers list")
    return buffers


def cmd_predict(args):
    if args.preset not in harness.PRESETS:
        raise harness.ConfigError(
            f"unknown preset {args.preset!r}; valid: {', '.join(sorted(harness.PRESETS))}"
        )
    p = harness.PRESETS[args.preset]
    mix = args.mix or p.default_mix
    scenario = harness.build_scenario(args.preset, mix, buffer_bdp=1.0,
                                      time_scale=args.time_scale)
    n_bbr = sum(1 for f in scenario.flows if f.cca.is_bbr)
    if n_bbr == 0:
        raise harness.ConfigError("mix has no BBR flows to predict")
    buffers = sorted(_parse_buffers(args.buffers, args.preset))
    curve = predict_curve(scenario.link, n_bbr, scenario.analysis_window_s, buffers)
    print("buffer_bdp,bbr_fraction,loss_based_fraction,clamped")
    for x, pred in curve:
        print(f"{x:g},{pred.bbr_fraction:.6f},{pred.loss_based_fraction:.6f},"
              f"{int(pred.clamped)}")
    return 0


def _single_run(args, engine):
    if args.scenario:
        scenario = load_scenario(args.scenario)
        problems = validate(scenario)
        if problems:
            raise harness.ConfigError("invalid scenario file: " + "; ".join(problems))
        label = Path(args.scenario).stem
        window = scenario.analysis_window_s
        if engine == "fluid":
            params = fluid_mod.FluidParams(
                bbrv3_variant=any(f.cca.value == "bbrv3" for f in scenario.flows))
            trace = fluid_mod.simulate(scenario, params, trial=args.trial)
        else:
            trace = packetsim.run(scenario, trial_index=args.trial,
                                  params=harness.PACKETSIM_PARAMS)
        summ = metrics.summarize(trace, window)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ts = out / f"{label}_{engine}_t{args.trial}_timeseries.csv"
        trace.write_timeseries_csv(ts)
        print(f"{engine} run of {label}: bbr_fraction={summ.bbr_fraction:.4f} "
              f"jfi={summ.jfi:.4f} loss={summ.loss_rate:.5f} "
              f"util={summ.utilization:.4f} occupancy={summ.buffer_occupancy:.4f}")
        print(f"timeseries: {ts}")
        return 0

    buffers = _parse_buffers(args.buffers, args.preset)
    buf = buffers[0]
    out = Path(args.out)
    mix = args.mix or harness.PRESETS[args.preset].default_mix
    ts_dir = out / "runs" / f"{args.preset}_{engine}_bdp{buf:g}_t{args.trial}"
    rec = harness.run_cell(args.preset, mix, engine, buf, args.trial, args.seed,
                           args.time_scale if engine == "packetsim" else 1.0,
                           timeseries_path=str(ts_dir / "timeseries.csv"))
    if rec.error:
        print(f"run failed: {rec.error}", file=sys.stderr)
        return 1
    print(f"{engine} {args.preset} bdp={buf:g} trial={args.trial}: "
          f"bbr_fraction={rec.bbr_fraction:.4f} jfi={rec.jfi:.4f} "
          f"loss={rec.loss_rate:.5f} util={rec.utilization:.4f} "
          f"occupancy={rec.buffer_occupancy:.4f}")
    return 0


def cmd_fluid(args):
    return _single_run(args, "fluid")


def cmd_sim(args):
    return _single_run(args, "packetsim")


def cmd_sweep(args):
    if args.preset not in harness.PRESETS:
        raise harness.ConfigError(
            f"unknown preset {args.preset!r}; valid: {', '.join(sorted(harness.PRESETS))}"
        )
    engines = tuple(e.strip() for e in args.engines.split(",") if e.strip())
    matrix = harness.ExperimentMatrix(
        preset=args.preset,
        buffers=_parse_buffers(args.buffers, args.preset),
        mix=args.mix or harness.PRESETS[args.preset].default_mix,
        engines=engines,
        out_dir=args.out,
        trials=args.trials,
        seed=args.seed,
        time_scale=args.time_scale,
        jobs=args.jobs,
    )
    records = harness.execute(matrix)
    failures = [r for r in records if r.error]
    print(f"{len(records)} cells -> {Path(args.out) / 'summary.csv'}")
    for r in failures:
        print(f"FAILED {r.preset} {r.engine} bdp={r.buffer_bdp:g} trial={r.trial}: "
              f"{r.error}", file=sys.stderr)
    return 1 if failures else 0


def cmd_report(args):
    written = harness.report(args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cclab",
        description="Bottleneck-sharing laboratory: analytic, fluid, and "
                    "packet-level models of BBR vs loss-based TCP.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_predict = sub.add_parser("predict", help="steady-state share curve")
    _common(p_predict)
    p_predict.set_defaults(func=cmd_predict)

    for name, func, description in (
        ("fluid", cmd_fluid, "run the fluid model once"),
        ("sim", cmd_sim, "run the packet simulator once"),
    ):
        sp = sub.add_parser(name, help=description)
        _common(sp)
        sp.add_argument("--trial", type=int, default=0)
        sp.add_argument("--scenario", default=None,
                        help="scenario file (overrides --preset)")
        sp.set_defaults(func=func)

    p_sweep = sub.add_parser("sweep", help="run a full experiment matrix")
    _common(p_sweep)
    p_sweep.add_argument("--engines", default="steady_state,packetsim",
                         help="comma-separated subset of "
                              "steady_state,fluid,packetsim")
    p_sweep.set_defaults(func=cmd_sweep)

    p_report = sub.add_parser("report", help="tables and plots from a sweep")
    p_report.add_argument("--out", default="out", help="sweep output directory")
    p_report.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except harness.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except harness.ReportError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
