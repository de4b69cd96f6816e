"""Experiment presets, batch execution, CSV persistence, and reports.

A sweep runs every (buffer x engine x trial) cell of an experiment matrix and
writes one `summary.csv` plus per-run `timeseries.csv` files.  Reports reduce
the summary to tables (mean and standard error across trials), score the
analytic and fluid predictions against the packet simulator, and emit static
SVG figures.  Reports are pure functions of the CSV content, so re-running
them is byte-idempotent.
"""

import csv
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from . import fluid as fluid_mod
from . import metrics as metrics_mod
from . import packetsim, svgplot
from .core import CcaKind, FlowSpec, LinkConfig, ScenarioConfig, validate
from .steady_state import SteadyStateInputs, predict_bbr_fraction
from .core import buffer_packets

ENGINES = ("steady_state", "fluid", "packetsim")

SUMMARY_COLUMNS = [
    "preset", "engine", "buffer_bdp", "trial", "bbr_fraction", "jfi",
    "loss_rate", "utilization", "buffer_occupancy", "seed", "duration_s",
    "analysis_window_s",
]

# The fluid model runs a short horizon regardless of the packet-level
# durations; long horizons blow up memory and add nothing after convergence.
FLUID_DURATION_S = 9.0
FLUID_WINDOW_S = 5.0

DEFAULT_TIME_SCALE = 0.1         # desk-scale packetsim runs
PACKETSIM_SAMPLE_S = 0.1
# Sub-millisecond host timing noise; see the engine notes on why a perfectly
# clean deterministic run synchronizes flows in ways real hosts do not.
PACKETSIM_PARAMS = {"sender_jitter_s": 0.005}


class ConfigError(ValueError):
    """Bad preset, mix, or matrix configuration (CLI exit code 2)."""


class ReportError(RuntimeError):
    pass


@dataclass(frozen=True)
class PresetDef:
    name: str
    capacity_bps: float
    base_rtt_s: float
    duration_s: float
    analysis_window_s: float     # window for CUBIC competitors
    analysis_window_reno_s: float
    sweep: tuple
    default_mix: str
    delay_jitter_s: float = 0.0
    mtu_bytes: int = 1500


PRESETS = {
    "ware-40ms-10mbps": PresetDef(
        name="ware-40ms-10mbps", capacity_bps=10e6, base_rtt_s=0.040,
        duration_s=1000.0, analysis_window_s=400.0, analysis_window_reno_s=200.0,
        sweep=(1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0),
        default_mix="1xbbrv1+1xcubic", delay_jitter_s=0.002,
    ),
    "ware-30ms-50mbps": PresetDef(
        name="ware-30ms-50mbps", capacity_bps=50e6, base_rtt_s=0.030,
        duration_s=1000.0, analysis_window_s=400.0, analysis_window_reno_s=200.0,
        sweep=(1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0),
        default_mix="1xbbrv1+1xcubic", delay_jitter_s=0.002,
    ),
    # The prose variant of the first scenario; figure captions disagree with
    # it, so it ships as its own preset instead of replacing either.
    "ware-10ms-40mbps-text": PresetDef(
        name="ware-10ms-40mbps-text", capacity_bps=40e6, base_rtt_s=0.010,
        duration_s=1000.0, analysis_window_s=400.0, analysis_window_reno_s=200.0,
        sweep=(1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0),
        default_mix="1xbbrv1+1xcubic", delay_jitter_s=0.002,
    ),
    # Ten senders, one receiver; sender delays drawn so each flow's RTT is
    # uniform in [30, 40] ms.  Buffers are sized on the 30 ms floor.
    "scherrer-100mbps": PresetDef(
        name="scherrer-100mbps", capacity_bps=100e6, base_rtt_s=0.030,
        duration_s=300.0, analysis_window_s=120.0, analysis_window_reno_s=120.0,
        sweep=(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0),
        default_mix="5xbbrv1+5xcubic", delay_jitter_s=0.010,
    ),
}


@dataclass(frozen=True)
class ExperimentMatrix:
    preset: str
    buffers: tuple
    mix: str
    engines: tuple
    out_dir: str
    trials: int = 3
    seed: int = 1
    time_scale: float = DEFAULT_TIME_SCALE
    jobs: int = 1

    def label(self) -> str:
        """Preset identifier written to the CSV; carries the mix when it is
        not the preset default, so every run is recoverable from the CSV."""
        base = PRESETS[self.preset].default_mix
        return self.preset if self.mix == base else f"{self.preset}/{self.mix}"


@dataclass
class RunRecord:
    preset: str
    engine: str
    buffer_bdp: float
    trial: int
    seed: int
    duration_s: float
    analysis_window_s: float
    bbr_fraction: Optional[float] = None
    jfi: Optional[float] = None
    loss_rate: Optional[float] = None
    utilization: Optional[float] = None
    buffer_occupancy: Optional[float] = None
    error: Optional[str] = None


_MIX_TERM = re.compile(r"^(?:(\d+)x)?([a-z0-9]+)$")


def parse_mix(mix: str) -> list:
    """Parse a flow-mix descriptor like ``5xbbrv1+5xcubic``."""
    out = []
    for term in mix.lower().split("+"):
        m = _MIX_TERM.match(term.strip())
        if not m:
            raise ConfigError(f"cannot parse mix term {term!r} in {mix!r}")
        count = int(m.group(1) or 1)
        try:
            kind = CcaKind(m.group(2))
        except ValueError:
            names = ", ".join(k.value for k in CcaKind)
            raise ConfigError(
                f"unknown CCA {m.group(2)!r} in mix {mix!r} (expected one of {names})"
            ) from None
        if count < 1:
            raise ConfigError(f"flow count must be >= 1 in {term!r}")
        out.append((count, kind))
    return out


def preset(name: str, mix: Optional[str] = None, out_dir: str = "out",
           trials: int = 3, seed: int = 1,
           time_scale: float = DEFAULT_TIME_SCALE,
           engines: tuple = ("steady_state", "packetsim")) -> tuple:
    """Scenario template and default matrix for a named preset."""
    if name not in PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; valid presets: {', '.join(sorted(PRESETS))}"
        )
    p = PRESETS[name]
    mix = mix or p.default_mix
    scenario = build_scenario(name, mix, buffer_bdp=p.sweep[0], trials=trials,
                              seed=seed, time_scale=1.0)
    matrix = ExperimentMatrix(
        preset=name, buffers=p.sweep, mix=mix, engines=tuple(engines),
        out_dir=out_dir, trials=trials, seed=seed, time_scale=time_scale,
    )
    return scenario, matrix


def analysis_window_for(p: PresetDef, terms: list) -> float:
    kinds = {kind for _, kind in terms}
    if CcaKind.RENO in kinds and CcaKind.CUBIC not in kinds:
        return p.analysis_window_reno_s
    return p.analysis_window_s


def build_scenario(preset_name: str, mix: str, buffer_bdp: float,
                   trials: int = 3, seed: int = 1,
                   time_scale: float = 1.0) -> ScenarioConfig:
    if preset_name not in PRESETS:
        raise ConfigError(
            f"unknown preset {preset_name!r}; valid presets: {', '.join(sorted(PRESETS))}"
        )
    p = PRESETS[preset_name]
    terms = parse_mix(mix)
    flows = []
    fid = 0
    for count, kind in terms:
        for _ in range(count):
            flows.append(FlowSpec(id=fid, cca=kind))
            fid += 1
    return ScenarioConfig(
        link=LinkConfig(
            capacity_bps=p.capacity_bps, base_rtt_s=p.base_rtt_s,
            buffer_bdp=buffer_bdp, mtu_bytes=p.mtu_bytes,
        ),
        flows=tuple(flows),
        duration_s=p.duration_s * time_scale,
        analysis_window_s=analysis_window_for(p, terms) * time_scale,
        trials=trials,
        seed=seed,
        delay_jitter_s=p.delay_jitter_s,
    )


# --- cell execution ----------------------------------------------------------

def run_cell(preset_name: str, mix: str, engine: str, buffer_bdp: float,
             trial: int, seed: int, time_scale: float,
             timeseries_path: Optional[str] = None) -> RunRecord:
    """Execute one matrix cell and reduce it to a RunRecord."""
    p = PRESETS[preset_name]
    scenario = build_scenario(preset_name, mix, buffer_bdp, seed=seed,
                              time_scale=time_scale)
    problems = validate(scenario)
    if problems:
        raise ConfigError("invalid scenario: " + "; ".join(problems))
    label = preset_name if mix == p.default_mix else f"{preset_name}/{mix}"
    rec = RunRecord(
        preset=label, engine=engine, buffer_bdp=buffer_bdp, trial=trial,
        seed=seed, duration_s=scenario.duration_s,
        analysis_window_s=scenario.analysis_window_s,
    )

    if engine == "steady_state":
        n_bbr = sum(1 for f in scenario.flows if f.cca.is_bbr)
        if n_bbr == 0:
            rec.error = "steady-state model needs at least one BBR flow"
            return rec
        pred = predict_bbr_fraction(SteadyStateInputs(
            buffer_bdp=buffer_bdp,
            bbr_flow_count=n_bbr,
            buffer_packets=buffer_packets(scenario.link),
            post_convergence_s=scenario.analysis_window_s,
        ))
        rec.bbr_fraction = pred.bbr_fraction
        return rec

    if engine == "fluid":
        fluid_scenario = replace(
            scenario, duration_s=FLUID_DURATION_S, analysis_window_s=FLUID_WINDOW_S
        )
        params = fluid_mod.FluidParams(
            bbrv3_variant=any(f.cca is CcaKind.BBR_V3 for f in scenario.flows)
        )
        trace = fluid_mod.simulate(fluid_scenario, params, trial=trial)
        window = FLUID_WINDOW_S
    elif engine == "packetsim":
        trace = packetsim.run(scenario, trial_index=trial,
                              sample_interval_s=PACKETSIM_SAMPLE_S,
                              params=PACKETSIM_PARAMS)
        window = scenario.analysis_window_s
    else:
        raise ConfigError(f"unknown engine {engine!r}; valid: {', '.join(ENGINES)}")

    summ = metrics_mod.summarize(trace, window)
    rec.bbr_fraction = summ.bbr_fraction if not math.isnan(summ.bbr_fraction) else None
    rec.jfi = summ.jfi
    rec.loss_rate = summ.loss_rate
    rec.utilization = summ.utilization
    rec.buffer_occupancy = summ.buffer_occupancy
    if timeseries_path:
        Path(timeseries_path).parent.mkdir(parents=True, exist_ok=True)
        trace.write_timeseries_csv(timeseries_path)
    return rec


def _cell_worker(args):
    try:
        return run_cell(*args)
    except Exception as exc:  # per-cell failures must not kill the sweep
        preset_name, mix, engine, buffer_bdp, trial, seed, time_scale, _ = args
        p = PRESETS[preset_name]
        label = preset_name if mix == p.default_mix else f"{preset_name}/{mix}"
        rec = RunRecord(
            preset=label, engine=engine, buffer_bdp=buffer_bdp, trial=trial,
            seed=seed, duration_s=0.0, analysis_window_s=0.0,
            error=f"{type(exc).__name__}: {exc}",
        )
        return rec


def _fmt_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}".rstrip("0").rstrip(".") if v == v else ""
    return str(v)


def write_summary_csv(records: list, path: Path) -> None:
    rows = sorted(
        records,
        key=lambda r: (r.preset, r.engine, r.buffer_bdp, r.trial),
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([
                r.preset, r.engine, _fmt_value(r.buffer_bdp), r.trial,
                _fmt_value(r.bbr_fraction), _fmt_value(r.jfi),
                _fmt_value(r.loss_rate), _fmt_value(r.utilization),
                _fmt_value(r.buffer_occupancy), r.seed,
                _fmt_value(r.duration_s), _fmt_value(r.analysis_window_s),
            ])


def execute(matrix: ExperimentMatrix) -> list:
    """Run the full matrix; returns all RunRecords (failed cells carry
    ``error``) and persists summary.csv plus per-run timeseries.csv."""
    if matrix.preset not in PRESETS:
        raise ConfigError(
            f"unknown preset {matrix.preset!r}; valid: {', '.join(sorted(PRESETS))}"
        )
    if not matrix.buffers:
        raise ConfigError("empty buffer sweep")
    if not matrix.engines:
        raise ConfigError("no engines selected")
    for e in matrix.engines:
        if e not in ENGINES:
            raise ConfigError(f"unknown engine {e!r}; valid: {', '.join(ENGINES)}")
    if matrix.trials < 1:
        raise ConfigError("trials must be >= 1")
    parse_mix(matrix.mix)

    out = Path(matrix.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    for engine in matrix.engines:
        for buf in matrix.buffers:
            for trial in range(matrix.trials):
                ts_path = None
                if engine in ("fluid", "packetsim"):
                    cell_dir = out / "runs" / (
                        f"{matrix.preset}_{engine}_bdp{buf:g}_t{trial}"
                    )
                    ts_path = str(cell_dir / "timeseries.csv")
                cells.append((
                    matrix.preset, matrix.mix, engine, buf, trial,
                    matrix.seed, matrix.time_scale, ts_path,
                ))

    if matrix.jobs > 1:
        with ProcessPoolExecutor(max_workers=matrix.jobs) as pool:
            records = list(pool.map(_cell_worker, cells))
    else:
        records = [_cell_worker(c) for c in cells]

    write_summary_csv(records, out / "summary.csv")
    return records


# --- report ------------------------------------------------------------------

def _read_summary(out_dir: Path) -> list:
    path = out_dir / "summary.csv"
    if not path.exists():
        raise ReportError(f"{path} not found; run a sweep first")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SUMMARY_COLUMNS:
            raise ReportError(
                f"{path}: unexpected columns {reader.fieldnames}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                row["buffer_bdp"] = float(row["buffer_bdp"])
                row["trial"] = int(row["trial"])
                for k in ("bbr_fraction", "jfi", "loss_rate", "utilization",
                          "buffer_occupancy"):
                    row[k] = float(row[k]) if row[k] else None
            except ValueError as exc:
                raise ReportError(f"{path} row {lineno}: {exc}") from None
            rows.append(row)
    return rows


def _aggregate(rows: list) -> dict:
    """{(preset, engine, buffer): {metric: (mean, stderr)}}"""
    groups = {}
    for row in rows:
        key = (row["preset"], row["engine"], row["buffer_bdp"])
        groups.setdefault(key, []).append(row)
    agg = {}
    for key, members in groups.items():
        stats = {}
        for metric in ("bbr_fraction", "jfi", "loss_rate", "utilization",
                       "buffer_occupancy"):
            vals = [m[metric] for m in members if m[metric] is not None]
            stats[metric] = metrics_mod.mean_stderr(vals) if vals else None
        agg[key] = stats
    return agg


def _curve(agg, preset_name, engine, metric="bbr_fraction"):
    pts = sorted(
        (buf, stats[metric])
        for (p, e, buf), stats in agg.items()
        if p == preset_name and e == engine and stats.get(metric) is not None
    )
    xs = [b for b, _ in pts]
    ys = [v[0] for _, v in pts]
    errs = [v[1] for _, v in pts]
    return xs, ys, errs


def report(out_dir) -> list:
    """Build tables, model scores, and SVG plots; returns written paths."""
    out = Path(out_dir)
    rows = _read_summary(out)
    agg = _aggregate(rows)
    presets_seen = sorted({row["preset"] for row in rows})
    engines_seen = sorted({row["engine"] for row in rows})
    written = []

    lines = ["# Sweep report", ""]
    for preset_name in presets_seen:
        lines.append(f"## {preset_name}")
        lines.append("")
        buffers = sorted({
            buf for (p, _, buf) in agg if p == preset_name
        })
        header = "| engine | " + " | ".join(f"{b:g} BDP" for b in buffers) + " |"
        lines.append("### BBR capacity fraction (mean +/- stderr)")
        lines.append("")
        lines.append(header)
        lines.append("|" + "---|" * (len(buffers) + 1))
        for engine in engines_seen:
            cells = []
            for b in buffers:
                stats = agg.get((preset_name, engine, b))
                if stats and stats.get("bbr_fraction"):
                    mean, se = stats["bbr_fraction"]
                    cells.append(f"{mean:.3f} +/- {se:.3f}")
                else:
                    cells.append("-")
            lines.append(f"| {engine} | " + " | ".join(cells) + " |")
        lines.append("")

        # model-vs-measurement scores against the packet simulator
        sim_curve = _curve(agg, preset_name, "packetsim")
        if sim_curve[0]:
            measured = list(zip(sim_curve[0], sim_curve[1]))
            for engine in ("steady_state", "fluid"):
                model_curve = _curve(agg, preset_name, engine)
                if model_curve[0] == sim_curve[0] and model_curve[0]:
                    predicted = list(zip(model_curve[0], model_curve[1]))
                    score = metrics_mod.score_model(predicted, measured)
                    lines.append(
                        f"- {engine} vs packetsim: MSE {score.mse:.4f}, "
                        f"RMSE {score.rmse:.4f}"
                    )
            lines.append("")

        safe = preset_name.replace("/", "_").replace("x", "x")
        series = {}
        for engine in engines_seen:
            xs, ys, errs = _curve(agg, preset_name, engine)
            if xs:
                series[engine] = (xs, ys, errs)
        if series:
            svg = svgplot.line_chart(
                series,
                title=f"BBR capacity share: {preset_name}",
                xlabel="buffer size (BDP)",
                ylabel="aggregate BBR fraction of capacity",
                fair_share=0.5,
            )
            path = out / f"fraction_vs_buffer_{safe}.svg"
            path.write_text(svg)
            written.append(path)

        if preset_name.startswith("scherrer"):
            panels = []
            for metric, label, ylim in (
                ("jfi", "JFI", (0.0, 1.0)),
                ("loss_rate", "loss rate", (0.0, 0.1)),
                ("utilization", "utilization", (0.0, 1.0)),
                ("buffer_occupancy", "buffer occupancy", (0.0, 1.0)),
            ):
                pseries = {}
                for engine in ("fluid", "packetsim"):
                    xs, ys, errs = _curve(agg, preset_name, engine, metric)
                    if xs:
                        pseries[engine] = (xs, ys, errs)
                panels.append({
                    "title": label, "ylabel": "", "series": pseries, "ylim": ylim,
                })
            if any(p["series"] for p in panels):
                svg = svgplot.panel_grid(
                    panels, title=f"{preset_name}: fairness, loss, utilization, occupancy",
                    xlabel="buffer size (BDP)",
                )
                path = out / f"metrics_panels_{safe}.svg"
                path.write_text(svg)
                written.append(path)

    failures = [r for r in rows if not any(
        r[k] is not None for k in ("bbr_fraction", "jfi", "utilization")
    )]
    if failures:
        lines.append(f"{len(failures)} cell(s) produced no metrics.")
        lines.append("")

    report_path = out / "report.md"
    report_path.write_text("\n".join(lines))
    written.append(report_path)
    return written
