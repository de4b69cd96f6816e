"""Packet-level discrete-event simulator of the shared-bottleneck dumbbell.

The hot kernel lives in ``_engine.py``.  When the package was built with
Cython, that module exists both as a compiled extension (preferred by the
import system) and as the interpreted source; both are the same file, so
behavior is identical and traces are bit-equal.  Set ``CCLAB_PURE_PYTHON=1``
to force the interpreted kernel, e.g. to benchmark one against the other.
"""

import importlib.util
import os
import random
import sys
from pathlib import Path
from typing import Optional

from ..core import CcaKind, ScenarioConfig, materialize_delays, validate
from ..trace import RunTrace

_ENGINE_SOURCE = Path(__file__).with_name("_engine.py")

_CCA_CODES = {
    CcaKind.RENO: 0,
    CcaKind.CUBIC: 1,
    CcaKind.BBR_V1: 2,
    CcaKind.BBR_V2: 3,
    CcaKind.BBR_V3: 4,
}


def _load_interpreted():
    """Load the interpreted kernel under a private name.

    Needed when a compiled extension shadows ``_engine.py``: the benchmark
    and the forced-pure mode still want the plain-Python version.
    """
    name = "cclab.packetsim._engine_interpreted"
    if name in sys.modules:
        return sys.modules[name]
    spec = importlib.util.spec_from_file_location(name, _ENGINE_SOURCE)
    module = importlib.util.module_from_spec(spec)
    sys.modules[name] = module
    spec.loader.exec_module(module)
    return module


def load_engine(backend: str = "auto"):
    """Return the kernel module for ``backend``: auto, compiled, or pure."""
    if backend == "pure":
        return _load_interpreted()
    from . import _engine
    if backend == "compiled":
        if not _engine.COMPILED:
            raise RuntimeError("compiled engine not available (built without Cython)")
        return _engine
    if backend != "auto":
        raise ValueError(f"unknown engine backend {backend!r}")
    return _engine


if os.environ.get("CCLAB_PURE_PYTHON") == "1":
    _engine_mod = _load_interpreted()
else:
    _engine_mod = load_engine("auto")

ENGINE_BACKEND = "compiled" if _engine_mod.COMPILED else "python"
SimulationError = _engine_mod.SimulationError

# The packet trace is the shared RunTrace container with packetsim extras.
SimTrace = RunTrace


def run(scenario: ScenarioConfig, trial_index: int = 0,
        sample_interval_s: float = 0.1, params: Optional[dict] = None,
        engine=None) -> RunTrace:
    """Simulate one trial of ``scenario`` and return its sampled trace.

    The per-trial RNG derived from (seed, trial_index, flow id) drives only
    the randomized sender delays; everything else is deterministic, so
    identical inputs give bit-identical traces.
    """
    problems = validate(scenario)
    if problems:
        raise ValueError("invalid scenario: " + "; ".join(problems))
    eng = engine if engine is not None else _engine_mod
    delays = materialize_delays(scenario, trial_index)
    link = scenario.link
    flow_defs = [
        (i, _CCA_CODES[f.cca], link.base_rtt_s + delays[i], f.start_s,
         f.max_window_bytes,
         random.Random(f"cclab-jitter:{scenario.seed}:{trial_index}:{f.id}").getrandbits(64))
        for i, f in enumerate(scenario.flows)
    ]
    raw = eng.run_dumbbell(
        link.capacity_bps,
        link.mtu_bytes,
        link.buffer_bytes,
        scenario.duration_s,
        sample_interval_s,
        flow_defs,
        params or {},
    )
    series = raw["series"]
    return RunTrace(
        source="packetsim",
        capacity_bps=link.capacity_bps,
        buffer_limit_bytes=float(link.buffer_bytes),
        mtu_bytes=link.mtu_bytes,
        flow_ids=[f.id for f in scenario.flows],
        flow_kinds=[f.cca for f in scenario.flows],
        sample_times=raw["times"],
        cum_goodput_bytes=series["goodput"],
        cum_sent_bytes=series["sent"],
        cum_dropped_bytes=series["dropped"],
        queue_bytes=raw["queue"],
        event_count=raw["event_count"],
        extras={
            "wire_delivered": series["wire_delivered"],
            "net_inflight": series["net_inflight"],
            "cc_inflight": series["cc_inflight"],
            "cwnd": series["cwnd"],
            "pacing_rate": series["pacing_rate"],
            "btlbw": series["btlbw"],
            "rtprop": series["rtprop"],
            "state": series["state"],
            "cap_bytes": series["cap_bytes"],
            "retx": series["retx"],
            "drop_count": raw["drop_count"],
            "path_rtts": [link.base_rtt_s + d for d in delays],
            **({"event_log": raw["event_log"]} if "event_log" in raw else {}),
        },
    )
