"""Bottleneck-sharing laboratory.

Three ways of predicting how BBR flows share a droptail bottleneck with
loss-based TCP (Reno/CUBIC), plus the glue to compare them:

- ``cclab.steady_state``: closed-form share predictor for BBRv1.
- ``cclab.fluid``: continuous-time fluid model integrated with fixed-step RK4.
- ``cclab.packetsim``: deterministic packet-level discrete-event simulator.
- ``cclab.metrics``: fairness/loss/utilization reductions and model scoring.
- ``cclab.harness``: scenario presets, sweep execution, CSV output, reports.
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    CcaKind,
    FlowSpec,
    LinkConfig,
    ScenarioConfig,
    bdp_packets,
    buffer_packets,
    load_scenario,
    validate,
)
