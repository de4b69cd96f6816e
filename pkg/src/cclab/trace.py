"""Common time-series container emitted by both simulation engines.

Every per-flow series is cumulative and sampled on the same fixed grid, so
metric reductions are simple window differences.  ``extras`` holds optional
engine-specific debug series (window sizes, filter estimates, state codes)
keyed by name; each value is a per-flow list of lists aligned with
``sample_times``.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

TIMESERIES_COLUMNS = ["t_s", "flow_id", "cum_bytes", "queue_bytes", "drops"]


@dataclass
class RunTrace:
    source: str                  # "packetsim" or "fluid"
    capacity_bps: float
    buffer_limit_bytes: float
    mtu_bytes: int
    flow_ids: list
    flow_kinds: list             # CcaKind per flow
    sample_times: list           # seconds, strictly increasing
    cum_goodput_bytes: list      # per flow: uniquely delivered payload bytes
    cum_sent_bytes: list         # per flow: bytes handed to the wire
    cum_dropped_bytes: list      # per flow: bytes dropped at the bottleneck
    queue_bytes: list            # shared queue occupancy per sample
    event_count: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def n_flows(self) -> int:
        return len(self.flow_ids)

    def write_timeseries_csv(self, path: Union[str, Path]) -> None:
        """Shared timeseries schema: t_s,flow_id,cum_bytes,queue_bytes,drops."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TIMESERIES_COLUMNS)
            for k, t in enumerate(self.sample_times):
                q = self.queue_bytes[k]
                for i, fid in enumerate(self.flow_ids):
                    drops = self.cum_dropped_bytes[i][k] / self.mtu_bytes
                    w.writerow([
                        f"{t:.6f}", fid,
                        f"{self.cum_goodput_bytes[i][k]:.0f}",
                        f"{q:.0f}",
                        f"{drops:.0f}" if float(drops).is_integer() else f"{drops:.3f}",
                    ])
