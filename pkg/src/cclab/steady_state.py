"""Closed-form share predictor for BBRv1 competing with loss-based flows.

When BBRv1 shares a droptail bottleneck with buffer-filling traffic it ends
up window-limited by its in-flight cap, and its aggregate capacity share at
convergence depends only on the buffer size, the number of BBR flows, and the
ProbeRTT duty cycle:

    p        = 1/2 - 1/(2 X) - 4 N / q
    bbr_frac = (1 - p) * (d - probe_time) / d

with X the buffer in BDP multiples, N the number of BBR flows, q the buffer
in packets, d the post-convergence duration, and probe_time the total time
spent in ProbeRTT during d.  Notably there is no term for the number of
loss-based competitors: the predictor takes no such argument.

The raw p goes negative for shallow buffers (X = 1 makes the first two terms
cancel); predictions clamp it into [0, 1] and set a flag instead of failing,
since a model curve is still wanted there.
"""

from dataclasses import dataclass
from typing import Sequence

from .core import LinkConfig, buffer_packets

DEFAULT_PROBERTT_INTERVAL_S = 10.0
DEFAULT_PROBERTT_DURATION_S = 0.2


@dataclass(frozen=True)
class SteadyStateInputs:
    """Arguments of the share formula for one operating point."""

    buffer_bdp: float            # X, dimensionless
    bbr_flow_count: int          # N >= 1
    buffer_packets: int          # q >= 1
    post_convergence_s: float    # d, seconds
    probertt_interval_s: float = DEFAULT_PROBERTT_INTERVAL_S
    probertt_duration_s: float = DEFAULT_PROBERTT_DURATION_S
    # Optional refinement: extra seconds per ProbeRTT cycle spent waiting for
    # the queue to drain.  Off by default; the base formula has no such term.
    drain_aware: bool = False
    drain_s_per_cycle: float = 0.0

    def __post_init__(self):
        if not self.buffer_bdp > 0:
            raise ValueError(f"buffer_bdp must be positive, got {self.buffer_bdp}")
        if self.bbr_flow_count < 1:
            raise ValueError(f"bbr_flow_count must be >= 1, got {self.bbr_flow_count}")
        if self.buffer_packets < 1:
            raise ValueError(f"buffer_packets must be >= 1, got {self.buffer_packets}")
        if not self.post_convergence_s > 0:
            raise ValueError(f"post_convergence_s must be positive, got {self.post_convergence_s}")
        if not 0 <= self.probertt_duration_s < self.probertt_interval_s:
            raise ValueError(
                "need 0 <= probertt_duration_s < probertt_interval_s, got "
                f"{self.probertt_duration_s} / {self.probertt_interval_s}"
            )


@dataclass(frozen=True)
class SteadyStatePrediction:
    loss_based_fraction: float   # p, clamped into [0, 1]
    bbr_fraction: float          # in [0, 1]
    probe_time_s: float
    clamped: bool                # True when the raw p fell outside [0, 1]


def compute_p(inputs: SteadyStateInputs) -> tuple:
    """Aggregate capacity fraction of the loss-based flows, with clamp flag."""
    raw = (
        0.5
        - 1.0 / (2.0 * inputs.buffer_bdp)
        - 4.0 * inputs.bbr_flow_count / inputs.buffer_packets
    )
    clamped = raw < 0.0 or raw > 1.0
    return min(1.0, max(0.0, raw)), clamped


def probe_time(d: float, interval_s: float = DEFAULT_PROBERTT_INTERVAL_S,
               duration_s: float = DEFAULT_PROBERTT_DURATION_S) -> float:
    """Total ProbeRTT time during ``d`` seconds of periodic probing."""
    if not d > 0:
        raise ValueError(f"d must be positive, got {d}")
    return d / interval_s * duration_s


def predict_bbr_fraction(inputs: SteadyStateInputs) -> SteadyStatePrediction:
    """Aggregate BBR capacity share at convergence."""
    p, clamped = compute_p(inputs)
    cycle_probe = inputs.probertt_duration_s
    if inputs.drain_aware:
        cycle_probe += inputs.drain_s_per_cycle
    t_probe = probe_time(inputs.post_convergence_s, inputs.probertt_interval_s, cycle_probe)
    frac = (1.0 - p) * (inputs.post_convergence_s - t_probe) / inputs.post_convergence_s
    return SteadyStatePrediction(
        loss_based_fraction=p,
        bbr_fraction=min(1.0, max(0.0, frac)),
        probe_time_s=t_probe,
        clamped=clamped,
    )


def predict_curve(link: LinkConfig, bbr_flow_count: int, post_convergence_s: float,
                  bdp_list: Sequence[float], **inputs_kwargs) -> list:
    """One prediction per buffer size; returns [(buffer_bdp, prediction), ...].

    The buffer in packets is recomputed for each point from the link, the way
    a sweep reconfigures the router.
    """
    if len(bdp_list) == 0:
        raise ValueError("bdp_list must be nonempty")
    if any(nxt <= prev for prev, nxt in zip(bdp_list, bdp_list[1:])):
        raise ValueError(f"bdp_list must be strictly ascending, got {list(bdp_list)}")
    curve = []
    for x in bdp_list:
        sized = LinkConfig(
            capacity_bps=link.capacity_bps,
            base_rtt_s=link.base_rtt_s,
            buffer_bdp=x,
            mtu_bytes=link.mtu_bytes,
        )
        inputs = SteadyStateInputs(
            buffer_bdp=x,
            bbr_flow_count=bbr_flow_count,
            buffer_packets=buffer_packets(sized),
            post_convergence_s=post_convergence_s,
            **inputs_kwargs,
        )
        curve.append((x, predict_bbr_fraction(inputs)))
    return curve
