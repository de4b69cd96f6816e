"""Continuous-time fluid model of BBR and loss-based flows on one bottleneck.

Discrete protocol machinery is replaced by smooth stand-ins so the whole
system integrates as an ODE with a fixed-step RK4 scheme:

- The ProbeBW pacing-gain cycle becomes a periodic 8-phase gain function with
  logistic transitions between plateaus (1.25, 0.75, then six 1.0 phases, one
  estimated-RTT each).
- The ProbeRTT schedule becomes a smooth periodic pulse ``m`` in [0, 1]; the
  sending rate is the convex combination  m * (w_prt / tau) + (1 - m) * x_pbw.
- Windowed extrema estimators become asymmetric relaxations: the bandwidth
  estimate rises quickly toward the flow's delivered rate and decays slowly;
  the RTT-floor estimate only tracks downward, except during a ProbeRTT pulse
  when it re-anchors to the currently observed RTT.
- Loss-based windows follow mean-field AIMD dynamics (additive increase, or
  the cubic curve in wall-clock time, against a loss-event rate derived from
  the smoothed drop fraction).

The droptail queue integrates inflow minus service; overflow past the buffer
limit is clamped once per step and booked as loss, so drops appear only when
the queue is pinned at its limit.  Everything is deterministic: identical
scenarios and parameters give bit-identical trajectories.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

from .core import CcaKind, ScenarioConfig, materialize_delays, validate
from .trace import RunTrace

BBR_CWND_GAIN = 2.0
CUBIC_BETA = 0.7
CUBIC_C = 0.4                   # packets / s^3
RENO_BETA = 0.5
PROBERTT_CAP_PACKETS = 4        # v1 in-flight floor during ProbeRTT


class FluidDivergenceError(RuntimeError):
    """The integrator produced a non-finite state."""


@dataclass(frozen=True)
class FluidParams:
    sigmoid_steepness: float = 40.0          # transition sharpness, dimensionless
    integrator_step_s: float = 0.0           # 0 = auto: min(1 ms, min RTT / 100)
    pacing_gain_cycle: tuple = (1.25, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    probertt_interval_s: float = 10.0
    probertt_duration_s: float = 0.2
    btlbw_up_rate: float = 50.0              # 1/s, fast rise of the bw estimate
    btlbw_decay_rate: float = 2.5            # 1/s, ~10-RTT window equivalent
    rtprop_track_rate: float = 50.0          # 1/s, downward RTT tracking
    rtprop_reset_rate: float = 25.0          # 1/s, re-anchor during ProbeRTT
    loss_threshold: float = 0.02             # v2/v3 loss fraction trigger
    beta_inflight_hi: float = 0.7            # multiplicative cut of the cap
    loss_gate_width: float = 0.005           # smoothness of the trigger
    # Additive probe-driven recovery of the in-flight cap, in packets per
    # second.  v3 keeps probing after loss episodes, so it regrows much
    # faster than v2, whose cap tends to stick at low values.
    inflight_hi_growth_pkts: float = 2.0
    inflight_hi_growth_pkts_v3: float = 20.0
    loss_smoothing_tau_s: float = 0.25
    bbrv3_variant: bool = False              # allow BbrV3 flows in simulate()
    queue_eps_bytes: float = 750.0           # smoothing of the empty-queue kink

    def step_for(self, min_base_rtt_s: float) -> float:
        if self.integrator_step_s > 0:
            return self.integrator_step_s
        return min(1e-3, min_base_rtt_s / 100.0)


@dataclass
class FluidFlowState:
    """Per-flow continuous state plus derived instantaneous quantities."""

    flow_id: int
    kind: CcaKind
    base_rtt_s: float
    start_s: float
    # integrated state
    btlbw_bps: float = 0.0
    rtprop_s: float = 0.0
    inflight_hi_bytes: float = 0.0           # v2/v3 only
    cwnd_bytes: float = 0.0                  # loss-based only
    cubic_epoch_s: float = 0.0
    cubic_wmax_bytes: float = 0.0
    delivered_bytes: float = 0.0
    sent_bytes: float = 0.0
    lost_bytes: float = 0.0
    # derived per evaluation
    rtt_s: float = 0.0                       # tau: base + queueing delay
    probe_rtt_mode: float = 0.0              # m in [0, 1]
    probe_rtt_cap_bytes: float = 0.0         # w_prt
    probe_bw_rate_bps: float = 0.0           # x_pbw
    sending_rate_bps: float = 0.0            # x
    phase_clock_s: float = 0.0               # seconds since flow start


@dataclass
class FluidSystemState:
    time_s: float
    queue_bytes: float
    loss_rate: float                         # instantaneous drop fraction
    smoothed_loss: float                     # filtered input to loss reactions
    flows: list = field(default_factory=list)


def _logistic(z: float) -> float:
    if z >= 40.0:
        return 1.0
    if z <= -40.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(-z))


def pacing_gain(phase_s: float, rtprop_s: float, params: FluidParams) -> float:
    """Smooth periodic pacing gain; each of the 8 phases lasts one rtprop.

    Plateau interiors return the phase gain directly; near a phase boundary
    the two adjacent plateaus are blended by a logistic ramp.  The neglected
    further transitions are O(exp(-steepness)).
    """
    gains = params.pacing_gain_cycle
    n = len(gains)
    r = max(rtprop_s, 1e-6)
    period = n * r
    u = math.fmod(phase_s, period)
    if u < 0:
        u += period
    kappa = params.sigmoid_steepness / r
    margin = 8.0 / kappa
    j = min(int(u / r), n - 1)
    off = u - j * r
    g = gains[j]
    if off < margin:                     # ramp from the previous plateau
        g = gains[j - 1] + (gains[j] - gains[j - 1]) * _logistic(kappa * off)
    if r - off < margin:                 # ramp into the next plateau
        nxt = gains[(j + 1) % n]
        g += (nxt - gains[j]) * _logistic(kappa * (off - r))
    return g


def probe_rtt_mode(clock_s: float, params: FluidParams) -> float:
    """Smoothed ProbeRTT indicator: a pulse of probertt_duration every interval.

    Pulses sit at the end of each interval, so the first one starts roughly
    ``interval - duration`` seconds after the flow's clock starts.
    """
    interval = params.probertt_interval_s
    dur = params.probertt_duration_s
    if dur <= 0 or clock_s < 0:
        return 0.0
    u = math.fmod(clock_s, interval)
    kappa = params.sigmoid_steepness / dur
    margin = 8.0 / kappa
    rise_at = interval - dur
    if margin + dur < u < rise_at - margin:
        return 0.0                       # far from both edges of the pulse
    m = _logistic(kappa * (u - rise_at)) - _logistic(kappa * (u - interval))
    if u < dur + margin and clock_s >= interval:
        m += 1.0 - _logistic(kappa * u)  # tail of the previous pulse's fall
    if m < 1e-6:
        # Snap the exponential tails to an exact zero: outside a pulse the
        # mode must not perturb the RTT-floor estimator at all.
        return 0.0
    return min(1.0, m)


def sending_rate(flow: FluidFlowState) -> float:
    """Rate of one BBR flow: convex combination of the two phase branches."""
    m = flow.probe_rtt_mode
    probe_rtt_rate = flow.probe_rtt_cap_bytes * 8.0 / flow.rtt_s
    return m * probe_rtt_rate + (1.0 - m) * flow.probe_bw_rate_bps


def probe_bw_rate(flow: FluidFlowState, params: FluidParams, t: float) -> float:
    """ProbeBW branch: periodic gain times the bandwidth estimate."""
    return pacing_gain(t, flow.rtprop_s, params) * flow.btlbw_bps


def queue_derivative(total_inflow_bps: float, queue_bytes: float,
                     capacity_bps: float, queue_eps_bytes: float = 750.0) -> float:
    """Droptail queue balance in bytes/s, smoothed at the empty-queue kink.

    For a loaded queue this is exactly (inflow - capacity) / 8; as the queue
    empties, unused service capacity fades out so an underloaded empty queue
    stays empty.
    """
    inflow = total_inflow_bps / 8.0
    service = capacity_bps / 8.0
    unused = max(0.0, service - inflow)
    q = max(0.0, queue_bytes)
    return inflow - service + unused * math.exp(-q / queue_eps_bytes)


# --- internal flat-vector machinery -----------------------------------------
# Layout: y[0] = queue_bytes, then 5 slots per flow:
#   BBR:        [btlbw_bps, rtprop_s, inflight_hi_bytes, cum_delivered_bits, cum_sent_bits]
#   Reno:       [cwnd_bytes, 0,       0,                 cum_delivered_bits, cum_sent_bits]
#   CUBIC:      [cwnd_bytes, epoch_s, wmax_bytes,        cum_delivered_bits, cum_sent_bits]
_SLOTS = 5


class _FlowMeta:
    __slots__ = ("kind", "base_rtt", "start", "mtu", "max_window")

    def __init__(self, kind, base_rtt, start, mtu, max_window):
        self.kind = kind
        self.base_rtt = base_rtt
        self.start = start
        self.mtu = mtu
        self.max_window = max_window


def _flow_rates(t, y, metas, params, capacity_bps):
    """Per-flow (sending rate, probe-rtt mode, rtt) at (t, y)."""
    out = []
    q = max(0.0, y[0])
    for i, meta in enumerate(metas):
        tau = meta.base_rtt + 8.0 * q / capacity_bps
        if t < meta.start:
            out.append((0.0, 0.0, tau))
            continue
        o = 1 + _SLOTS * i
        kind = meta.kind
        if kind.is_bbr:
            b = y[o]
            r = min(max(y[o + 1], 1e-6), tau)
            clock = t - meta.start
            g = pacing_gain(clock, r, params)
            x_pbw = g * b
            if kind is CcaKind.BBR_V1:
                cap_rate = BBR_CWND_GAIN * b * r / tau
                w_prt = PROBERTT_CAP_PACKETS * meta.mtu
            else:
                cap_rate = y[o + 2] * 8.0 / tau
                w_prt = 0.5 * (b / 8.0) * r
            x_pbw = min(x_pbw, cap_rate)
            m = probe_rtt_mode(clock, params)
            x = m * (w_prt * 8.0 / tau) + (1.0 - m) * x_pbw
        else:
            m = 0.0
            cwnd = min(max(y[o], meta.mtu), meta.max_window)
            x = cwnd * 8.0 / tau
        out.append((max(0.0, x), m, tau))
    return out


def _rhs(t, y, metas, params, capacity_bps, smoothed_loss, dy):
    evals = _flow_rates(t, y, metas, params, capacity_bps)
    total = math.fsum(x for x, _, _ in evals)
    qdot = queue_derivative(total, y[0], capacity_bps, params.queue_eps_bytes)
    dy[0] = qdot
    # Delivered rate never exceeds capacity: it is inflow minus queue growth.
    delivered_total = total - 8.0 * qdot

    gate = _logistic((smoothed_loss - params.loss_threshold) / params.loss_gate_width)
    for i, meta in enumerate(metas):
        o = 1 + _SLOTS * i
        if t < meta.start:
            dy[o] = dy[o + 1] = dy[o + 2] = dy[o + 3] = dy[o + 4] = 0.0
            continue
        x, m, tau = evals[i]
        share = x / total if total > 0 else 0.0
        d_i = delivered_total * share
        kind = meta.kind
        if kind.is_bbr:
            b = y[o]
            r = y[o + 1]
            awake = 1.0 - m
            dy[o] = awake * (
                params.btlbw_up_rate * max(0.0, d_i - b)
                - params.btlbw_decay_rate * max(0.0, b - d_i)
            )
            dy[o + 1] = (
                -params.rtprop_track_rate * max(0.0, r - tau)
                + m * params.rtprop_reset_rate * (tau - r)
            )
            if kind is CcaKind.BBR_V1:
                dy[o + 2] = 0.0
            else:
                h = y[o + 2]
                grow_pkts = (
                    params.inflight_hi_growth_pkts_v3
                    if kind is CcaKind.BBR_V3
                    else params.inflight_hi_growth_pkts
                )
                dy[o + 2] = (
                    (1.0 - gate) * grow_pkts * meta.mtu
                    - gate * (1.0 - params.beta_inflight_hi) * h / tau
                )
        else:
            cwnd = max(y[o], meta.mtu)
            pkt_loss_rate = smoothed_loss * x / (8.0 * meta.mtu)   # packets/s
            event_rate = pkt_loss_rate / (1.0 + pkt_loss_rate * tau)
            if kind is CcaKind.RENO:
                dy[o] = meta.mtu / tau - RENO_BETA * cwnd * event_rate
                dy[o + 1] = 0.0
                dy[o + 2] = 0.0
            else:
                e = y[o + 1]
                wmax = max(y[o + 2], meta.mtu)
                k_cubic = ((wmax / meta.mtu) * (1.0 - CUBIC_BETA) / CUBIC_C) ** (1.0 / 3.0)
                growth = 3.0 * CUBIC_C * meta.mtu * (e - k_cubic) ** 2
                dy[o] = growth - (1.0 - CUBIC_BETA) * cwnd * event_rate
                dy[o + 1] = 1.0 - e * event_rate
                dy[o + 2] = (cwnd - wmax) * event_rate
        dy[o + 3] = d_i
        dy[o + 4] = x
    return evals


def _rk4_step(t, y, dt, metas, params, capacity_bps, smoothed_loss):
    n = len(y)
    k1 = [0.0] * n
    k2 = [0.0] * n
    k3 = [0.0] * n
    k4 = [0.0] * n
    evals = _rhs(t, y, metas, params, capacity_bps, smoothed_loss, k1)
    rates = [x for x, _, _ in evals]
    y2 = [y[j] + 0.5 * dt * k1[j] for j in range(n)]
    _rhs(t + 0.5 * dt, y2, metas, params, capacity_bps, smoothed_loss, k2)
    y3 = [y[j] + 0.5 * dt * k2[j] for j in range(n)]
    _rhs(t + 0.5 * dt, y3, metas, params, capacity_bps, smoothed_loss, k3)
    y4 = [y[j] + dt * k3[j] for j in range(n)]
    _rhs(t + dt, y4, metas, params, capacity_bps, smoothed_loss, k4)
    out = [
        y[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        for j in range(n)
    ]
    return out, rates


class _Integrator:
    """Owns the flat state and applies RK4 steps with droptail bookkeeping."""

    def __init__(self, metas, params, capacity_bps, buffer_bytes, y0, t0=0.0):
        self.metas = metas
        self.params = params
        self.capacity_bps = capacity_bps
        self.buffer_bytes = buffer_bytes
        self.y = y0
        self.t = t0
        self.smoothed_loss = 0.0
        self.loss_rate = 0.0
        self.cum_lost_bytes = [0.0] * len(metas)

    def step(self, dt: float) -> None:
        for v in self.y:
            if not math.isfinite(v):
                raise FluidDivergenceError(f"non-finite state at t={self.t:.6f}")
        y_new, rates = _rk4_step(
            self.t, self.y, dt, self.metas, self.params,
            self.capacity_bps, self.smoothed_loss,
        )
        # Droptail clamp: overflow past the buffer limit is dropped, charged
        # to flows in proportion to their inflow at the start of the step.
        loss_inst = 0.0
        if y_new[0] > self.buffer_bytes:
            excess = y_new[0] - self.buffer_bytes
            y_new[0] = self.buffer_bytes
            total = math.fsum(rates)
            if total > 0.0:
                inflow_bytes = total / 8.0 * dt
                loss_inst = min(1.0, excess / inflow_bytes)
                for i, x in enumerate(rates):
                    self.cum_lost_bytes[i] += excess * (x / total)
        elif y_new[0] < 0.0:
            y_new[0] = 0.0
        for v in y_new:
            if not math.isfinite(v):
                raise FluidDivergenceError(
                    f"non-finite state at t={self.t + dt:.6f}"
                )
        self.loss_rate = loss_inst
        # Peak-hold filter: loss reactions see the drop fraction of the most
        # recent overflow episode for about one filter constant, the way a
        # per-round loss rate lingers for a round.
        decay = math.exp(-dt / self.params.loss_smoothing_tau_s)
        self.smoothed_loss = max(loss_inst, self.smoothed_loss * decay)
        self.y = y_new
        self.t += dt


def _initial_y(metas, capacity_bps):
    y = [0.0] * (1 + _SLOTS * len(metas))
    for i, meta in enumerate(metas):
        o = 1 + _SLOTS * i
        if meta.kind.is_bbr:
            y[o] = capacity_bps                       # optimistic post-startup
            y[o + 1] = meta.base_rtt
            y[o + 2] = BBR_CWND_GAIN * (capacity_bps / 8.0) * meta.base_rtt
        else:
            y[o] = 10.0 * meta.mtu                    # conventional IW10
            y[o + 1] = 0.0
            y[o + 2] = 10.0 * meta.mtu
    return y


def _metas_for(scenario: ScenarioConfig, trial: int):
    delays = materialize_delays(scenario, trial)
    mtu = scenario.link.mtu_bytes
    return [
        _FlowMeta(f.cca, scenario.link.base_rtt_s + delays[i], f.start_s, mtu,
                  f.max_window_bytes)
        for i, f in enumerate(scenario.flows)
    ]


def _view_flow(i, meta, fid, y, t, params, capacity_bps, lost):
    o = 1 + _SLOTS * i
    st = FluidFlowState(
        flow_id=fid, kind=meta.kind, base_rtt_s=meta.base_rtt, start_s=meta.start,
        delivered_bytes=y[o + 3] / 8.0, sent_bytes=y[o + 4] / 8.0, lost_bytes=lost,
    )
    tau = meta.base_rtt + 8.0 * max(0.0, y[0]) / capacity_bps
    st.rtt_s = tau
    st.phase_clock_s = max(0.0, t - meta.start)
    if meta.kind.is_bbr:
        st.btlbw_bps = y[o]
        st.rtprop_s = min(y[o + 1], tau)
        st.inflight_hi_bytes = y[o + 2] if meta.kind is not CcaKind.BBR_V1 else 0.0
        if t >= meta.start:
            clock = t - meta.start
            st.probe_rtt_mode = probe_rtt_mode(clock, params)
            if meta.kind is CcaKind.BBR_V1:
                st.probe_rtt_cap_bytes = PROBERTT_CAP_PACKETS * meta.mtu
                cap_rate = BBR_CWND_GAIN * st.btlbw_bps * st.rtprop_s / tau
            else:
                st.probe_rtt_cap_bytes = 0.5 * (st.btlbw_bps / 8.0) * st.rtprop_s
                cap_rate = st.inflight_hi_bytes * 8.0 / tau
            st.probe_bw_rate_bps = min(
                pacing_gain(clock, st.rtprop_s, params) * st.btlbw_bps, cap_rate
            )
            st.sending_rate_bps = sending_rate(st)
    else:
        st.cwnd_bytes = y[o]
        st.cubic_epoch_s = y[o + 1]
        st.cubic_wmax_bytes = y[o + 2]
        if t >= meta.start:
            st.sending_rate_bps = min(max(y[o], meta.mtu), meta.max_window) * 8.0 / tau
    return st


def system_state(scenario: ScenarioConfig, trial: int = 0,
                 params: Optional[FluidParams] = None) -> FluidSystemState:
    """Initial system state for ``scenario`` (public, for stepwise use)."""
    params = params or FluidParams()
    metas = _metas_for(scenario, trial)
    y = _initial_y(metas, scenario.link.capacity_bps)
    flows = [
        _view_flow(i, m, scenario.flows[i].id, y, 0.0, params,
                   scenario.link.capacity_bps, 0.0)
        for i, m in enumerate(metas)
    ]
    return FluidSystemState(time_s=0.0, queue_bytes=0.0, loss_rate=0.0,
                            smoothed_loss=0.0, flows=flows)


def step(system: FluidSystemState, scenario: ScenarioConfig,
         params: FluidParams, dt: float, trial: int = 0) -> FluidSystemState:
    """Advance a system state by one RK4 step (public single-step API)."""
    metas = _metas_for(scenario, trial)
    y = [system.queue_bytes]
    lost = []
    for fs in system.flows:
        if fs.kind.is_bbr:
            y += [fs.btlbw_bps, fs.rtprop_s, fs.inflight_hi_bytes]
        else:
            y += [fs.cwnd_bytes, fs.cubic_epoch_s, fs.cubic_wmax_bytes]
        y += [fs.delivered_bytes * 8.0, fs.sent_bytes * 8.0]
        lost.append(fs.lost_bytes)
    integ = _Integrator(metas, params, scenario.link.capacity_bps,
                        scenario.link.buffer_bytes, y, system.time_s)
    integ.smoothed_loss = system.smoothed_loss
    integ.cum_lost_bytes = lost
    integ.step(dt)
    flows = [
        _view_flow(i, m, scenario.flows[i].id, integ.y, integ.t, params,
                   scenario.link.capacity_bps, integ.cum_lost_bytes[i])
        for i, m in enumerate(metas)
    ]
    return FluidSystemState(
        time_s=integ.t, queue_bytes=integ.y[0], loss_rate=integ.loss_rate,
        smoothed_loss=integ.smoothed_loss, flows=flows,
    )


def simulate(scenario: ScenarioConfig, params: Optional[FluidParams] = None,
             trial: int = 0, duration_s: Optional[float] = None,
             sample_interval_s: float = 0.01) -> RunTrace:
    """Integrate the scenario and return the sampled time series.

    The output grid is decoupled from the integration step so long runs stay
    memory-bounded.  Raises for unsupported CCAs or invalid scenarios;
    propagates divergence.
    """
    params = params or FluidParams()
    problems = validate(scenario)
    if problems:
        raise ValueError("invalid scenario: " + "; ".join(problems))
    for f in scenario.flows:
        if f.cca is CcaKind.BBR_V3 and not params.bbrv3_variant:
            raise ValueError(
                "BbrV3 fluid flows need FluidParams(bbrv3_variant=True)"
            )

    metas = _metas_for(scenario, trial)
    capacity = scenario.link.capacity_bps
    duration = scenario.duration_s if duration_s is None else duration_s
    dt = params.step_for(min((m.base_rtt for m in metas), default=0.03))
    n_steps = max(1, int(round(duration / dt)))
    every = max(1, int(round(sample_interval_s / dt)))

    integ = _Integrator(metas, params, capacity, scenario.link.buffer_bytes,
                        _initial_y(metas, capacity))
    n = len(metas)
    times = [0.0]
    goodput = [[0.0] for _ in range(n)]
    sent = [[0.0] for _ in range(n)]
    dropped = [[0.0] for _ in range(n)]
    queue = [0.0]
    extras = {
        "probe_rtt_mode": [[0.0] for _ in range(n)],
        "btlbw_bps": [[integ.y[1 + _SLOTS * i] if metas[i].kind.is_bbr else 0.0]
                      for i in range(n)],
        "rtprop_s": [[integ.y[2 + _SLOTS * i] if metas[i].kind.is_bbr else 0.0]
                     for i in range(n)],
        "aux_bytes": [[integ.y[3 + _SLOTS * i]] for i in range(n)],
        "loss_rate": [[0.0] for _ in range(n)],
    }

    for k in range(1, n_steps + 1):
        integ.step(dt)
        if k % every == 0 or k == n_steps:
            times.append(integ.t)
            queue.append(integ.y[0])
            for i, meta in enumerate(metas):
                o = 1 + _SLOTS * i
                goodput[i].append(integ.y[o + 3] / 8.0)
                sent[i].append(integ.y[o + 4] / 8.0)
                dropped[i].append(integ.cum_lost_bytes[i])
                clock = integ.t - meta.start
                extras["probe_rtt_mode"][i].append(
                    probe_rtt_mode(clock, params) if clock >= 0 else 0.0
                )
                extras["btlbw_bps"][i].append(integ.y[o] if meta.kind.is_bbr else 0.0)
                extras["rtprop_s"][i].append(integ.y[o + 1] if meta.kind.is_bbr else 0.0)
                extras["aux_bytes"][i].append(integ.y[o + 2])
                extras["loss_rate"][i].append(integ.loss_rate)

    return RunTrace(
        source="fluid",
        capacity_bps=capacity,
        buffer_limit_bytes=float(scenario.link.buffer_bytes),
        mtu_bytes=scenario.link.mtu_bytes,
        flow_ids=[f.id for f in scenario.flows],
        flow_kinds=[f.cca for f in scenario.flows],
        sample_times=times,
        cum_goodput_bytes=goodput,
        cum_sent_bytes=sent,
        cum_dropped_bytes=dropped,
        queue_bytes=queue,
        event_count=n_steps,
        extras=extras,
    )
