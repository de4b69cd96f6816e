"""Packet-level dumbbell simulator: senders, droptail bottleneck, receiver.

This module is the hot kernel.  It is plain Python that also compiles with
Cython (pure-Python mode); the build produces an extension module with
identical semantics, selected automatically at import time by the package.
Keep this file free of module-level state and exotic dynamism.

Model summary:

- One FIFO droptail queue serves MTU-sized data packets at the configured
  rate.  A packet admitted at time t departs at max(t, previous departure)
  plus its serialization time; a packet that does not fit is dropped.
- All fixed propagation (sender->router, router->receiver, ACK return) is
  lumped after the queue: the ACK for a packet departing at t arrives at the
  sender at t + path RTT.  Receiver bookkeeping runs at ACK arrival.
- Every data packet is ACKed individually.  Within a flow, ACKs arrive in
  send order, so a skipped wire sequence is a queue drop; a loss is declared
  after three later ACKs (dup-ACK equivalent) or on RTO expiry.
- BBR senders are paced; Reno/CUBIC are ACK-clocked.
- Events are dispatched in (time, flow id, creation sequence) order, which is
  a total order, so runs are bit-reproducible.

The trace samples cumulative per-flow counters on a fixed grid, and the
conservation identity  sent = wire-delivered + dropped + in-flight  holds
exactly at every sample because each counter is updated at its own event.
"""

from __future__ import annotations

import heapq
from collections import deque

import cython

COMPILED = bool(cython.compiled)

# CCA codes
CCA_RENO = 0
CCA_CUBIC = 1
CCA_BBR1 = 2
CCA_BBR2 = 3
CCA_BBR3 = 4

# BBR states
ST_STARTUP = 0
ST_DRAIN = 1
ST_PROBE_BW = 2
ST_PROBE_RTT = 3

# BBRv2/v3 ProbeBW sub-states
PBW_DOWN = 0
PBW_CRUISE = 1
PBW_REFILL = 2
PBW_UP = 3

# event kinds
EV_START = 0
EV_PACE = 1
EV_DEPART = 2
EV_ACK = 3
EV_RTO = 4
EV_SAMPLE = 5
EV_ARRIVE = 6
EV_ACK_FLUSH = 7

_HIGH_GAIN = 2.8853900817779268   # 2 / ln(2)
_PROBE_GAINS = (1.25, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)

DEFAULT_PARAMS = {
    "iw_pkts": 10.0,
    "dup_thresh": 3.0,
    "rto_min_s": 0.2,
    "reno_beta": 0.5,
    "cubic_beta": 0.7,
    "cubic_c": 0.4,
    "bbr_bw_window_rounds": 10.0,
    "bbr_rtprop_window_s": 10.0,
    "bbr_probe_rtt_dwell_s": 0.2,
    "bbr_probe_rtt_cwnd_pkts": 4.0,
    "bbr_startup_pacing_gain_v1": _HIGH_GAIN,
    "bbr_startup_cwnd_gain_v1": _HIGH_GAIN,
    "bbr_startup_pacing_gain_v2": 2.77,
    "bbr_startup_cwnd_gain_v2": 2.0,
    "bbr_cwnd_gain": 2.0,
    "bbr_full_bw_thresh": 1.25,
    "bbr_full_bw_rounds": 3.0,
    "bbr2_loss_thresh": 0.02,
    "bbr2_beta": 0.7,
    "bbr2_headroom": 0.85,
    "bbr2_cruise_wait_s": 3.0,
    "bbr2_down_pacing_gain": 0.75,
    "bbr3_down_pacing_gain": 0.9,
    "bbr_probe_up_pacing_gain": 1.25,
    "bbr_pacing_margin": 1.0,     # pacing = margin * gain * btlbw
    "ack_every_pkts": 1.0,        # >1 batches ACKs (sensitivity knob, off)
    "hystart_on": 0.0,            # delay-based slow-start exit for CUBIC
    # Per-packet sender processing jitter, uniform in [0, amp): emulates the
    # OS/NIC timing noise every real host has.  Without it, a deterministic
    # simulator synchronizes loss recoveries across flows, and the resulting
    # total queue drains poison BBR's RTT floor in ways testbeds never see.
    # Drawn from a per-flow seeded generator; runs stay bit-reproducible.
    "sender_jitter_s": 0.0,
}


class SimulationError(RuntimeError):
    pass


@cython.cclass
class Flow:
    """Sender + receiver endpoint state for one flow."""

    fid: cython.int
    cca: cython.int
    mtu: cython.longlong
    rtt_path: cython.double
    start_t: cython.double
    max_window: cython.longlong

    # wire bookkeeping
    next_wire: cython.longlong
    next_payload: cython.longlong
    outstanding: object            # deque of (wire, payload, send_t, delivered_snap)
    holes: object                  # deque of (wire, payload, ack_count_at_create)
    rtx: object                    # deque of payload seqs awaiting retransmit
    ack_count: cython.longlong

    # cumulative counters (bytes)
    sent_bytes: cython.longlong
    wire_delivered_bytes: cython.longlong
    dropped_bytes: cython.longlong
    goodput_bytes: cython.longlong
    retx_bytes: cython.longlong
    net_inflight: cython.longlong
    cc_inflight: cython.longlong
    drop_count: cython.longlong

    # receiver
    rcv_nxt: cython.longlong
    ooo: object                    # set of payload seqs received out of order

    # RTT estimation / RTO
    srtt: cython.double
    rttvar: cython.double
    rto: cython.double
    rto_deadline: cython.double
    rto_armed_t: cython.double
    rto_backoff: cython.double

    # congestion control, common
    cwnd: cython.double
    ssthresh: cython.double
    ca_acc: cython.double
    in_recovery: cython.bint
    recover_wire: cython.longlong
    prr_floor: cython.double       # window target of the current reduction
    prr_decay: cython.double       # per-acked-byte decay toward the floor
    paced: cython.bint
    pacing_rate: cython.double
    next_pace_t: cython.double
    pace_pending_t: cython.double

    # CUBIC block
    w_max: cython.double           # curve origin (plateau) in bytes
    k_cubic: cython.double         # seconds from epoch start to the plateau
    epoch_start: cython.double
    w_est: cython.double           # Reno-friendly floor (RFC 8312 W_est)
    # HyStart: leave slow start when the round's min RTT rises clearly
    # above the connection floor (delay-based exit, as in Linux CUBIC)
    hy_base: cython.double
    hy_round_min: cython.double

    # BBR block
    state: cython.int
    delivered_cc: cython.longlong
    round_count: cython.longlong
    next_round_delivered: cython.longlong
    round_started: cython.bint     # this ACK crossed a round boundary
    bwf: object                    # monotonic deque of [round, bw_bps]
    btlbw: cython.double
    rtprop: cython.double
    rtprop_stamp: cython.double
    probe_rtt_done_t: cython.double
    prior_cwnd: cython.double
    pacing_gain: cython.double
    cwnd_gain: cython.double
    cycle_idx: cython.int
    cycle_start_t: cython.double
    loss_in_round: cython.bint
    filled_pipe: cython.bint
    full_bw: cython.double
    full_bw_cnt: cython.int
    startup_exit_round: cython.longlong

    # BBR loss-recovery plumbing (rate model stays loss-agnostic: filters
    # and pacing are untouched; cwnd conserves packets for one round)
    bbr_conserv: cython.bint
    conserv_round: cython.longlong
    prior_cwnd_rec: cython.double

    # sender timing noise
    jitter_state: cython.ulonglong  # xorshift64* state; 0 disables
    last_arrival_t: cython.double

    # receiver-side ACK batching (sensitivity knob, off by default)
    ack_hold: object               # list of (wire, payload) awaiting flush
    ack_flush_t: cython.double

    # BBRv2/v3 block
    inflight_hi: cython.double
    inflight_lo: cython.double     # short-term bound, v2 only; -1 = unset
    pbw_state: cython.int
    pbw_since_t: cython.double
    refill_round: cython.longlong
    up_rounds: cython.int
    round_lost: cython.longlong
    round_delivered_b: cython.longlong
    up_full_bw: cython.double
    up_full_bw_cnt: cython.int

    def __init__(self, fid: int, cca: int, mtu: int, rtt_path: float,
                 start_t: float, max_window: int, iw_pkts: float):
        self.fid = fid
        self.cca = cca
        self.mtu = mtu
        self.rtt_path = rtt_path
        self.start_t = start_t
        self.max_window = max_window

        self.next_wire = 0
        self.next_payload = 0
        self.outstanding = deque()
        self.holes = deque()
        self.rtx = deque()
        self.ack_count = 0

        self.sent_bytes = 0
        self.wire_delivered_bytes = 0
        self.dropped_bytes = 0
        self.goodput_bytes = 0
        self.retx_bytes = 0
        self.net_inflight = 0
        self.cc_inflight = 0
        self.drop_count = 0

        self.rcv_nxt = 0
        self.ooo = set()

        self.srtt = 0.0
        self.rttvar = 0.0
        self.rto = 1.0
        self.rto_deadline = -1.0
        self.rto_armed_t = -1.0
        self.rto_backoff = 1.0

        self.cwnd = iw_pkts * mtu
        self.ssthresh = 1e18
        self.ca_acc = 0.0
        self.in_recovery = False
        self.recover_wire = 0
        self.prr_floor = 0.0
        self.prr_decay = 0.0
        self.paced = cca >= CCA_BBR1
        init_bw = iw_pkts * mtu * 8.0 / rtt_path
        self.pacing_rate = init_bw * _HIGH_GAIN
        self.next_pace_t = start_t
        self.pace_pending_t = -1.0

        self.w_max = 0.0
        self.k_cubic = 0.0
        self.epoch_start = -1.0
        self.w_est = 0.0
        self.hy_base = 1e18
        self.hy_round_min = 1e18

        self.state = ST_STARTUP
        self.delivered_cc = 0
        self.round_count = 0
        self.next_round_delivered = 0
        self.round_started = False
        self.bwf = deque()
        self.bwf.append([0, init_bw])
        self.btlbw = init_bw
        self.rtprop = rtt_path
        self.rtprop_stamp = start_t
        self.probe_rtt_done_t = -1.0
        self.prior_cwnd = 0.0
        self.pacing_gain = 1.0
        self.cwnd_gain = 1.0
        self.cycle_idx = 0
        self.cycle_start_t = start_t
        self.loss_in_round = False
        self.filled_pipe = False
        self.full_bw = 0.0
        self.full_bw_cnt = 0
        self.startup_exit_round = -1

        self.bbr_conserv = False
        self.conserv_round = 0
        self.prior_cwnd_rec = 0.0

        self.jitter_state = 0
        self.last_arrival_t = 0.0

        self.ack_hold = []
        self.ack_flush_t = -1.0

        self.inflight_hi = float(max_window)
        self.inflight_lo = -1.0
        self.pbw_state = PBW_CRUISE
        self.pbw_since_t = start_t
        self.refill_round = 0
        self.up_rounds = 0
        self.round_lost = 0
        self.round_delivered_b = 0
        self.up_full_bw = 0.0
        self.up_full_bw_cnt = 0


@cython.cclass
class Engine:
    capacity_bps: cython.double
    mtu: cython.longlong
    buffer_limit: cython.longlong
    duration: cython.double
    sample_interval: cython.double
    flows: list
    heap: list
    eseq: cython.longlong
    event_count: cython.longlong

    # bottleneck queue
    occupancy: cython.longlong
    last_departure: cython.double
    fifo: object                   # deque of (fid, wire, payload)

    # parameters (resolved scalars)
    iw_pkts: cython.double
    dup_thresh: cython.int
    rto_min: cython.double
    reno_beta: cython.double
    cubic_beta: cython.double
    cubic_c: cython.double
    bw_window_rounds: cython.int
    rtprop_window: cython.double
    probe_rtt_dwell: cython.double
    probe_rtt_cwnd_pkts: cython.double
    startup_pacing_gain_v1: cython.double
    startup_cwnd_gain_v1: cython.double
    startup_pacing_gain_v2: cython.double
    startup_cwnd_gain_v2: cython.double
    bbr_cwnd_gain: cython.double
    full_bw_thresh: cython.double
    full_bw_rounds: cython.int
    loss_thresh: cython.double
    bbr2_beta: cython.double
    headroom: cython.double
    cruise_wait: cython.double
    down_gain_v2: cython.double
    down_gain_v3: cython.double
    up_gain: cython.double
    pacing_margin: cython.double
    hystart_on: cython.bint
    jitter_amp: cython.double
    ack_every: cython.int
    debug_log: object              # list of (t, kind, fid, occupancy) or None

    # trace accumulators
    times: list
    queue_series: list
    per_flow_series: dict

    def __init__(self, capacity_bps: float, mtu: int, buffer_limit_bytes: int,
                 duration_s: float, sample_interval_s: float,
                 flow_defs: list, params: dict):
        p = dict(DEFAULT_PARAMS)
        p.update(params)
        self.capacity_bps = capacity_bps
        self.mtu = mtu
        self.buffer_limit = buffer_limit_bytes
        self.duration = duration_s
        self.sample_interval = sample_interval_s
        self.heap = []
        self.eseq = 0
        self.event_count = 0
        self.occupancy = 0
        self.last_departure = 0.0
        self.fifo = deque()

        self.iw_pkts = p["iw_pkts"]
        self.dup_thresh = int(p["dup_thresh"])
        self.rto_min = p["rto_min_s"]
        self.reno_beta = p["reno_beta"]
        self.cubic_beta = p["cubic_beta"]
        self.cubic_c = p["cubic_c"]
        self.bw_window_rounds = int(p["bbr_bw_window_rounds"])
        self.rtprop_window = p["bbr_rtprop_window_s"]
        self.probe_rtt_dwell = p["bbr_probe_rtt_dwell_s"]
        self.probe_rtt_cwnd_pkts = p["bbr_probe_rtt_cwnd_pkts"]
        self.startup_pacing_gain_v1 = p["bbr_startup_pacing_gain_v1"]
        self.startup_cwnd_gain_v1 = p["bbr_startup_cwnd_gain_v1"]
        self.startup_pacing_gain_v2 = p["bbr_startup_pacing_gain_v2"]
        self.startup_cwnd_gain_v2 = p["bbr_startup_cwnd_gain_v2"]
        self.bbr_cwnd_gain = p["bbr_cwnd_gain"]
        self.full_bw_thresh = p["bbr_full_bw_thresh"]
        self.full_bw_rounds = int(p["bbr_full_bw_rounds"])
        self.loss_thresh = p["bbr2_loss_thresh"]
        self.bbr2_beta = p["bbr2_beta"]
        self.headroom = p["bbr2_headroom"]
        self.cruise_wait = p["bbr2_cruise_wait_s"]
        self.down_gain_v2 = p["bbr2_down_pacing_gain"]
        self.down_gain_v3 = p["bbr3_down_pacing_gain"]
        self.up_gain = p["bbr_probe_up_pacing_gain"]
        self.pacing_margin = p["bbr_pacing_margin"]
        self.hystart_on = p["hystart_on"] != 0.0
        self.jitter_amp = p["sender_jitter_s"]
        self.ack_every = max(1, int(p["ack_every_pkts"]))
        self.debug_log = [] if p.get("debug_log") else None

        self.flows = []
        for fid, cca, rtt_path, start_s, max_window, jitter_seed in flow_defs:
            f = Flow(fid, cca, mtu, rtt_path, start_s, max_window, self.iw_pkts)
            if self.jitter_amp > 0:
                seed = int(jitter_seed) & 0xFFFFFFFFFFFFFFFF
                f.jitter_state = seed if seed != 0 else 0x9E3779B97F4A7C15
            if cca >= CCA_BBR1:
                if cca == CCA_BBR1:
                    f.pacing_gain = self.startup_pacing_gain_v1
                    f.cwnd_gain = self.startup_cwnd_gain_v1
                else:
                    f.pacing_gain = self.startup_pacing_gain_v2
                    f.cwnd_gain = self.startup_cwnd_gain_v2
                f.pacing_rate = self.pacing_margin * f.pacing_gain * f.btlbw
            self.flows.append(f)

        self.times = []
        self.queue_series = []
        names = ("goodput", "sent", "wire_delivered", "dropped", "net_inflight",
                 "cc_inflight", "cwnd", "pacing_rate", "btlbw", "rtprop",
                 "state", "cap_bytes", "retx")
        self.per_flow_series = {n: [[] for _ in self.flows] for n in names}

    # -- event plumbing ------------------------------------------------------

    def _push(self, t: float, fid: int, kind: int, a: float, b: cython.longlong):
        heapq.heappush(self.heap, (t, fid, self.eseq, kind, a, b))
        self.eseq += 1

    # -- bottleneck ----------------------------------------------------------

    def _enqueue(self, f: Flow, wire: cython.longlong, payload: cython.longlong,
                 now: float):
        size: cython.longlong = self.mtu
        if self.occupancy + size > self.buffer_limit:
            f.dropped_bytes += size
            f.drop_count += 1
            f.net_inflight -= size
            return
        self.occupancy += size
        dep = self.last_departure
        if now > dep:
            dep = now
        dep += size * 8.0 / self.capacity_bps
        self.last_departure = dep
        self.fifo.append((f.fid, wire, payload))
        self._push(dep, f.fid, EV_DEPART, 0.0, 0)

    def _flush_acks(self, f: Flow, now: float):
        for wire, payload in f.ack_hold:
            self._push(now + f.rtt_path, f.fid, EV_ACK, float(wire), payload)
        f.ack_hold = []
        f.ack_flush_t = -1.0

    # -- sending -------------------------------------------------------------

    def _effective_window(self, f: Flow) -> float:
        w = f.cwnd
        if f.cca >= CCA_BBR2:
            hi = f.inflight_hi
            if f.state == ST_PROBE_BW and f.pbw_state == PBW_CRUISE:
                hi *= self.headroom
            if hi < w:
                w = hi
            if f.cca == CCA_BBR2 and f.inflight_lo >= 0.0 and not (
                f.state == ST_PROBE_BW
                and (f.pbw_state == PBW_REFILL or f.pbw_state == PBW_UP)
            ):
                if f.inflight_lo < w:
                    w = f.inflight_lo
        if f.max_window < w:
            w = f.max_window
        return w

    def _send_one(self, f: Flow, now: float):
        size: cython.longlong = self.mtu
        if f.rtx:
            payload = f.rtx.popleft()
            f.retx_bytes += size
        else:
            payload = f.next_payload
            f.next_payload += 1
        wire = f.next_wire
        f.next_wire += 1
        f.outstanding.append((wire, payload, now, f.delivered_cc))
        f.sent_bytes += size
        f.net_inflight += size
        f.cc_inflight += size
        if f.rto_deadline < 0.0:
            self._arm_rto(f, now)
        if f.jitter_state != 0:
            # xorshift64*, masked so interpreted and compiled runs agree
            x: cython.ulonglong = f.jitter_state
            x = (x ^ (x >> 12)) & 0xFFFFFFFFFFFFFFFF
            x = (x ^ (x << 25)) & 0xFFFFFFFFFFFFFFFF
            x = (x ^ (x >> 27)) & 0xFFFFFFFFFFFFFFFF
            f.jitter_state = x
            u = ((x * 2685821657736338717) & 0xFFFFFFFFFFFFFFFF) >> 11
            at = now + self.jitter_amp * (u / 9007199254740992.0)
            if at < f.last_arrival_t:
                at = f.last_arrival_t
            f.last_arrival_t = at
            self._push(at, f.fid, EV_ARRIVE, float(wire), payload)
        else:
            self._enqueue(f, wire, payload, now)

    def _try_send(self, f: Flow, now: float):
        size: cython.longlong = self.mtu
        win = self._effective_window(f)
        if not f.paced:
            while f.cc_inflight + size <= win:
                self._send_one(f, now)
            return
        while f.cc_inflight + size <= win:
            nxt = f.next_pace_t
            if now < nxt - 1e-12:
                if f.pace_pending_t != nxt:
                    f.pace_pending_t = nxt
                    self._push(nxt, f.fid, EV_PACE, nxt, 0)
                return
            self._send_one(f, now)
            base = nxt if nxt > now else now
            if f.pacing_rate > 0:
                f.next_pace_t = base + size * 8.0 / f.pacing_rate
            else:
                f.next_pace_t = base + 1.0

    # -- RTO -----------------------------------------------------------------

    def _arm_rto(self, f: Flow, now: float):
        f.rto_deadline = now + f.rto * f.rto_backoff
        if f.rto_armed_t < 0.0 or f.rto_armed_t > f.rto_deadline:
            f.rto_armed_t = f.rto_deadline
            self._push(f.rto_deadline, f.fid, EV_RTO, f.rto_deadline, 0)

    def _on_rto(self, f: Flow, now: float):
        if not f.outstanding and not f.rtx:
            f.rto_deadline = -1.0
            return
        f.rto_backoff = min(f.rto_backoff * 2.0, 64.0)
        # collapse: everything outstanding is presumed lost
        size: cython.longlong = self.mtu
        while f.outstanding:
            wire, payload, _st, _ds = f.outstanding.popleft()
            f.rtx.append(payload)
            f.cc_inflight -= size
        f.holes.clear()
        if f.cc_inflight < 0:
            f.cc_inflight = 0
        if f.cca <= CCA_CUBIC:
            if f.cca == CCA_CUBIC:
                f.w_max = f.cwnd
                f.epoch_start = -1.0
                f.w_est = size
            f.ssthresh = max(f.cwnd / 2.0, 2.0 * size)
            f.cwnd = size
            f.in_recovery = False
        else:
            self._bbr_note_loss(f, now)
        f.rto_deadline = -1.0
        f.rto_armed_t = -1.0
        self._try_send(f, now)
        if f.outstanding or f.rtx:
            self._arm_rto(f, now)

    # -- loss handling -------------------------------------------------------

    def _declare_lost(self, f: Flow, wire: cython.longlong,
                      payload: cython.longlong, now: float):
        size: cython.longlong = self.mtu
        f.cc_inflight -= size
        if f.cc_inflight < 0:
            f.cc_inflight = 0
        f.rtx.append(payload)
        if f.cca <= CCA_CUBIC:
            if not f.in_recovery:
                # Reduce toward beta * cwnd gradually (PRR-style): the window
                # shrinks per acked byte instead of stalling the sender until
                # in-flight drains below the new target.
                f.in_recovery = True
                f.recover_wire = f.next_wire
                if f.cca == CCA_RENO:
                    beta = self.reno_beta
                else:
                    beta = self.cubic_beta
                    f.w_max = f.cwnd
                    f.epoch_start = now
                f.prr_floor = max(f.cwnd * beta, 2.0 * size)
                f.prr_decay = 1.0 - beta
                f.ssthresh = f.prr_floor
                if f.cca == CCA_CUBIC:
                    f.w_est = f.prr_floor
                    gap_pkts = (f.w_max - f.prr_floor) / self.mtu
                    f.k_cubic = (gap_pkts / self.cubic_c) ** (1.0 / 3.0) if gap_pkts > 0 else 0.0
        else:
            self._bbr_note_loss(f, now)

    def _bbr_note_loss(self, f: Flow, now: float):
        f.loss_in_round = True
        if f.cca >= CCA_BBR2:
            f.round_lost += self.mtu
        if not f.bbr_conserv:
            f.bbr_conserv = True
            f.conserv_round = f.round_count
            f.prior_cwnd_rec = f.cwnd
        w = f.cwnd - self.mtu
        floor = 1.0 * self.mtu
        f.cwnd = w if w > floor else floor

    # -- BBR machinery -------------------------------------------------------

    def _bdp_bytes(self, f: Flow) -> float:
        return f.btlbw * f.rtprop / 8.0

    def _probe_rtt_cap(self, f: Flow) -> float:
        if f.cca == CCA_BBR1:
            return self.probe_rtt_cwnd_pkts * self.mtu
        return max(0.5 * self._bdp_bytes(f), self.probe_rtt_cwnd_pkts * self.mtu)

    def _bbr_update_filters(self, f: Flow, now: float, rtt_sample: float,
                            bw_sample: float):
        bwf = f.bwf
        while bwf and bwf[-1][1] <= bw_sample:
            bwf.pop()
        bwf.append([f.round_count, bw_sample])
        low: cython.longlong = f.round_count - self.bw_window_rounds
        while bwf and bwf[0][0] < low:
            bwf.popleft()
        f.btlbw = bwf[0][1]
        # RTT floor kept in whole microseconds, like a kernel clock: a
        # recurring queue trough yields samples equal to the stored floor,
        # which refreshes the staleness stamp and defers ProbeRTT.
        sample_q = int(rtt_sample * 1e6) * 1e-6
        if sample_q <= f.rtprop or now - f.rtprop_stamp > self.rtprop_window:
            f.rtprop = sample_q
            f.rtprop_stamp = now

    def _bbr_round_hooks(self, f: Flow, now: float):
        if f.state == ST_STARTUP:
            if f.btlbw >= f.full_bw * self.full_bw_thresh:
                f.full_bw = f.btlbw
                f.full_bw_cnt = 0
            else:
                f.full_bw_cnt += 1
                if f.full_bw_cnt >= self.full_bw_rounds:
                    f.filled_pipe = True
                    f.startup_exit_round = f.round_count
                    f.state = ST_DRAIN
                    f.pacing_gain = 1.0 / self.startup_pacing_gain_v1
                    f.cwnd_gain = self.bbr_cwnd_gain
        if f.cca >= CCA_BBR2:
            lost = f.round_lost
            delivered = f.round_delivered_b
            if lost > 0 and lost + delivered > 0:
                rate = lost / float(lost + delivered)
                if rate > self.loss_thresh:
                    floor = 4.0 * self.mtu
                    f.inflight_hi = max(f.inflight_hi * self.bbr2_beta, floor)
                    if f.state == ST_PROBE_BW and f.pbw_state == PBW_UP:
                        self._pbw_enter(f, PBW_DOWN, now)
                if f.cca == CCA_BBR2 and not (
                    f.state == ST_PROBE_BW
                    and (f.pbw_state == PBW_REFILL or f.pbw_state == PBW_UP)
                ):
                    # short-term lower bound: any lossy round tightens it by
                    # 1/8; the next refill lifts it.  v3 dropped this bound
                    # and keeps probing instead.
                    if f.inflight_lo < 0.0:
                        f.inflight_lo = f.cc_inflight + lost
                    f.inflight_lo = max(f.inflight_lo * 0.875, 4.0 * self.mtu)
            f.round_lost = 0
            f.round_delivered_b = 0
            if f.state == ST_PROBE_BW and f.pbw_state == PBW_UP:
                f.up_rounds += 1
                grow = self.mtu * (1 << min(f.up_rounds, 2))
                cap = f.cc_inflight + 2.0 * self._bdp_bytes(f)
                if f.inflight_hi < cap:
                    f.inflight_hi = min(f.inflight_hi + grow, cap)
                if f.cca == CCA_BBR3:
                    # keep probing until loss bites or the bandwidth plateaus
                    if f.btlbw >= f.up_full_bw * self.full_bw_thresh:
                        f.up_full_bw = f.btlbw
                        f.up_full_bw_cnt = 0
                    else:
                        f.up_full_bw_cnt += 1
                        if f.up_full_bw_cnt >= self.full_bw_rounds:
                            self._pbw_enter(f, PBW_DOWN, now)
                elif f.up_rounds >= 4:
                    # v2 probes briefly: without this bound the cap growth
                    # doubles per round whenever the in-flight exit target
                    # sits above what the cap itself permits
                    self._pbw_enter(f, PBW_DOWN, now)

    def _pbw_enter(self, f: Flow, sub: int, now: float):
        f.pbw_state = sub
        f.pbw_since_t = now
        if sub == PBW_DOWN:
            f.pacing_gain = self.down_gain_v3 if f.cca == CCA_BBR3 else self.down_gain_v2
        elif sub == PBW_UP:
            f.pacing_gain = self.up_gain
            f.up_rounds = 0
            f.up_full_bw = 0.0
            f.up_full_bw_cnt = 0
        else:
            f.pacing_gain = 1.0
        if sub == PBW_REFILL:
            f.refill_round = f.round_count
            f.inflight_lo = -1.0       # probing lifts the short-term bound

    def _enter_probe_bw(self, f: Flow, now: float):
        f.state = ST_PROBE_BW
        f.cwnd_gain = self.bbr_cwnd_gain
        if f.cca == CCA_BBR1:
            idx = f.fid % 7
            if idx != 0:
                idx += 1
            f.cycle_idx = idx
            f.cycle_start_t = now
            f.pacing_gain = _PROBE_GAINS[idx]
        else:
            self._pbw_enter(f, PBW_DOWN, now)

    def _bbr_advance(self, f: Flow, now: float, rtprop_expired: cython.bint):
        bdp = self._bdp_bytes(f)
        if f.state == ST_DRAIN:
            if f.cc_inflight <= bdp:
                self._enter_probe_bw(f, now)
        elif f.state == ST_PROBE_BW:
            if f.cca == CCA_BBR1:
                gain = _PROBE_GAINS[f.cycle_idx]
                elapsed = now - f.cycle_start_t >= f.rtprop
                advance = False
                if gain > 1.0:
                    advance = elapsed and (
                        f.cc_inflight >= gain * bdp or f.loss_in_round
                    )
                elif gain < 1.0:
                    advance = elapsed or f.cc_inflight <= bdp
                else:
                    advance = elapsed
                if advance:
                    f.cycle_idx = (f.cycle_idx + 1) % 8
                    f.cycle_start_t = now
                    f.pacing_gain = _PROBE_GAINS[f.cycle_idx]
                    f.loss_in_round = False
            else:
                if f.pbw_state == PBW_DOWN:
                    target = max(bdp, self.headroom * f.inflight_hi)
                    if f.cc_inflight <= target:
                        self._pbw_enter(f, PBW_CRUISE, now)
                elif f.pbw_state == PBW_CRUISE:
                    if now - f.pbw_since_t >= self.cruise_wait:
                        self._pbw_enter(f, PBW_REFILL, now)
                elif f.pbw_state == PBW_REFILL:
                    if f.round_count > f.refill_round:
                        self._pbw_enter(f, PBW_UP, now)
                else:  # PBW_UP; loss/plateau exits live in the round hooks
                    if f.cca == CCA_BBR2 and f.cc_inflight >= 1.25 * bdp:
                        self._pbw_enter(f, PBW_DOWN, now)
        # ProbeRTT entry: the RTT floor went stale
        if f.state != ST_PROBE_RTT and rtprop_expired:
            f.prior_cwnd = f.cwnd
            f.state = ST_PROBE_RTT
            f.pacing_gain = 1.0
            f.cwnd_gain = 1.0
            f.probe_rtt_done_t = -1.0
        if f.state == ST_PROBE_RTT:
            cap = self._probe_rtt_cap(f)
            if f.probe_rtt_done_t < 0.0 and f.cc_inflight <= cap:
                f.probe_rtt_done_t = now + self.probe_rtt_dwell
            elif f.probe_rtt_done_t > 0.0 and now >= f.probe_rtt_done_t:
                f.rtprop_stamp = now
                f.probe_rtt_done_t = -1.0
                if f.cwnd < f.prior_cwnd:
                    f.cwnd = f.prior_cwnd
                if f.filled_pipe:
                    self._enter_probe_bw(f, now)
                else:
                    f.state = ST_STARTUP
                    if f.cca == CCA_BBR1:
                        f.pacing_gain = self.startup_pacing_gain_v1
                        f.cwnd_gain = self.startup_cwnd_gain_v1
                    else:
                        f.pacing_gain = self.startup_pacing_gain_v2
                        f.cwnd_gain = self.startup_cwnd_gain_v2

    def _bbr_set_controls(self, f: Flow, acked: cython.longlong):
        f.pacing_rate = self.pacing_margin * f.pacing_gain * f.btlbw
        if f.bbr_conserv:
            if f.round_count > f.conserv_round:
                f.bbr_conserv = False
                if f.cwnd < f.prior_cwnd_rec:
                    f.cwnd = f.prior_cwnd_rec
            else:
                # packet conservation: each ack releases at most what left
                grown = f.cc_inflight + acked
                if f.cwnd < grown:
                    f.cwnd = grown
                if f.state != ST_PROBE_RTT:
                    return
        bdp = self._bdp_bytes(f)
        target = f.cwnd_gain * bdp
        floor = 4.0 * self.mtu
        if target < floor:
            target = floor
        if f.state == ST_PROBE_RTT:
            cap = self._probe_rtt_cap(f)
            if target > cap:
                target = cap
        if f.cwnd < target:
            # ack-clocked ramp: grow by at most the acked bytes per ACK
            grown = f.cwnd + acked
            f.cwnd = grown if grown < target else target
        else:
            f.cwnd = target

    # -- per-ACK CCA dispatch --------------------------------------------------

    def _on_ack_cca(self, f: Flow, now: float, rtt_sample: float,
                    bw_sample: float, acked: cython.longlong):
        size: cython.longlong = self.mtu
        if f.in_recovery and f.cca <= CCA_CUBIC:
            w = f.cwnd - f.prr_decay * acked
            f.cwnd = w if w > f.prr_floor else f.prr_floor
            return
        if f.cca == CCA_RENO:
            if f.cwnd < f.ssthresh:
                f.cwnd += acked
            else:
                f.ca_acc += acked
                while f.ca_acc >= f.cwnd:
                    f.ca_acc -= f.cwnd
                    f.cwnd += size
        elif f.cca == CCA_CUBIC:
            if rtt_sample < f.hy_round_min:
                f.hy_round_min = rtt_sample
            if f.epoch_start < 0.0 and f.cwnd < f.ssthresh:
                f.cwnd += acked                      # slow start
            else:
                if f.epoch_start < 0.0:
                    # new epoch without a fresh loss (HyStart or post-RTO):
                    # grow from the current window, plateau at w_max
                    f.epoch_start = now
                    f.w_est = f.cwnd
                    if f.w_max <= f.cwnd:
                        f.w_max = f.cwnd
                        f.k_cubic = 0.0
                    else:
                        gap_pkts = (f.w_max - f.cwnd) / self.mtu
                        f.k_cubic = (gap_pkts / self.cubic_c) ** (1.0 / 3.0)
                # Reno-friendly floor: alpha = 3(1-beta)/(1+beta) per RTT
                alpha = 3.0 * (1.0 - self.cubic_beta) / (1.0 + self.cubic_beta)
                f.w_est += alpha * size * acked / f.cwnd
                w = self._cubic_window(f, now)
                if f.w_est > w:
                    w = f.w_est
                if w > f.cwnd:
                    f.cwnd = w
        else:
            # staleness must be judged before the filter update refreshes
            # the stamp, or ProbeRTT would never trigger
            rtprop_expired = now - f.rtprop_stamp > self.rtprop_window
            self._bbr_update_filters(f, now, rtt_sample, bw_sample)
            if f.round_started:
                self._bbr_round_hooks(f, now)
            self._bbr_advance(f, now, rtprop_expired)
            self._bbr_set_controls(f, acked)

    def _cubic_window(self, f: Flow, now: float) -> float:
        t = now - f.epoch_start
        return (self.cubic_c * (t - f.k_cubic) ** 3) * self.mtu + f.w_max

    # -- ACK arrival -----------------------------------------------------------

    def _on_ack(self, f: Flow, now: float, wire: cython.longlong,
                payload: cython.longlong):
        size: cython.longlong = self.mtu
        # receiver side: unique payload accounting
        if payload >= f.rcv_nxt and payload not in f.ooo:
            f.goodput_bytes += size
            if payload == f.rcv_nxt:
                f.rcv_nxt += 1
                ooo = f.ooo
                while f.rcv_nxt in ooo:
                    ooo.remove(f.rcv_nxt)
                    f.rcv_nxt += 1
            else:
                f.ooo.add(payload)

        f.wire_delivered_bytes += size
        f.net_inflight -= size
        f.ack_count += 1

        out = f.outstanding
        acked_entry = None
        while out:
            entry = out[0]
            w: cython.longlong = entry[0]
            if w < wire:
                out.popleft()
                f.holes.append((w, entry[1], f.ack_count - 1))
            elif w == wire:
                out.popleft()
                acked_entry = entry
                break
            else:
                break
        if acked_entry is None:
            return  # flushed by an earlier RTO; wire accounting already done

        send_t: cython.double = acked_entry[2]
        dsnap: cython.longlong = acked_entry[3]
        rtt_sample = now - send_t
        if f.srtt == 0.0:
            f.srtt = rtt_sample
            f.rttvar = rtt_sample / 2.0
        else:
            delta = rtt_sample - f.srtt
            if delta < 0:
                delta = -delta
            f.rttvar = 0.75 * f.rttvar + 0.25 * delta
            f.srtt = 0.875 * f.srtt + 0.125 * rtt_sample
        f.rto = max(f.srtt + 4.0 * f.rttvar, self.rto_min)
        f.rto_backoff = 1.0

        f.cc_inflight -= size
        if f.cc_inflight < 0:
            f.cc_inflight = 0
        f.delivered_cc += size
        f.round_delivered_b += size

        interval = now - send_t
        bw_sample = (f.delivered_cc - dsnap) * 8.0 / interval if interval > 0 else 0.0

        # round accounting; BBR's round hooks run after the filter update in
        # the CCA path so the completed round's last sample is visible
        f.round_started = False
        if dsnap >= f.next_round_delivered:
            f.round_started = True
            f.round_count += 1
            f.next_round_delivered = f.delivered_cc
            if f.cca == CCA_CUBIC and self.hystart_on and \
                    f.epoch_start < 0.0 and f.cwnd < f.ssthresh:
                # HyStart: exit slow start when this round's min RTT rose
                # clearly above the connection's RTT floor
                if f.hy_base < 1e17 and f.hy_round_min < 1e17:
                    thresh = f.hy_base / 8.0
                    if thresh < 0.004:
                        thresh = 0.004
                    elif thresh > 0.016:
                        thresh = 0.016
                    if f.hy_round_min >= f.hy_base + thresh:
                        f.ssthresh = f.cwnd
                if f.hy_round_min < f.hy_base:
                    f.hy_base = f.hy_round_min
                f.hy_round_min = 1e18

        # dup-ACK-equivalent loss declarations
        holes = f.holes
        while holes and f.ack_count - holes[0][2] >= self.dup_thresh:
            hw, hp, _c = holes.popleft()
            self._declare_lost(f, hw, hp, now)

        # recovery exit
        if f.in_recovery and wire >= f.recover_wire:
            f.in_recovery = False

        self._on_ack_cca(f, now, rtt_sample, bw_sample, size)

        if f.outstanding or f.rtx:
            self._arm_rto(f, now)
        else:
            f.rto_deadline = -1.0
        self._try_send(f, now)

    # -- sampling ----------------------------------------------------------------

    def _sample(self, now: float):
        self.times.append(now)
        self.queue_series.append(self.occupancy)
        s = self.per_flow_series
        for i, fl in enumerate(self.flows):
            f: Flow = fl
            s["goodput"][i].append(f.goodput_bytes)
            s["sent"][i].append(f.sent_bytes)
            s["wire_delivered"][i].append(f.wire_delivered_bytes)
            s["dropped"][i].append(f.dropped_bytes)
            s["net_inflight"][i].append(f.net_inflight)
            s["cc_inflight"][i].append(f.cc_inflight)
            s["cwnd"][i].append(f.cwnd)
            s["pacing_rate"][i].append(f.pacing_rate)
            s["btlbw"][i].append(f.btlbw)
            s["rtprop"][i].append(f.rtprop)
            s["state"][i].append(f.state * 10 + (f.pbw_state if f.cca >= CCA_BBR2 else 0))
            s["cap_bytes"][i].append(self.bbr_cwnd_gain * f.btlbw * f.rtprop / 8.0)
            s["retx"][i].append(f.retx_bytes)

    # -- main loop -----------------------------------------------------------------

    def run(self) -> dict:
        fl: Flow
        for obj in self.flows:
            fl = obj
            self._push(fl.start_t, fl.fid, EV_START, 0.0, 0)
        k = 0
        while True:
            t_s = k * self.sample_interval
            if t_s >= self.duration:
                break
            self._push(t_s, -1, EV_SAMPLE, 0.0, 0)
            k += 1
        self._push(self.duration, -1, EV_SAMPLE, 0.0, 0)

        heap = self.heap
        flows = self.flows
        last_t = 0.0
        while heap:
            ev = heapq.heappop(heap)
            t: cython.double = ev[0]
            if t > self.duration:
                break
            last_t = t
            kind: cython.int = ev[3]
            self.event_count += 1
            if kind == EV_ACK:
                self._on_ack(flows[ev[1]], t, int(ev[4]), ev[5])
            elif kind == EV_DEPART:
                fid, wire, payload = self.fifo.popleft()
                self.occupancy -= self.mtu
                f: Flow = flows[fid]
                if self.ack_every <= 1:
                    self._push(t + f.rtt_path, fid, EV_ACK, float(wire), payload)
                else:
                    f.ack_hold.append((wire, payload))
                    if len(f.ack_hold) >= self.ack_every:
                        self._flush_acks(f, t)
                    elif f.ack_flush_t < 0.0:
                        f.ack_flush_t = t + 0.04     # delayed-ACK style timeout
                        self._push(f.ack_flush_t, fid, EV_ACK_FLUSH, f.ack_flush_t, 0)
            elif kind == EV_PACE:
                f2: Flow = flows[ev[1]]
                if ev[4] == f2.pace_pending_t:
                    f2.pace_pending_t = -1.0
                    self._try_send(f2, t)
            elif kind == EV_RTO:
                f3: Flow = flows[ev[1]]
                f3.rto_armed_t = -1.0
                if f3.rto_deadline > 0.0:
                    if t + 1e-12 < f3.rto_deadline:
                        f3.rto_armed_t = f3.rto_deadline
                        self._push(f3.rto_deadline, f3.fid, EV_RTO, f3.rto_deadline, 0)
                    else:
                        self._on_rto(f3, t)
            elif kind == EV_ARRIVE:
                self._enqueue(flows[ev[1]], int(ev[4]), ev[5], t)
            elif kind == EV_ACK_FLUSH:
                f4: Flow = flows[ev[1]]
                if ev[4] == f4.ack_flush_t:
                    self._flush_acks(f4, t)
            elif kind == EV_SAMPLE:
                self._sample(t)
            else:  # EV_START
                self._try_send(flows[ev[1]], t)
            if self.debug_log is not None:
                self.debug_log.append((t, kind, ev[1], self.occupancy))

        if last_t < self.duration and self.flows:
            raise SimulationError(
                f"event queue drained at t={last_t:.6f} before duration "
                f"{self.duration:.6f} with active flows"
            )
        drop_counts = []
        for obj in self.flows:
            fl = obj
            drop_counts.append(fl.drop_count)
        out = {
            "times": self.times,
            "queue": self.queue_series,
            "series": self.per_flow_series,
            "drop_count": drop_counts,
            "event_count": self.event_count,
        }
        if self.debug_log is not None:
            out["event_log"] = self.debug_log
        return out


def run_dumbbell(capacity_bps: float, mtu: int, buffer_limit_bytes: int,
                 duration_s: float, sample_interval_s: float,
                 flow_defs: list, params: dict) -> dict:
    """Simulate one dumbbell run and return raw sampled series.

    ``flow_defs`` is a list of (fid, cca_code, path_rtt_s, start_s,
    max_window_bytes); flows must be indexable by fid (fid == position).
    """
    eng = Engine(capacity_bps, mtu, buffer_limit_bytes, duration_s,
                 sample_interval_s, flow_defs, params)
    return eng.run()
