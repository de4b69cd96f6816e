import math

import pytest

from cclab import fluid
from cclab.core import CcaKind, FlowSpec, LinkConfig, ScenarioConfig
from cclab.fluid import (
    FluidFlowState,
    FluidParams,
    pacing_gain,
    probe_bw_rate,
    probe_rtt_mode,
    queue_derivative,
    sending_rate,
    simulate,
    step,
    system_state,
)
from cclab.metrics import summarize


def scenario(cap_mbps=10.0, rtt_ms=40.0, bdp=2.0, flows=None, dur=30.0, win=10.0,
             jitter=0.0, seed=1):
    return ScenarioConfig(
        link=LinkConfig(cap_mbps * 1e6, rtt_ms / 1e3, bdp),
        flows=flows if flows is not None else (FlowSpec(0, CcaKind.BBR_V1),),
        duration_s=dur,
        analysis_window_s=win,
        seed=seed,
        delay_jitter_s=jitter,
    )


def mixed_flows(kind, n=5):
    return tuple(
        [FlowSpec(i, kind) for i in range(n)]
        + [FlowSpec(n + i, CcaKind.CUBIC) for i in range(n)]
    )


class TestSendingRate:
    def make(self, m, w_prt, tau, x_pbw):
        f = FluidFlowState(flow_id=0, kind=CcaKind.BBR_V1, base_rtt_s=tau, start_s=0.0)
        f.probe_rtt_mode = m
        f.probe_rtt_cap_bytes = w_prt
        f.rtt_s = tau
        f.probe_bw_rate_bps = x_pbw
        return f

    def test_probe_rtt_branch(self):
        # 6000 B * 8 / 40 ms = 1.2 Mbps
        f = self.make(m=1.0, w_prt=6000.0, tau=0.040, x_pbw=0.0)
        assert sending_rate(f) == pytest.approx(1.2e6, abs=1e-9)

    def test_probe_bw_passthrough(self):
        f = self.make(m=0.0, w_prt=6000.0, tau=0.040, x_pbw=10e6)
        assert sending_rate(f) == pytest.approx(10e6, abs=1e-9)

    def test_convex_midpoint(self):
        # w/tau = 2 Mbps, x_pbw = 10 Mbps, m = 0.5 -> 6 Mbps
        w = 2e6 * 0.040 / 8.0
        f = self.make(m=0.5, w_prt=w, tau=0.040, x_pbw=10e6)
        assert sending_rate(f) == pytest.approx(6e6, abs=1e-9)


class TestPacingGain:
    PARAMS = FluidParams()

    def test_probe_plateau(self):
        r = 0.040
        f = FluidFlowState(flow_id=0, kind=CcaKind.BBR_V1, base_rtt_s=r, start_s=0.0)
        f.rtprop_s = r
        f.btlbw_bps = 10e6
        assert probe_bw_rate(f, self.PARAMS, 0.5 * r) == pytest.approx(12.5e6, rel=0.01)

    def test_drain_plateau(self):
        r = 0.040
        f = FluidFlowState(flow_id=0, kind=CcaKind.BBR_V1, base_rtt_s=r, start_s=0.0)
        f.rtprop_s = r
        f.btlbw_bps = 10e6
        assert probe_bw_rate(f, self.PARAMS, 1.5 * r) == pytest.approx(7.5e6, rel=0.01)

    @pytest.mark.parametrize("steepness", [40.0, 80.0])
    def test_cycle_average_is_one(self, steepness):
        params = FluidParams(sigmoid_steepness=steepness)
        r = 0.040
        n = 16000
        period = 8 * r
        avg = math.fsum(
            pacing_gain((k + 0.5) / n * period, r, params) for k in range(n)
        ) / n
        assert avg == pytest.approx(1.0, abs=0.005)

    def test_periodic(self):
        r = 0.03
        for u in (0.0, 0.01, 0.1, 0.15):
            a = pacing_gain(u, r, self.PARAMS)
            b = pacing_gain(u + 8 * r, r, self.PARAMS)
            assert a == pytest.approx(b, abs=1e-9)


class TestProbeRttMode:
    def test_pulse_duty(self):
        params = FluidParams()
        n = 100_000
        dt = params.probertt_interval_s / n
        duty = sum(
            1 for k in range(n)
            if probe_rtt_mode(params.probertt_interval_s + (k + 0.5) * dt, params) > 0.5
        ) / n
        expected = params.probertt_duration_s / params.probertt_interval_s
        assert duty == pytest.approx(expected, abs=2e-4)

    def test_mostly_zero(self):
        params = FluidParams()
        assert probe_rtt_mode(5.0, params) == 0.0
        assert probe_rtt_mode(3.33, params) == 0.0


class TestQueueDerivative:
    def test_overload_linear_growth(self):
        # Total inflow 1.2 C with room in the queue: grows at 0.2 C (bytes/s).
        cap = 10e6
        rate = queue_derivative(1.2 * cap, 50_000.0, cap)
        assert rate == pytest.approx(0.2 * cap / 8.0, rel=1e-12)

    def test_empty_underload_stays_empty(self):
        cap = 10e6
        assert queue_derivative(0.5 * cap, 0.0, cap) == pytest.approx(0.0, abs=1e-9)

    def test_loaded_underload_drains(self):
        cap = 10e6
        rate = queue_derivative(0.5 * cap, 100_000.0, cap)
        assert rate == pytest.approx(-0.5 * cap / 8.0, rel=1e-6)


class TestStep:
    def test_zero_flows_only_time_advances(self):
        sc = scenario(flows=())
        params = FluidParams()
        st0 = system_state(sc, params=params)
        st1 = step(st0, sc, params, 0.001)
        assert st1.time_s == pytest.approx(0.001)
        assert st1.queue_bytes == st0.queue_bytes == 0.0
        assert st1.loss_rate == 0.0
        assert st1.flows == []

    def test_queue_growth_matches_linear_oracle(self):
        # Pin one loss-based flow's window so inflow is constant while the
        # queue is filling, then check the closed-form linear growth.
        sc = scenario(cap_mbps=10.0, rtt_ms=40.0, bdp=8.0,
                      flows=(FlowSpec(0, CcaKind.RENO),))
        params = FluidParams(loss_smoothing_tau_s=0.25)
        st = system_state(sc, params=params)
        # 1.2 C * tau(empty queue) worth of window: inflow starts at 1.2 C
        cwnd = 1.2 * 10e6 / 8.0 * 0.040
        st.flows[0].cwnd_bytes = cwnd
        st.flows[0].cubic_wmax_bytes = cwnd
        dt = 1e-3
        st1 = step(st, sc, params, dt)
        # over one small step the rate is ~ cwnd/tau with tau rising slightly
        x0 = cwnd * 8.0 / 0.040
        expected_growth = (x0 - 10e6) / 8.0 * dt
        assert st1.queue_bytes == pytest.approx(expected_growth, rel=0.05)

    def test_divergence_reported(self):
        sc = scenario(flows=(FlowSpec(0, CcaKind.BBR_V1),))
        params = FluidParams()
        st = system_state(sc, params=params)
        st.flows[0].btlbw_bps = float("inf")
        with pytest.raises(fluid.FluidDivergenceError):
            step(st, sc, params, 1e-3)


class TestSingleFlowConvergence:
    def test_btlbw_within_5pct_of_capacity(self):
        tr = simulate(scenario(dur=30.0))
        assert tr.extras["btlbw_bps"][0][-1] == pytest.approx(10e6, rel=0.05)

    def test_probe_rtt_duty_cycle(self):
        params = FluidParams()
        tr = simulate(scenario(dur=25.0), params, sample_interval_s=0.01)
        times = tr.sample_times
        m = tr.extras["probe_rtt_mode"][0]
        lo = next(i for i, t in enumerate(times) if t >= 5.0)
        count = sum(1 for v in m[lo:] if v > 0.5)
        # two pulses of 200 ms at 10 ms sampling: 40 samples, within one
        # output sample per pulse edge
        assert abs(count - 40) <= 2

    def test_rtprop_non_increasing_between_resets(self):
        flows = (FlowSpec(0, CcaKind.BBR_V1), FlowSpec(1, CcaKind.CUBIC))
        tr = simulate(scenario(bdp=4.0, flows=flows, dur=25.0), FluidParams())
        m = tr.extras["probe_rtt_mode"][0]
        r = tr.extras["rtprop_s"][0]
        for k in range(1, len(r)):
            if m[k] == 0.0 and m[k - 1] == 0.0:
                assert r[k] <= r[k - 1] + 1e-12


class TestNumerics:
    def relative_gap(self, a, b):
        scale = max(max(abs(v) for v in a), 1e-12)
        return max(abs(x - y) for x, y in zip(a, b)) / scale

    def test_rk4_step_halving_under_1pct(self):
        flows = (FlowSpec(0, CcaKind.BBR_V1), FlowSpec(1, CcaKind.CUBIC))
        sc = scenario(bdp=2.0, flows=flows, dur=6.0, win=3.0)
        coarse = simulate(sc, FluidParams(integrator_step_s=4e-4), sample_interval_s=0.05)
        fine = simulate(sc, FluidParams(integrator_step_s=2e-4), sample_interval_s=0.05)
        assert coarse.sample_times == pytest.approx(fine.sample_times, abs=1e-9)
        assert self.relative_gap(coarse.queue_bytes, fine.queue_bytes) < 0.01
        for i in range(2):
            assert self.relative_gap(
                coarse.cum_goodput_bytes[i], fine.cum_goodput_bytes[i]
            ) < 0.01
        assert self.relative_gap(
            coarse.extras["btlbw_bps"][0], fine.extras["btlbw_bps"][0]
        ) < 0.01

    def test_bit_identical_reruns(self):
        sc = scenario(bdp=1.0, flows=mixed_flows(CcaKind.BBR_V1, 2), jitter=0.005)
        a = simulate(sc)
        b = simulate(sc)
        assert a.queue_bytes == b.queue_bytes
        assert a.cum_goodput_bytes == b.cum_goodput_bytes
        assert a.cum_dropped_bytes == b.cum_dropped_bytes


class TestInvariants:
    def test_delivered_rate_never_exceeds_capacity(self):
        sc = scenario(cap_mbps=100.0, rtt_ms=30.0, bdp=1.0,
                      flows=mixed_flows(CcaKind.BBR_V1), dur=9.0, win=5.0,
                      jitter=0.010)
        tr = simulate(sc)
        times = tr.sample_times
        for k in range(1, len(times)):
            dt = times[k] - times[k - 1]
            delivered = sum(
                tr.cum_goodput_bytes[i][k] - tr.cum_goodput_bytes[i][k - 1]
                for i in range(tr.n_flows)
            )
            assert delivered * 8.0 <= 100e6 * dt * 1.001

    def test_loss_only_when_queue_pinned(self):
        sc = scenario(cap_mbps=100.0, rtt_ms=30.0, bdp=1.0,
                      flows=mixed_flows(CcaKind.BBR_V1), dur=9.0, win=5.0,
                      jitter=0.010)
        tr = simulate(sc)
        limit = tr.buffer_limit_bytes
        for k, loss in enumerate(tr.extras["loss_rate"][0]):
            if loss > 0:
                assert tr.queue_bytes[k] >= limit - 1e-6

    def test_queue_within_bounds(self):
        sc = scenario(cap_mbps=100.0, rtt_ms=30.0, bdp=1.0,
                      flows=mixed_flows(CcaKind.BBR_V1), dur=9.0, win=5.0)
        tr = simulate(sc)
        limit = tr.buffer_limit_bytes
        assert all(-1e-9 <= q <= limit + 1e-6 for q in tr.queue_bytes)


class TestCoexistenceTrends:
    def test_bbrv1_above_fair_share_shallow(self):
        sc = scenario(cap_mbps=100.0, rtt_ms=30.0, bdp=1.0,
                      flows=mixed_flows(CcaKind.BBR_V1), dur=9.0, win=5.0,
                      jitter=0.010)
        summ = summarize(simulate(sc), 5.0)
        assert summ.bbr_fraction > 0.5

    def test_bbrv2_below_fair_share_4bdp(self):
        sc = scenario(cap_mbps=100.0, rtt_ms=30.0, bdp=4.0,
                      flows=mixed_flows(CcaKind.BBR_V2), dur=9.0, win=5.0,
                      jitter=0.010)
        summ = summarize(simulate(sc), 5.0)
        assert summ.bbr_fraction < 0.5

    def test_lone_reno_high_utilization(self):
        sc = scenario(bdp=2.0, flows=(FlowSpec(0, CcaKind.RENO),), dur=30.0, win=10.0)
        summ = summarize(simulate(sc), 10.0)
        assert summ.utilization >= 0.9


class TestSimulateContract:
    def test_rejects_bbrv3_without_variant_flag(self):
        sc = scenario(flows=(FlowSpec(0, CcaKind.BBR_V3),))
        with pytest.raises(ValueError, match="bbrv3_variant"):
            simulate(sc)

    def test_bbrv3_variant_runs(self):
        sc = scenario(cap_mbps=100.0, rtt_ms=30.0, bdp=1.0,
                      flows=mixed_flows(CcaKind.BBR_V3, 2), dur=4.0, win=2.0)
        tr = simulate(sc, FluidParams(bbrv3_variant=True))
        assert tr.sample_times[-1] == pytest.approx(4.0, abs=0.02)

    def test_rejects_invalid_scenario(self):
        sc = scenario()
        bad = ScenarioConfig(
            link=sc.link, flows=sc.flows, duration_s=5.0, analysis_window_s=50.0
        )
        with pytest.raises(ValueError, match="invalid scenario"):
            simulate(bad)

    def test_sampling_bounds_memory(self):
        tr = simulate(scenario(dur=10.0), sample_interval_s=0.1)
        assert len(tr.sample_times) <= 10.0 / 0.1 + 2
