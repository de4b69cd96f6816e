import pytest
from hypothesis import given, strategies as st

from cclab.core import LinkConfig
from cclab.steady_state import (
    SteadyStateInputs,
    compute_p,
    predict_bbr_fraction,
    predict_curve,
    probe_time,
)


def inputs(X=8.0, N=1, q=267, d=400.0, **kw):
    return SteadyStateInputs(
        buffer_bdp=X, bbr_flow_count=N, buffer_packets=q, post_convergence_s=d, **kw
    )


class TestComputeP:
    def test_shallow_buffer_clamps_to_zero(self):
        # X=1 zeroes the first two terms, leaving -4N/q
        p, clamped = compute_p(inputs(X=1.0, N=1, q=33))
        assert p == 0.0
        assert clamped

    def test_hand_value_x8(self):
        # 0.5 - 0.0625 - 4/267 = 0.4225187...
        p, clamped = compute_p(inputs(X=8.0, N=1, q=267))
        assert p == pytest.approx(0.422519, abs=1e-6)
        assert not clamped

    def test_hand_value_x64_n5(self):
        # 0.5 - 1/128 - 20/2133
        p, clamped = compute_p(inputs(X=64.0, N=5, q=2133))
        assert p == pytest.approx(0.482811, abs=1e-6)
        assert not clamped

    @given(
        x1=st.floats(2.0, 128.0), x2=st.floats(2.0, 128.0),
        q1=st.integers(64, 100000), q2=st.integers(64, 100000),
        n1=st.integers(1, 8), n2=st.integers(1, 8),
    )
    def test_monotonicity_unclamped(self, x1, x2, q1, q2, n1, n2):
        x_lo, x_hi = sorted((x1, x2))
        q_lo, q_hi = sorted((q1, q2))
        n_lo, n_hi = sorted((n1, n2))
        base = dict(d=400.0)
        p_x_lo, c1 = compute_p(inputs(X=x_lo, N=n_lo, q=q_hi, **base))
        p_x_hi, c2 = compute_p(inputs(X=x_hi, N=n_lo, q=q_hi, **base))
        if not (c1 or c2):
            assert p_x_lo <= p_x_hi          # increasing in X
        p_q_lo, c3 = compute_p(inputs(X=x_hi, N=n_lo, q=q_lo, **base))
        if not (c2 or c3):
            assert p_q_lo <= p_x_hi          # increasing in q
        p_n_hi, c4 = compute_p(inputs(X=x_hi, N=n_hi, q=q_hi, **base))
        if not (c2 or c4):
            assert p_n_hi <= p_x_hi          # decreasing in N


class TestProbeTime:
    def test_400s(self):
        assert probe_time(400.0, 10.0, 0.2) == pytest.approx(8.0, abs=1e-12)

    def test_200s(self):
        assert probe_time(200.0, 10.0, 0.2) == pytest.approx(4.0, abs=1e-12)

    def test_zero_duration(self):
        assert probe_time(123.0, 10.0, 0.0) == 0.0


class TestPredict:
    def test_golden_x8(self):
        # (1 - 0.4225187) * (400 - 8) / 400
        pred = predict_bbr_fraction(inputs(X=8.0, N=1, q=267, d=400.0))
        assert pred.bbr_fraction == pytest.approx(0.565931, abs=1e-5)
        assert pred.probe_time_s == pytest.approx(8.0)
        assert not pred.clamped

    def test_fair_split_without_probe_loss(self):
        # Force p = 0.5 via q -> infinity-ish and X solving 1/(2X) = 0:
        # directly check the duty-free identity instead.
        pred = predict_bbr_fraction(
            inputs(X=1e12, N=1, q=10**12, d=100.0, probertt_duration_s=0.0)
        )
        assert pred.loss_based_fraction == pytest.approx(0.5, abs=1e-9)
        assert pred.bbr_fraction == pytest.approx(0.5, abs=1e-9)

    def test_clamped_shallow(self):
        pred = predict_bbr_fraction(inputs(X=1.0, N=1, q=33, d=200.0))
        assert pred.clamped
        assert pred.loss_based_fraction == 0.0
        assert pred.bbr_fraction == pytest.approx(0.98, abs=1e-9)

    def test_drain_aware_extends_probe_time(self):
        base = predict_bbr_fraction(inputs())
        drained = predict_bbr_fraction(inputs(drain_aware=True, drain_s_per_cycle=0.3))
        assert drained.probe_time_s == pytest.approx(base.probe_time_s + 0.3 * 40)
        assert drained.bbr_fraction < base.bbr_fraction

    @given(
        x=st.floats(0.25, 128.0),
        n=st.integers(1, 10),
        q=st.integers(1, 10**6),
        d=st.floats(1.0, 2000.0),
    )
    def test_outputs_in_unit_interval(self, x, n, q, d):
        pred = predict_bbr_fraction(inputs(X=x, N=n, q=q, d=d))
        assert 0.0 <= pred.loss_based_fraction <= 1.0
        assert 0.0 <= pred.bbr_fraction <= 1.0

    @given(
        x=st.floats(2.0, 128.0),
        n=st.integers(1, 10),
        q=st.integers(100, 10**6),
        d=st.floats(1.0, 2000.0),
    )
    def test_reconstruction_identity_unclamped(self, x, n, q, d):
        pred = predict_bbr_fraction(inputs(X=x, N=n, q=q, d=d))
        if not pred.clamped and pred.bbr_fraction < 1.0:
            duty = (d - pred.probe_time_s) / d
            assert pred.bbr_fraction / duty + pred.loss_based_fraction == \
                pytest.approx(1.0, abs=1e-9)

    def test_no_loss_based_count_argument(self):
        # Structural check: predictions cannot depend on how many loss-based
        # flows compete, because the inputs have no such field.
        names = {f for f in SteadyStateInputs.__dataclass_fields__}
        assert not any("loss" in n or "cubic" in n or "reno" in n for n in names)


class TestPredictCurve:
    LINK = LinkConfig(capacity_bps=10e6, base_rtt_s=0.040, buffer_bdp=1.0)

    def test_paper_grid_decreasing_after_clamp(self):
        grid = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]
        curve = predict_curve(self.LINK, 1, 400.0, grid)
        assert len(curve) == 7
        fractions = [pred.bbr_fraction for _, pred in curve]
        # after the clamp region the curve strictly decreases
        start = next(i for i, (_, pred) in enumerate(curve) if not pred.clamped)
        for a, b in zip(fractions[start:], fractions[start + 1:]):
            assert b < a

    def test_single_point(self):
        curve = predict_curve(self.LINK, 1, 400.0, [8.0])
        assert len(curve) == 1
        assert curve[0][1].bbr_fraction == pytest.approx(0.565931, abs=1e-5)

    def test_deep_below_shallow_50mbps(self):
        lk = LinkConfig(capacity_bps=50e6, base_rtt_s=0.030, buffer_bdp=1.0)
        curve = predict_curve(lk, 1, 400.0, [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0])
        assert curve[-1][1].bbr_fraction < curve[0][1].bbr_fraction

    def test_rejects_non_ascending(self):
        with pytest.raises(ValueError, match="ascending"):
            predict_curve(self.LINK, 1, 400.0, [4.0, 2.0])
        with pytest.raises(ValueError, match="nonempty"):
            predict_curve(self.LINK, 1, 400.0, [])
