import numpy as np
import pytest
import scipy.signal
from hypothesis import given
from hypothesis import strategies as st

from d2ibc.nic import NicController, rho_constants
from d2ibc.signals import DataError, Signal, regressor_entries
from d2ibc.simloop import generate_record, plant
from d2ibc.sysid import ConditioningError, IdConfig, RegressionModel, identify
from d2ibc.vrft import (
    NonInvertibleModelError,
    PidController,
    ReferenceModel,
    VrftResult,
    design_pid,
    filter_through_nic,
    fit_pid,
    pid_step,
    virtual_reference,
)


def eq6_forward(theta, e):
    """Direct transcription of the incremental law, zero initial state."""
    u_prev, out = 0.0, []
    for t in range(len(e)):
        acc = u_prev
        for i, th in enumerate(theta):
            acc += th * (e[t - i] if t - i >= 0 else 0.0)
        out.append(acc)
        u_prev = acc
    return np.array(out)


def random_reference_model(rng):
    """Stable, minimum-phase, unit-gain M with relative degree 1..3."""
    d = int(rng.integers(1, 4))
    poles = rng.uniform(-0.9, 0.9, int(rng.integers(1, 4)))
    zeros = rng.uniform(-0.9, 0.9, int(rng.integers(0, 3)))
    den = np.poly(poles)
    lead = np.poly(zeros) if zeros.size else np.array([1.0])
    lead = lead * den.sum() / lead.sum()
    return ReferenceModel(tuple(np.concatenate([np.zeros(d), lead])), tuple(den))


class TestReferenceModel:
    def test_first_order(self):
        M = ReferenceModel.first_order(0.6)
        assert M.relative_degree == 1
        assert M.num == (0.0, pytest.approx(0.4)) and M.den == (1.0, -0.6)

    def test_unstable_rejected(self):
        with pytest.raises(ValueError):
            ReferenceModel((0.0, -0.2), (1.0, -1.2))

    def test_non_minimum_phase_rejected(self):
        # zero at 2: num = 0 + z^-1 (1 - 2 z^-1) scaled to unit gain
        with pytest.raises(NonInvertibleModelError):
            ReferenceModel((0.0, -1.0, 2.0), (1.0, 0.0))

    def test_gain_checked(self):
        with pytest.raises(ValueError, match="gain"):
            ReferenceModel((0.0, 0.5), (1.0, -0.6))


class TestVirtualReference:
    def test_pure_delay_is_shift(self, rng):
        y = rng.normal(size=30)
        vr = virtual_reference(ReferenceModel((0.0, 1.0), (1.0,)), y)
        s = vr.valid
        np.testing.assert_array_equal(vr.values[s], y[s.start + 1 : s.stop + 1])

    def test_constant_output(self):
        M = ReferenceModel((0.0, 0.5), (1.0, -0.5))
        y = np.ones(40)
        y[0] = 0.0  # from rest
        vr = virtual_reference(M, y)
        np.testing.assert_allclose(vr.values[vr.valid], 1.0, atol=1e-15)

    def test_hand_recursion(self, rng):
        M = ReferenceModel((0.0, 0.5), (1.0, -0.5))
        y = rng.normal(size=25)
        vr = virtual_reference(M, y)
        for k in range(vr.valid.start, vr.valid.stop):
            assert vr.values[k] == pytest.approx(2 * y[k + 1] - y[k], abs=1e-12)

    def test_round_trip(self, rng):
        for _ in range(10):
            M = random_reference_model(rng)
            r = rng.normal(size=300)
            y = scipy.signal.lfilter(M.num, M.den, r)
            vr = virtual_reference(M, y)
            np.testing.assert_allclose(vr.values[vr.valid], r[vr.valid], atol=1e-9)

    def test_forward_consistency(self, rng):
        for _ in range(10):
            M = random_reference_model(rng)
            y = rng.normal(size=200)
            vr = virtual_reference(M, y)
            d = M.relative_degree
            fwd = M.filter(vr.values)
            # the inverse filter started from rest reproduces y on every formed sample
            np.testing.assert_allclose(fwd[d:], y[d:], atol=1e-9)

    def test_too_short(self):
        with pytest.raises(DataError):
            virtual_reference(ReferenceModel.first_order(), np.ones(2))

    def test_signal_indices(self):
        vr = virtual_reference(ReferenceModel.first_order(), Signal(np.arange(10.0), start_index=-9))
        s = vr.signal()
        assert s.start_index == -9 + vr.valid.start and len(s) == vr.valid.stop - vr.valid.start


class TestFilterThroughNic:
    def test_identity_model(self, rng):
        c = NicController(RegressionModel.from_terms(1, {"u[t]": 1.0}), 0.0, 1.0, 1.0, -100, 100)
        r = rng.normal(size=20)
        y = rng.normal(size=20)
        np.testing.assert_array_equal(filter_through_nic(c, r, y), r[1:])

    def test_heavy_penalty(self, rng):
        c = NicController(RegressionModel.from_terms(1, {"u[t]": 1.0}), 1e15, 1.0, 1.0, 0.5, 3.0)
        out = filter_through_nic(c, rng.normal(size=20), rng.normal(size=20))
        np.testing.assert_allclose(out, 0.5)

    def test_replay_equivalence_and_determinism(self):
        rec = generate_record(plant("b"), 200, 1.0, 2)
        m = identify(rec, IdConfig(2, 1, 1e-8))
        c = NicController(m, 0.05, *rho_constants(rec), -5, 5)
        y, u = rec.y.samples, rec.u.samples
        vr = virtual_reference(ReferenceModel.first_order(), y)
        window = range(vr.valid.start, vr.valid.stop - 1)
        out = filter_through_nic(c, vr.values, y, u, window)
        for j, k in enumerate(window):
            fresh = NicController.from_dict(c.to_dict())
            assert fresh.command(vr.values[k + 1], regressor_entries(y, u, k, 2)) == out[j]
        assert np.array_equal(out, filter_through_nic(c, vr.values, y, u, window))

    def test_live_controller_untouched(self, rng):
        c = NicController(RegressionModel.from_terms(1, {"u[t]": 1.0}), 0.0, 1.0, 1.0, -5, 5)
        before = c.regressor().entries.copy()
        filter_through_nic(c, rng.normal(size=10), rng.normal(size=10))
        assert np.array_equal(c.regressor().entries, before)

    def test_misaligned(self):
        c = NicController(RegressionModel.from_terms(1, {"u[t]": 1.0}), 0.0, 1.0, 1.0, -5, 5)
        with pytest.raises(IndexError):
            filter_through_nic(c, np.zeros(5), np.zeros(6))


class TestFitPid:
    def test_unit_error_ramp(self):
        res = fit_pid(np.arange(1.0, 21.0), np.ones(20), 0)
        assert res.theta[0] == pytest.approx(1.0, abs=1e-12) and res.residual < 1e-20

    def test_zero_target(self, rng):
        res = fit_pid(np.zeros(30), rng.normal(size=30), 2)
        assert np.all(res.theta == 0) and res.residual == 0

    def test_recovery(self, rng):
        e = rng.normal(size=400)
        du = eq6_forward([0.4, 0.2], e)
        res = fit_pid(du, e, 1)
        np.testing.assert_allclose(res.theta, [0.4, 0.2], atol=1e-9)
        assert res.residual < 1e-18

    def test_rank_deficient(self):
        with pytest.raises(ConditioningError):
            fit_pid(np.ones(20), np.zeros(20), 1)

    def test_window_too_short(self):
        with pytest.raises(DataError):
            fit_pid(np.ones(2), np.ones(2), 1)

    def test_least_squares_optimality(self, rng):
        e = rng.normal(size=200)
        du = eq6_forward([0.3, -0.1, 0.05], e) + 0.1 * rng.normal(size=200)
        res = fit_pid(du, e, 2)

        def loss(th):
            r = du - eq6_forward(th, e)
            return float(r @ r)

        assert loss(res.theta) == pytest.approx(res.residual, rel=1e-9)
        for _ in range(20):
            d = rng.normal(size=3)
            assert loss(res.theta + 1e-3 * d / np.linalg.norm(d)) >= res.residual

    def test_serialization(self, tmp_path):
        res = VrftResult(np.array([0.1, 0.2]), 0.5, 10, ReferenceModel.first_order(0.3))
        res.save(tmp_path / "pid.json")
        back = VrftResult.load(tmp_path / "pid.json")
        assert back.to_dict() == res.to_dict()
        assert set(res.to_dict()) == {"theta", "residual", "samples_used", "reference_model"}


class TestPidController:
    def test_integrator(self):
        c = PidController([1.0])
        assert [pid_step(c, 1.0) for _ in range(3)] == [1.0, 2.0, 3.0]

    def test_pd_pair(self):
        c = PidController([1.0, -1.0])
        assert [c.step(1.0), c.step(1.0)] == [1.0, 1.0]

    def test_zero_error_holds(self):
        c = PidController([0.3, 0.2])
        c.step(2.0)
        c.step(0.0)  # flushes the lagged error
        v = c.step(0.0)
        assert c.step(0.0) == v and c.step(0.0) == v

    def test_non_finite(self):
        with pytest.raises(ValueError):
            PidController([1.0]).step(float("inf"))

    def test_run_matches_step(self, rng):
        theta = rng.normal(size=3)
        e = rng.normal(size=100)
        a, b = PidController(theta), PidController(theta)
        stepped = np.array([a.step(v) for v in e[:60]])
        batched = b.run(e[:60])
        np.testing.assert_allclose(stepped, batched, atol=1e-12)
        np.testing.assert_allclose([a.step(v) for v in e[60:]], b.run(e[60:]), atol=1e-12)
        np.testing.assert_allclose(batched, eq6_forward(theta, e)[:60], atol=1e-12)

    @given(st.lists(st.floats(-2, 2), min_size=1, max_size=4).filter(lambda t: abs(sum(t)) > 1e-3),
           st.floats(0.1, 3))
    def test_integrator_slope(self, theta, c):
        pid = PidController(theta)
        slope = np.diff(pid.run(np.full(50, c))[len(theta) - 1 :])
        np.testing.assert_allclose(slope, c * sum(theta), atol=1e-9)


def test_design_produces_stabilising_integral_action():
    rec = generate_record(plant("b"), 400, 1.0, 1)
    m = identify(rec, IdConfig(2, 1, 1e-8))
    nic = NicController(m, 0.0, *rho_constants(rec), -5, 5)
    d = design_pid(rec, nic, ReferenceModel.first_order(0.6), 1)
    assert d.result.samples_used == len(d.window)
    assert np.sum(d.result.theta) > 0
    assert np.array_equal(d.delta_u, rec.u.samples[d.window.start : d.window.stop] - d.u_nl)
