
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from d2ibc.certify import (
    AssumptionViolation,
    ProbeConfig,
    SamplingError,
    StabilityCertificate,
    StepScenario,
    cascade_response,
    certify,
    estimate_cascade_gains,
    estimate_gamma_y,
    residue_bounds,
    theorem1_bounds,
    verify_theorem2,
)
from d2ibc.nic import NicController, rho_constants
from d2ibc.simloop import generate_record, plant
from d2ibc.sysid import IdConfig, RegressionModel, identify
from d2ibc.vrft import PidController, ReferenceModel, design_pid

EXACT_A = RegressionModel.from_terms(1, {"y[t]": 0.5, "u[t]": 1.0})
LOOSE_A = RegressionModel.from_terms(1, {"y[t]": 0.2, "u[t]": 1.0})


def cert(**kw):
    base = dict(gamma_y=0.0, gamma_xi=0.0, Gamma_y=0.0, Gamma_r=0.0, Lambda_f=0.0, Gamma_s=0.0,
                Lambda_e=0.0, delta_bar=0.0, delta_inf=0.0)
    base.update(kw)
    return StabilityCertificate(**base)


class TestGammaY:
    def test_zero_residue(self):
        assert estimate_gamma_y(EXACT_A, plant("a"), 1000) == 0.0

    def test_linear_residue(self):
        assert estimate_gamma_y(LOOSE_A, plant("a"), 10_000) == pytest.approx(0.3, abs=1e-3)

    def test_monotone_in_samples(self):
        m = identify(generate_record(plant("c"), 200, 1.0, 0), IdConfig(1, 2, 1e-8))
        est = [estimate_gamma_y(m, plant("c"), s, seed=3) for s in (100, 200, 400, 800, 1600, 3200)]
        assert all(b >= a for a, b in zip(est, est[1:]))

    def test_rational_plant_against_analytic(self):
        # residue y/(1+y^2) - 0.0 y has Lipschitz constant 1 (at y = 0)
        m = RegressionModel.from_terms(1, {"u[t]": 1.0})
        est = estimate_gamma_y(m, plant("c"), 10_000)
        assert 0.9 < est <= 1.0 + 1e-12

    def test_too_few_samples(self):
        with pytest.raises(SamplingError):
            estimate_gamma_y(EXACT_A, plant("a"), 10)


class TestResidueBounds:
    def test_exact(self):
        rb = residue_bounds(EXACT_A, plant("a"))
        assert rb["delta_bar"] == 0.0 and rb["delta_inf"] == 0.0

    def test_linear_residue_extremes(self):
        rb = residue_bounds(LOOSE_A, plant("a"))
        assert rb["delta_bar"] == 0.0  # residue 0.3 y vanishes at y = 0
        assert rb["delta_inf"] == pytest.approx(3.0)  # 0.3 * 10 at the domain edge

    def test_offset_residue(self):
        m = RegressionModel.from_terms(1, {"y[t]": 0.5, "u[t]": 1.0, "u[t]^2": 0.1})
        rb = residue_bounds(m, plant("a"))
        assert rb["delta_bar"] == pytest.approx(2.5)  # 0.1 * 5^2


class TestCascade:
    def test_exact_inversion_case(self):
        nic = NicController(EXACT_A, 0.0, 1.0, 1.0, -5, 5)
        g = estimate_cascade_gains(EXACT_A, nic, PidController([0.0]), ProbeConfig(kind="feasible", seed=1))
        assert g.Gamma_y == pytest.approx(0.0, abs=1e-9)
        assert g.Gamma_r == pytest.approx(1.0, abs=1e-9)
        assert g.Lambda_f == pytest.approx(0.0, abs=1e-9)

    def test_zero_probes(self):
        nic = NicController(EXACT_A, 0.0, 1.0, 1.0, -5, 5)
        with pytest.warns(RuntimeWarning, match="degenerate"):
            g = estimate_cascade_gains(EXACT_A, nic, PidController([0.1]), ProbeConfig((0.0,), (0.0,)))
        assert (g.Gamma_y, g.Gamma_r, g.Lambda_f, g.Gamma_s, g.Lambda_e) == (0, 0, 0, 0, 0)
        assert g.degenerate

    def test_fit_holds_on_every_probe(self):
        rec = generate_record(plant("b"), 300, 1.0, 0)
        m = identify(rec, IdConfig(2, 1, 1e-8))
        nic = NicController(m, 0.1, *rho_constants(rec), -5, 5)
        pid = PidController([0.05, 0.02])
        g = estimate_cascade_gains(m, nic, pid, ProbeConfig(seed=2, horizon=100))
        Ys, Rs, H, E = g.triples.T
        assert np.all(g.Gamma_y * Ys + g.Gamma_r * Rs + g.Lambda_f - H >= 0)
        assert np.all(g.Gamma_y * Ys + g.Gamma_s * Rs + g.Lambda_e - E >= 0)

    def test_replay(self, rng):
        nic = NicController(EXACT_A, 0.0, 1.0, 1.0, -50, 50)
        y, r = rng.uniform(-1, 1, 30), rng.uniform(-1, 1, 30)
        y_hat, e_hat = cascade_response(EXACT_A, nic, PidController([0.0]), y, r)
        np.testing.assert_allclose(y_hat, r, atol=1e-12)  # exact inversion, wide U
        np.testing.assert_allclose(e_hat, 0.0, atol=1e-12)


class TestBoundFormulas:
    def test_output_bound(self):
        c = cert(Gamma_y=0.2, gamma_y=0.3, Gamma_r=1.0, gamma_xi=0.1, Lambda_f=0.05)
        assert theorem1_bounds(c, 1.0, 0.1)[0] == pytest.approx(2.12)

    def test_feed_through(self):
        assert theorem1_bounds(cert(Gamma_r=1.0), 1.0, 0.0)[0] == 1.0

    def test_error_bound(self):
        c = cert(Gamma_y=0.1, Gamma_s=0.1, delta_inf=0.2)
        assert theorem1_bounds(c, 1.0, 0.0)[1] == pytest.approx(0.4 / 0.9)

    def test_assumption_violation(self):
        with pytest.raises(AssumptionViolation):
            theorem1_bounds(cert(Gamma_y=0.6, gamma_y=0.4), 1.0, 0.0)

    @given(st.floats(0, 0.49), st.floats(0, 0.49), st.floats(0, 5), st.floats(0, 5), st.floats(0, 5),
           st.floats(0, 5), st.floats(0, 2), st.floats(0, 2), st.floats(0, 1))
    def test_monotone(self, Gy, gy, Gr, Gs, lf, r, xi, dr, dl):
        c0 = cert(Gamma_y=Gy, gamma_y=gy, Gamma_r=Gr, Gamma_s=Gs, Lambda_f=lf, gamma_xi=1.0)
        c1 = cert(Gamma_y=Gy, gamma_y=gy, Gamma_r=Gr, Gamma_s=Gs, Lambda_f=lf + dl, gamma_xi=1.0)
        y0, e0 = theorem1_bounds(c0, r, xi)
        assert theorem1_bounds(c0, r + dr, xi)[0] >= y0 and theorem1_bounds(c0, r + dr, xi)[1] >= e0
        assert theorem1_bounds(c0, r, xi + dr)[0] >= y0 and theorem1_bounds(c0, r, xi + dr)[1] >= e0
        assert theorem1_bounds(c1, r, xi)[0] >= y0


class TestCertificate:
    def test_invariants(self):
        c = cert(Lambda_f=0.3, delta_bar=0.2)
        assert c.Lambda_g == 0.5 and c.holds
        with pytest.raises(ValueError):
            cert(Gamma_y=-0.1)
        with pytest.raises(ValueError):
            cert(Lambda_f=0.3, delta_bar=0.2, Lambda_g=0.4)
        with pytest.raises(ValueError, match="verdict"):
            cert(Gamma_y=0.9, gamma_y=0.5, small_gain_ok=True)

    def test_json_round_trip(self, tmp_path):
        c = cert(Gamma_y=0.2, gamma_y=0.1, Gamma_r=1.1, Lambda_f=0.3, delta_bar=0.1, provenance={"seed": 3})
        c.save(tmp_path / "c.json", 1.0, 0.1)
        back = StabilityCertificate.load(tmp_path / "c.json")
        assert back == c

    def test_end_to_end_exact(self):
        nic = NicController(EXACT_A, 0.0, 1.0, 1.0, -5, 5)
        c = certify(EXACT_A, plant("a"), nic, PidController([0.0]), ProbeConfig(horizon=50, realizations=1))
        assert c.gamma_y == 0.0 and c.delta_inf == 0.0 and c.holds
        assert c.provenance["gamma_y_samples"] == 10_000


class TestSteadyState:
    @pytest.fixture(scope="class")
    @classmethod
    def report(cls):
        pl = plant("b")
        rec = generate_record(pl, 400, 1.0, 1)
        m = identify(rec, IdConfig(2, 1, 1e-8))
        nic = NicController(m, 0.0, *rho_constants(rec), -5, 5)
        theta = design_pid(rec, nic, ReferenceModel.first_order(0.6), 1).result.theta
        return verify_theorem2(pl, nic, PidController(theta), StepScenario())

    def test_step(self, report):
        assert report["step"]["verdict"] == "pass"

    def test_disturbance(self, report):
        assert report["disturbance"]["verdict"] == "pass"

    def test_contrast(self, report):
        assert report["nic_only"]["steady_state_error"] > report["step"]["steady_state_error"]
        assert report["nic_only"]["steady_state_error"] > 1e-3

    def test_zero_theta_rejected(self):
        nic = NicController(EXACT_A, 0.0, 1.0, 1.0, -5, 5)
        with pytest.raises(ValueError):
            verify_theorem2(plant("a"), nic, PidController([0.0, 0.0]))

    def test_unsettled_is_inconclusive(self):
        pl = plant("a")
        nic = NicController(LOOSE_A, 0.0, 1.0, 1.0, -5, 5)
        # aggressive integrator gain: oscillatory settling not finished by the horizon
        rep = verify_theorem2(pl, nic, PidController([2.5]), StepScenario(horizon=60, settle_window=20))
        assert rep["step"]["verdict"] == "inconclusive"
