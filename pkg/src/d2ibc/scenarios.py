"""Reference fixture suite for checking the certified closed-loop bounds.

Each :class:`Scenario` pairs a catalog plant with a model, an inversion
controller, a linear controller and one closed-loop run. :func:`check_bounds`
certifies the pair and compares the observed sup norms with the bounds.
Scenarios whose assumption verdicts fail are reported as out of scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


from .certify import ProbeConfig, StabilityCertificate, certify, theorem1_bounds
from .nic import NicController, rho_constants
from .signals import lp_norm
from .simloop import Plant, RunConfig, Trace, feasible_reference, generate_record, plant, simulate_closed_loop, step_reference
from .sysid import IdConfig, RegressionModel, identify
from .vrft import PidController, ReferenceModel, design_pid


@dataclass
class Scenario:
    name: str
    plant: Plant
    nic: NicController
    pid: PidController
    run: RunConfig


@dataclass
class BoundCheck:
    name: str
    certificate: StabilityCertificate
    in_scope: bool
    y_linf: float
    e_linf: float
    y_bound: float = math.nan
    e_bound: float = math.nan
    outside_domain: int = 0

    @property
    def violated(self) -> bool:
        if not self.in_scope:
            return False
        return self.y_linf > self.y_bound or self.e_linf > self.e_bound


def build_scenario(
    name: str,
    plant_name: str,
    degree: int = 1,
    noise: float = 0.0,
    *,
    model: RegressionModel | None = None,
    theta=None,
    n_theta: int = 1,
    lam: float = 0.6,
    reference: str = "step",
    amplitude: float = 1.0,
    T: int = 500,
    L: int = 400,
    seed: int = 1,
) -> Scenario:
    pl = plant(plant_name, noise_max=noise)
    rec = generate_record(pl, L, 1.0, seed)
    m = model if model is not None else identify(rec, IdConfig(pl.n, degree, 1e-8, True))
    rho_y, rho_u = rho_constants(rec)
    nic = NicController(m, 0.0, rho_y, rho_u, pl.u_min, pl.u_max)
    if theta is None:
        theta = design_pid(rec, nic, ReferenceModel.first_order(lam), n_theta).result.theta
    if reference == "step":
        r = step_reference(T, amplitude, 10)
    else:
        r = feasible_reference(pl, T, amplitude, seed + 2)
    run = RunConfig(T, r, noise_max=noise, seed=seed + 4, name=name)
    return Scenario(name, pl, nic, PidController(theta), run)


def fixture_suite() -> list[Scenario]:
    """Mix of exact, mismatched, noisy and non-affine-plant configurations."""
    return [
        build_scenario("a-exact", "a"),
        build_scenario("a-exact-feasible", "a", reference="feasible"),
        build_scenario("a-noisy", "a", noise=0.05),
        build_scenario(
            "a-mismatch",
            "a",
            model=RegressionModel.from_terms(1, {"y[t]": 0.2, "u[t]": 1.0}),
            theta=[0.1, 0.05],
        ),
        build_scenario("b-linear", "b"),
        build_scenario("b-linear-noisy", "b", noise=0.05),
        build_scenario("b-linear-feasible", "b", reference="feasible", amplitude=0.8),
        build_scenario("b-quadratic", "b", degree=2),
        build_scenario("c-linear", "c"),
        build_scenario("c-linear-noisy", "c", noise=0.05),
    ]


def check_bounds(sc: Scenario, probe: ProbeConfig | None = None, **certify_kw) -> BoundCheck:
    trace: Trace = simulate_closed_loop(sc.plant, sc.nic.scratch(), PidController(sc.pid.theta), sc.run)
    cert = certify(sc.nic.model, sc.plant, sc.nic, sc.pid, probe or ProbeConfig(seed=0), **certify_kw)
    y_linf, e_linf = lp_norm(trace.y, math.inf), lp_norm(trace.e, math.inf)
    chk = BoundCheck(sc.name, cert, cert.holds and trace.outside_domain == 0, y_linf, e_linf,
                     outside_domain=trace.outside_domain)
    if cert.holds:
        r_norm = lp_norm(trace.r, math.inf)
        xi_norm = lp_norm(trace.xi, math.inf) if trace.T else 0.0
        chk.y_bound, chk.e_bound = theorem1_bounds(cert, r_norm, xi_norm)
    return chk
