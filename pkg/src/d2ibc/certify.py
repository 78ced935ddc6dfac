"""Empirical stability certificate for the two-controller loop.

Every constant here is estimated by sampling or probing and is therefore a
lower bound on the true (existentially defined) quantity. Certificates carry
their sampling provenance and never claim to be proofs.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog
from scipy.stats import qmc

from .nic import NicController
from .signals import lp_norm
from .simloop import Plant, RunConfig, metrics, simulate_closed_loop, step_reference
from .sysid import RegressionModel
from .vrft import PidController


class AssumptionViolation(ValueError):
    """Small-gain condition fails, so the bounds are undefined."""


class SamplingError(ValueError):
    pass


class ConsistencyError(RuntimeError):
    pass


# -- residue -------------------------------------------------------------------


def residue(model: RegressionModel, plant: Plant, y, u) -> np.ndarray:
    """``g_o(y, u) - f(y, u)`` on rows of lag vectors (newest first).

    ``y`` and ``u`` have shape (..., N) with ``N >= max(plant.n, model.n)``.
    """
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    m = model.n
    z = np.concatenate([y[..., :m], u[..., 1:m], u[..., :1]], axis=-1)
    return plant.g_o(y[..., : plant.n], u[..., : plant.n]) - model.evaluate(z)


def _lag_dim(model, plant) -> int:
    return max(model.n, plant.n)


def estimate_gamma_y(model: RegressionModel, plant: Plant, samples: int = 10_000, seed: int = 0) -> float:
    """Largest sampled difference quotient of the residue in ``y``.

    Pairs ``(y, y', u)`` come from a scrambled Halton sequence over
    ``Y^N x Y^N x U^N``; the sequence is extensible, so more samples never
    lower the estimate.
    """
    if samples < 100:
        raise SamplingError(f"need at least 100 samples, got {samples}")
    N = _lag_dim(model, plant)
    pts = qmc.Halton(d=3 * N, scramble=True, seed=seed).random(samples)
    ylo, yhi = plant.y_domain
    y = ylo + (yhi - ylo) * pts[:, :N]
    yp = ylo + (yhi - ylo) * pts[:, N : 2 * N]
    u = plant.u_min + (plant.u_max - plant.u_min) * pts[:, 2 * N :]
    dist = np.max(np.abs(y - yp), axis=1)
    ok = dist > 0
    if not ok.any():
        raise SamplingError("no usable sample pairs")
    num = np.abs(residue(model, plant, y[ok], u[ok]) - residue(model, plant, yp[ok], u[ok]))
    return float(np.max(num / dist[ok]))


def _per_axis(dims: int, budget: int, cap: int = 50) -> int:
    return max(2, min(cap, int(math.floor(budget ** (1.0 / dims) + 1e-9))))


def _grid(lo, hi, k, dims):
    axis = np.linspace(lo, hi, k)
    mesh = np.meshgrid(*([axis] * dims), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def residue_bounds(model: RegressionModel, plant: Plant, per_axis: int = 50, budget: int = 200_000) -> dict:
    """Grid maxima ``max_u |Delta(0, u)|`` and ``max_{y,u} |Delta(y, u)|``."""
    N = _lag_dim(model, plant)
    ka = _per_axis(N, budget, per_axis)
    ug = _grid(plant.u_min, plant.u_max, ka, N)
    delta_bar = float(np.max(np.abs(residue(model, plant, np.zeros_like(ug), ug))))

    kb = _per_axis(2 * N, budget, per_axis)
    ylo, yhi = plant.y_domain
    yaxis = np.linspace(ylo, yhi, kb)
    uaxis = np.linspace(plant.u_min, plant.u_max, kb)
    mesh = np.meshgrid(*([yaxis] * N + [uaxis] * N), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    delta_inf = float(np.max(np.abs(residue(model, plant, pts[:, :N], pts[:, N:]))))
    # the y = 0 slice is not on the y-grid when the axis misses zero
    delta_inf = max(delta_inf, delta_bar)
    return {"delta_bar": delta_bar, "delta_inf": delta_inf, "u_points_per_axis": ka, "yu_points_per_axis": kb}


# -- cascade probing -------------------------------------------------------------


@dataclass
class ProbeConfig:
    """Amplitude grids for injected output and reference sequences.

    ``kind="random"`` draws independent uniform sequences. ``kind="feasible"``
    builds each reference as a model response to a random admissible input
    driven by the injected outputs, then scales it to the amplitude.
    """

    y_amplitudes: tuple = (0.0, 1.0, 2.0, 4.0)
    r_amplitudes: tuple = (0.0, 1.0, 2.0, 4.0)
    horizon: int = 200
    realizations: int = 2
    seed: int = 0
    kind: str = "random"
    smooth: float = 0.0


def cascade_response(model, nic: NicController, pid: PidController, y, r):
    """Drive controller and model with injected ``y_0..y_{T-1}``, ``r_1..r_T``.

    Returns ``(y_hat, e_hat)``: ``y_hat[t-1] = f(y_{t-1} lags, u_{t-1})`` and
    ``e_hat = r - y_hat`` for ``t = 1..T``.
    """
    y = np.asarray(y, dtype=float)
    r = np.asarray(r, dtype=float)
    T = y.size
    n = model.n
    ctl = nic.scratch()
    ctl.reset()
    lin = PidController(pid.theta)
    ylag = np.zeros(n)
    uhist = np.zeros(max(n - 1, 0))
    y_hat = np.empty(T)
    for t in range(T):
        ylag = np.roll(ylag, 1)
        ylag[0] = y[t]
        ctl.observe(y[t])
        # linear controller at rest on the pre-step, as in the closed loop
        u_lin = lin.step(r[t - 1] - y[t]) if t > 0 else 0.0
        u_nl = ctl.command(r[t])
        u = min(max(u_nl + u_lin, ctl.u_min), ctl.u_max)
        ctl.apply(u)
        z = np.concatenate([ylag, uhist, [u]])
        y_hat[t] = float(model.evaluate(z[None, :])[0])
        if n > 1:
            uhist = np.roll(uhist, 1)
            uhist[0] = u
    if not np.all(np.isfinite(y_hat)):
        raise ConsistencyError("model output diverged on bounded probes")
    return y_hat, r - y_hat


def _probe_signals(model, nic, cfg: ProbeConfig):
    rng = np.random.default_rng(cfg.seed)
    T = cfg.horizon
    for ay in cfg.y_amplitudes:
        for ar in cfg.r_amplitudes:
            for _ in range(cfg.realizations):
                wy = rng.uniform(-1, 1, T)
                wr = rng.uniform(-1, 1, T)
                if cfg.smooth:
                    wy = _smooth(wy, cfg.smooth)
                    wr = _smooth(wr, cfg.smooth)
                y = ay * wy
                if cfg.kind == "feasible":
                    v = nic.u_min + (nic.u_max - nic.u_min) * (wr + 1) / 2
                    r = _model_response(model, y, v)
                    peak = np.max(np.abs(r))
                    r = ar * r / peak if peak > 0 else r
                elif cfg.kind == "random":
                    r = ar * wr
                else:
                    raise ValueError(f"unknown probe kind {cfg.kind!r}")
                yield y, r


def _smooth(w, a):
    out = np.empty_like(w)
    acc = 0.0
    for k, v in enumerate(w):
        acc = a * acc + (1 - a) * v
        out[k] = acc
    return out / max(np.max(np.abs(out)), 1e-12)


def _model_response(model, y, v):
    """``f(y_t lags, v_t)`` with input history ``v``: one-step model outputs."""
    n = model.n
    T = y.size
    ypad = np.concatenate([np.zeros(n - 1), y])
    vpad = np.concatenate([np.zeros(n - 1), v])
    rows = []
    for t in range(T):
        k = t + n - 1
        rows.append(np.concatenate([ypad[k - n + 1 : k + 1][::-1], vpad[k - n + 1 : k][::-1], [vpad[k]]]))
    return model.evaluate(np.array(rows))


def _fit_gains(X: np.ndarray, h: np.ndarray, fixed: dict | None = None) -> np.ndarray:
    """Smallest nonnegative ``c`` with ``X @ c >= h`` (LP, summed-bound objective)."""
    p = X.shape[1]
    bounds = [(0, None)] * p
    if fixed:
        for j, v in fixed.items():
            bounds[j] = (v, v)
    cost = X.sum(axis=0)
    # keep a strictly positive cost on every column so ties resolve to zero
    cost = np.where(cost > 0, cost, 1.0)
    res = linprog(cost, A_ub=-X, b_ub=-h, bounds=bounds, method="highs")
    if res.status != 0:
        raise ConsistencyError(f"gain fit failed: {res.message}")
    c = np.maximum(res.x, 0.0)
    if fixed:
        for j, v in fixed.items():
            c[j] = v
    # exact feasibility on every probe: lift the offset by any rounding deficit
    deficit = np.max(h - X @ c) if h.size else 0.0
    if deficit > 0:
        c[-1] += deficit
    return c


@dataclass
class CascadeGains:
    Gamma_y: float
    Gamma_r: float
    Lambda_f: float
    Gamma_s: float
    Lambda_e: float
    probes: int
    degenerate: bool = False
    triples: np.ndarray = field(default=None, repr=False)


def estimate_cascade_gains(
    model: RegressionModel,
    nic: NicController,
    pid: PidController,
    probe: ProbeConfig,
    extra=(),
) -> CascadeGains:
    """Fit the finite-gain constants of the open controller+model cascade.

    ``extra`` adds explicit ``(y, r)`` probe pairs, e.g. recorded closed-loop
    trajectories.
    """
    rows = []
    for y, r in list(_probe_signals(model, nic, probe)) + [tuple(map(np.asarray, p)) for p in extra]:
        y_hat, e_hat = cascade_response(model, nic, pid, y, r)
        rows.append((lp_norm(y, math.inf), lp_norm(r, math.inf), lp_norm(y_hat, math.inf), lp_norm(e_hat, math.inf)))
    tr = np.array(rows, dtype=float)
    if not np.all(np.isfinite(tr)):
        raise ConsistencyError("non-finite cascade response")
    Ys, Rs, H, E = tr.T
    degenerate = bool(np.all(Ys == 0) and np.all(Rs == 0))
    if degenerate:
        warnings.warn("all probes are zero; cascade gains are degenerate", RuntimeWarning, stacklevel=2)
        return CascadeGains(0.0, 0.0, float(H.max()), 0.0, float(E.max()), len(rows), True, tr)
    X = np.column_stack([Ys, Rs, np.ones_like(Ys)])
    gy, gr, lf = _fit_gains(X, H)
    _, gs, le = _fit_gains(X, E, fixed={0: gy})
    return CascadeGains(float(gy), float(gr), float(lf), float(gs), float(le), len(rows), False, tr)


# -- certificate -----------------------------------------------------------------


@dataclass
class StabilityCertificate:
    gamma_y: float
    gamma_xi: float
    Gamma_y: float
    Gamma_r: float
    Lambda_f: float
    Gamma_s: float
    Lambda_e: float
    delta_bar: float
    delta_inf: float
    Lambda_g: float = None
    residue_gain_ok: bool = None
    small_gain_ok: bool = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for k in ("gamma_y", "gamma_xi", "Gamma_y", "Gamma_r", "Lambda_f", "Gamma_s", "Lambda_e", "delta_bar", "delta_inf"):
            v = float(getattr(self, k))
            if not v >= 0:
                raise ValueError(f"{k} must be >= 0, got {v}")
            setattr(self, k, v)
        lg = self.Lambda_f + self.delta_bar
        if self.Lambda_g is not None and self.Lambda_g != lg:
            raise ValueError("Lambda_g must equal Lambda_f + delta_bar")
        self.Lambda_g = lg
        a2, a3 = self.verdicts()
        if self.residue_gain_ok is not None and bool(self.residue_gain_ok) != a2:
            raise ValueError("stored residue-gain verdict disagrees with constants")
        if self.small_gain_ok is not None and bool(self.small_gain_ok) != a3:
            raise ValueError("stored small-gain verdict disagrees with constants")
        self.residue_gain_ok, self.small_gain_ok = a2, a3

    def verdicts(self) -> tuple[bool, bool]:
        return self.gamma_y <= 1.0, self.Gamma_y < 1.0 - self.gamma_y

    @property
    def holds(self) -> bool:
        return self.residue_gain_ok and self.small_gain_ok

    def to_dict(self, r_norm: float | None = None, xi_norm: float | None = None) -> dict:
        d = asdict(self)
        if r_norm is not None:
            xi = 0.0 if xi_norm is None else xi_norm
            entry = {"r_norm": r_norm, "xi_norm": xi}
            if self.holds:
                entry["y_bound"], entry["e_bound"] = theorem1_bounds(self, r_norm, xi)
            else:
                entry["y_bound"] = entry["e_bound"] = None
            d["bounds"] = entry
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StabilityCertificate":
        d = {k: v for k, v in d.items() if k != "bounds"}
        return cls(**d)

    def save(self, path, r_norm=None, xi_norm=None) -> None:
        Path(path).write_text(json.dumps(self.to_dict(r_norm, xi_norm), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "StabilityCertificate":
        return cls.from_dict(json.loads(Path(path).read_text()))


def certify(
    model: RegressionModel,
    plant: Plant,
    nic: NicController,
    pid: PidController,
    probe: ProbeConfig | None = None,
    gamma_samples: int = 10_000,
    seed: int = 0,
    per_axis: int = 50,
    budget: int = 200_000,
    extra_probes=(),
    gamma_xi: float | None = None,
) -> StabilityCertificate:
    probe = probe or ProbeConfig(seed=seed)
    gy = estimate_gamma_y(model, plant, gamma_samples, seed)
    rb = residue_bounds(model, plant, per_axis, budget)
    cg = estimate_cascade_gains(model, nic, pid, probe, extra_probes)
    prov = {
        "estimates": "empirical lower bounds",
        "gamma_y_samples": gamma_samples,
        "gamma_y_seed": seed,
        "grid_u_points_per_axis": rb["u_points_per_axis"],
        "grid_yu_points_per_axis": rb["yu_points_per_axis"],
        "probe": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(probe).items()},
        "probe_count": cg.probes,
        "extra_probes": len(extra_probes),
        "degenerate_probes": cg.degenerate,
    }
    return StabilityCertificate(
        gamma_y=gy,
        gamma_xi=plant.gamma_xi if gamma_xi is None else gamma_xi,
        Gamma_y=cg.Gamma_y,
        Gamma_r=cg.Gamma_r,
        Lambda_f=cg.Lambda_f,
        Gamma_s=cg.Gamma_s,
        Lambda_e=cg.Lambda_e,
        delta_bar=rb["delta_bar"],
        delta_inf=rb["delta_inf"],
        provenance=prov,
    )


def theorem1_bounds(cert: StabilityCertificate, r_norm: float, xi_norm: float) -> tuple[float, float]:
    """Output and tracking-error sup-norm bounds of the small-gain result."""
    if r_norm < 0 or xi_norm < 0:
        raise ValueError("norms must be nonnegative")
    margin = 1.0 - cert.Gamma_y - cert.gamma_y
    if not margin > 0:
        raise AssumptionViolation(f"Gamma_y + gamma_y = {cert.Gamma_y + cert.gamma_y:.6g} >= 1")
    y_bound = (cert.Gamma_r * r_norm + cert.gamma_xi * xi_norm + cert.Lambda_g) / margin
    gamma_er = cert.Gamma_y + cert.Gamma_s
    e_bound = (gamma_er * r_norm + cert.gamma_xi * xi_norm + cert.Lambda_e + cert.delta_inf) / (1.0 - cert.Gamma_y)
    return y_bound, e_bound


# -- steady-state checks -----------------------------------------------------------


@dataclass
class StepScenario:
    amplitude: float = 1.0
    step_time: int = 10
    disturbance: float = 0.05
    horizon: int = 1000
    settle_window: int = 100
    tol: float = 1e-4


def _verdict(trace, sc: StepScenario, tol: float) -> dict:
    m = metrics(trace, sc.settle_window)
    tail = trace.e[-sc.settle_window :]
    if m["steady_state_error"] < tol:
        v = "pass"
    elif np.ptp(tail) > tol:
        v = "inconclusive"
    else:
        v = "fail"
    return {"verdict": v, "tol": tol, **m}


def verify_theorem2(plant: Plant, nic: NicController, pid: PidController, sc: StepScenario | None = None) -> dict:
    """Steady-state checks by simulation.

    (i) reference step, no disturbance; (ii) constant reference with a
    constant additive disturbance; plus the same step with the linear
    controller switched off for contrast.
    """
    sc = sc or StepScenario()
    if not np.any(pid.theta):
        raise ValueError("linear controller has theta = 0; nothing to verify")
    if abs(np.sum(pid.theta)) == 0:
        warnings.warn("sum(theta) = 0: the integrator cannot act on a constant error", RuntimeWarning, stacklevel=2)
    T = sc.horizon
    tol = sc.tol * max(abs(sc.amplitude), 1e-12)
    ref = step_reference(T, sc.amplitude, sc.step_time)
    step = simulate_closed_loop(plant, nic, PidController(pid.theta), RunConfig(T, ref, name="step"))
    const = np.full(T + 1, sc.amplitude)
    dist = simulate_closed_loop(
        plant,
        nic,
        PidController(pid.theta),
        RunConfig(T, const, noise=np.full(T, sc.disturbance), name="disturbance"),
    )
    contrast = simulate_closed_loop(plant, nic, PidController(np.zeros_like(pid.theta)), RunConfig(T, ref, name="nic_only"))
    out = {
        "step": _verdict(step, sc, tol),
        "disturbance": _verdict(dist, sc, tol),
        "nic_only": metrics(contrast, sc.settle_window),
    }
    out["traces"] = {"step": step, "disturbance": dist, "nic_only": contrast}
    return out
