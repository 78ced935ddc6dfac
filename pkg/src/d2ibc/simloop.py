"""Benchmark plants, open-loop data generation and the closed loop.

Plants are regression-form maps ``y_{t+1} = g_o(y_t, u_t) + g_xi . xi_t``
where the lag vectors are newest first. ``g_o`` is vectorised over leading
axes so certificate routines can evaluate it on whole grids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .nic import NicController
from .signals import DataRecord, Signal, lp_norm, write_csv
from .vrft import PidController


class InstabilityError(RuntimeError):
    def __init__(self, t: int, value: float):
        super().__init__(f"output blew up at t={t}: |y|={abs(value):.3g}")
        self.t = t
        self.value = value


@dataclass(frozen=True, eq=False)
class Plant:
    name: str
    n: int
    g_o: Callable[[np.ndarray, np.ndarray], np.ndarray]
    noise_gain: tuple = (1.0,)
    u_min: float = -5.0
    u_max: float = 5.0
    y_domain: tuple = (-10.0, 10.0)
    noise_max: float = 0.0
    guard: float = 1e6

    def __post_init__(self):
        gain = np.zeros(self.n)
        src = np.asarray(self.noise_gain, dtype=float)[: self.n]
        gain[: src.size] = src
        object.__setattr__(self, "noise_gain", tuple(gain))
        if not self.u_min < self.u_max:
            raise ValueError("u_min must be < u_max")

    @property
    def gamma_xi(self) -> float:
        return float(np.max(np.abs(self.noise_gain)))

    def step(self, y_lags, u_lags, xi_lags=None) -> float:
        y_next = float(self.g_o(np.asarray(y_lags, dtype=float), np.asarray(u_lags, dtype=float)))
        if xi_lags is not None:
            y_next += float(np.dot(self.noise_gain, xi_lags))
        return y_next

    def clip(self, u: float) -> float:
        return min(max(u, self.u_min), self.u_max)


def _g_a(y, u):
    return 0.5 * y[..., 0] + u[..., 0]


def _g_b(y, u):
    return 0.8 * y[..., 0] - 0.2 * y[..., 1] + u[..., 0] + 0.3 * u[..., 0] ** 2


def _g_c(y, u):
    return y[..., 0] / (1.0 + y[..., 0] ** 2) + u[..., 0]


_CATALOG = {
    "a": (1, _g_a, "linear y+ = 0.5 y + u"),
    "b": (2, _g_b, "y+ = 0.8 y - 0.2 y[t-1] + u + 0.3 u^2"),
    "c": (1, _g_c, "y+ = y / (1 + y^2) + u"),
}


def plant(name: str, noise_max: float = 0.0, **kw) -> Plant:
    """Catalog plant ``"a"``, ``"b"`` or ``"c"`` with additive output noise."""
    try:
        n, g, _ = _CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown plant {name!r}; choose from {sorted(_CATALOG)}") from None
    return Plant(name=name, n=n, g_o=g, noise_gain=(1.0,), noise_max=noise_max, **kw)


def bounded_noise(T: int, amplitude: float, seed: int) -> np.ndarray:
    if amplitude == 0:
        return np.zeros(T)
    return np.random.default_rng(seed).uniform(-amplitude, amplitude, T)


def simulate_open_loop(plant: Plant, u, noise=None, y0=(), return_clips: bool = False):
    """Iterate the plant from rest on ``u_0, u_1, ...``; returns ``y_1, y_2, ...``.

    ``y0`` is ``(y_0, y_{-1}, ...)``; missing history is zero. Inputs outside
    ``U`` are clipped and counted.
    """
    u = np.asarray(u, dtype=float)
    xi = np.zeros(u.size) if noise is None else np.asarray(noise, dtype=float)
    if xi.size < u.size:
        raise ValueError("noise shorter than the input")
    n = plant.n
    ylag = np.zeros(n)
    y0 = np.asarray(y0, dtype=float)[:n]
    ylag[: y0.size] = y0
    ulag = np.zeros(n)
    xlag = np.zeros(n)
    out = np.empty(u.size)
    clips = 0
    for k in range(u.size):
        uk = plant.clip(u[k])
        clips += uk != u[k]
        ulag = np.roll(ulag, 1)
        ulag[0] = uk
        xlag = np.roll(xlag, 1)
        xlag[0] = xi[k]
        y_next = plant.step(ylag, ulag, xlag)
        if not math.isfinite(y_next) or abs(y_next) > plant.guard:
            raise InstabilityError(k + 1, y_next)
        ylag = np.roll(ylag, 1)
        ylag[0] = y_next
        out[k] = y_next
    sig = Signal(out, 1)
    return (sig, clips) if return_clips else sig


def generate_record(plant: Plant, L: int, amplitude: float, seed: int) -> DataRecord:
    """Open-loop experiment with uniform white excitation; indices ``1-L ... 0``."""
    rng = np.random.default_rng(seed)
    lo, hi = max(-amplitude, plant.u_min), min(amplitude, plant.u_max)
    u = rng.uniform(lo, hi, L)
    xi = rng.uniform(-plant.noise_max, plant.noise_max, L) if plant.noise_max > 0 else np.zeros(L)
    y = simulate_open_loop(plant, u[:-1], xi[:-1]).samples
    return DataRecord.from_arrays(u, np.concatenate([[0.0], y]))


def feasible_reference(plant: Plant, T: int, amplitude: float, seed: int, smooth: float = 0.8, y0=()) -> np.ndarray:
    """Noise-free plant response to a smooth random input: ``r_1 ... r_{T+1}``.

    Starting from the same ``y0`` as the closed-loop run, this is a solution
    of the plant and so exactly trackable by an exact inverse.
    """
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1.0, 1.0, T + 1)
    v = np.empty(T + 1)
    acc = 0.0
    for k in range(T + 1):
        acc = smooth * acc + (1 - smooth) * w[k]
        v[k] = acc
    v *= amplitude / max(np.max(np.abs(v)), 1e-12)
    return simulate_open_loop(plant, v, None, y0).samples


def step_reference(T: int, amplitude: float = 1.0, at: int = 1, base: float = 0.0) -> np.ndarray:
    """``r_t`` for ``t = 1 ... T+1``: ``base`` before ``at``, ``amplitude`` from ``at`` on."""
    t = np.arange(1, T + 2)
    return np.where(t >= at, amplitude, base).astype(float)


@dataclass
class RunConfig:
    T: int
    reference: np.ndarray
    y0: tuple = ()
    noise: np.ndarray | None = None
    noise_max: float = 0.0
    seed: int = 0
    name: str = "run"

    def __post_init__(self):
        self.reference = np.asarray(self.reference, dtype=float)
        if self.T < 0:
            raise ValueError("horizon must be >= 0")
        if self.reference.size < self.T:
            raise ValueError(f"reference has {self.reference.size} samples, horizon is {self.T}")
        if self.noise is None:
            self.noise = bounded_noise(self.T, self.noise_max, self.seed)
        else:
            self.noise = np.asarray(self.noise, dtype=float)
            if self.noise.size < self.T:
                raise ValueError("noise shorter than the horizon")
            if self.noise_max and np.any(np.abs(self.noise) > self.noise_max):
                raise ValueError("noise samples exceed the declared bound")


@dataclass
class Trace:
    """Closed-loop signals for ``t = 1 ... T``."""

    r: np.ndarray
    y: np.ndarray
    u: np.ndarray
    u_nl: np.ndarray
    u_lin: np.ndarray
    e: np.ndarray
    u_cmd: np.ndarray
    xi: np.ndarray
    saturation_count: int = 0
    outside_domain: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.y.size

    def save_csv(self, path) -> None:
        t = np.arange(1, self.T + 1)
        write_csv(
            path,
            ["t", "r", "y", "u", "u_nl", "u_lin", "e"],
            [t, self.r, self.y, self.u, self.u_nl, self.u_lin, self.e],
        )


def simulate_closed_loop(plant: Plant, nic: NicController, pid: PidController, cfg: RunConfig) -> Trace:
    """Run the two-controller loop for ``t = 1 ... T``.

    A pre-step at ``t = 0`` applies the inversion command for ``r_1`` with
    the linear controller at rest, producing ``y_1``. Then, per step, the
    error feeds the linear controller, the inversion controller targets
    ``r_{t+1}`` (the last reference sample is held past the end), their sum
    is clipped into ``U``, and the plant advances. The inversion controller
    buffers always hold applied inputs.
    """
    T = cfg.T
    n = plant.n
    r = cfg.reference
    xi = cfg.noise

    def ref(t):  # r_t, held after the end
        return r[min(t, r.size) - 1]

    ylag = np.zeros(n)
    y0 = np.asarray(cfg.y0, dtype=float)[:n]
    ylag[: y0.size] = y0
    ulag = np.zeros(n)
    xlag = np.zeros(n)
    nic.reset(y_hist=np.asarray(cfg.y0, dtype=float))
    pid.reset()

    rec = {k: np.zeros(T) for k in ("y", "u", "u_nl", "u_lin", "e", "u_cmd")}
    sat = 0
    outside = 0
    ylo, yhi = plant.y_domain
    if T == 0:
        return Trace(r=np.zeros(0), xi=np.zeros(0), **rec)

    for t in range(0, T + 1):
        if t == 0:
            u_lin = 0.0
        else:
            y_t = ylag[0]
            e_t = ref(t) - y_t
            u_lin = pid.step(e_t)
        u_nl = nic.command(ref(t + 1))
        u_cmd = u_nl + u_lin
        u_t = plant.clip(u_cmd)
        if t > 0:
            sat += u_t != u_cmd
            k = t - 1
            rec["y"][k], rec["e"][k] = y_t, e_t
            rec["u"][k], rec["u_nl"][k], rec["u_lin"][k], rec["u_cmd"][k] = u_t, u_nl, u_lin, u_cmd
            outside += not (ylo <= y_t <= yhi)
        if t == T:
            break
        nic.apply(u_t)
        ulag = np.roll(ulag, 1)
        ulag[0] = u_t
        xlag = np.roll(xlag, 1)
        xlag[0] = xi[t - 1] if t > 0 else 0.0
        y_next = plant.step(ylag, ulag, xlag)
        if not math.isfinite(y_next) or abs(y_next) > plant.guard:
            raise InstabilityError(t + 1, y_next)
        ylag = np.roll(ylag, 1)
        ylag[0] = y_next
        nic.observe(y_next)

    rs = np.array([ref(t) for t in range(1, T + 1)])
    return Trace(
        r=rs,
        xi=np.asarray(xi[:T], dtype=float),
        saturation_count=int(sat),
        outside_domain=int(outside),
        meta={"name": cfg.name, "plant": plant.name},
        **rec,
    )


def metrics(trace: Trace, settle_window: int) -> dict:
    if trace.T == 0:
        raise ValueError("empty trace")
    if not 0 < settle_window < trace.T:
        raise ValueError(f"settle_window must lie in (0, {trace.T})")
    e = trace.e
    return {
        "linf_error": lp_norm(e, math.inf),
        "rms_error": float(np.sqrt(np.mean(e * e))),
        "steady_state_error": float(np.mean(np.abs(e[-settle_window:]))),
        "saturation_count": int(trace.saturation_count),
    }


def save_metrics(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
