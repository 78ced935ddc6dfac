"""Virtual-reference design of the incremental (extended PID) controller.

The controller is ``u_t = u_{t-1} + sum_i theta_i * e_{t-i}``. Its output is
linear in ``theta``, so fitting it to the input gap left by the inversion
controller is an ordinary least-squares problem.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.signal

from . import kernels
from .nic import NicController
from .signals import DataError, DataRecord, Signal, regressor_entries
from .sysid import ConditioningError


class NonInvertibleModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ReferenceModel:
    """``M(z^-1) = num(z^-1) / den(z^-1)``, coefficients in ascending lag."""

    num: tuple
    den: tuple

    def __post_init__(self):
        num = np.trim_zeros(np.asarray(self.num, dtype=float), "b")
        den = np.trim_zeros(np.asarray(self.den, dtype=float), "b")
        if den.size == 0 or den[0] == 0:
            raise ValueError("den needs a nonzero leading coefficient")
        if num.size == 0 or not np.any(num):
            raise ValueError("num is identically zero")
        object.__setattr__(self, "num", tuple(num))
        object.__setattr__(self, "den", tuple(den))
        if np.any(np.abs(self.poles) >= 1):
            raise ValueError(f"reference model is not asymptotically stable: poles {self.poles}")
        if np.any(np.abs(self.zeros) >= 1):
            raise NonInvertibleModelError(f"reference model is not minimum phase: zeros {self.zeros}")
        gain = np.sum(num) / np.sum(den)
        if abs(gain - 1.0) > 1e-10:
            raise ValueError(f"reference model static gain is {gain}, expected 1")

    @classmethod
    def first_order(cls, lam: float = 0.6) -> "ReferenceModel":
        """``y_{t+1} = (1 - lam) r_t + lam y_t``."""
        if not 0 <= lam < 1:
            raise ValueError("lam must lie in [0, 1)")
        return cls(num=(0.0, 1.0 - lam), den=(1.0, -lam))

    @property
    def relative_degree(self) -> int:
        return int(np.flatnonzero(self.num)[0])

    @property
    def poles(self) -> np.ndarray:
        return np.roots(self.den) if len(self.den) > 1 else np.empty(0)

    @property
    def zeros(self) -> np.ndarray:
        lead = np.asarray(self.num[self.relative_degree :])
        return np.roots(lead) if lead.size > 1 else np.empty(0)

    def filter(self, r) -> np.ndarray:
        """Forward response from rest."""
        return scipy.signal.lfilter(self.num, self.den, np.asarray(r, dtype=float))

    def to_dict(self) -> dict:
        return {"num": list(self.num), "den": list(self.den)}


@dataclass(frozen=True)
class VirtualReference:
    """Virtual reference on the record axis; only ``values[valid]`` is usable."""

    values: np.ndarray
    valid: slice
    start_index: int = 0

    def signal(self) -> Signal:
        return Signal(self.values[self.valid], self.start_index + self.valid.start)


def virtual_reference(M: ReferenceModel, y) -> VirtualReference:
    """Invert ``M`` offline with a ``relative_degree`` look-ahead.

    ``values[s]`` is the reference that drives ``M`` to produce ``y[s + d]``.
    The first ``max(len(num), len(den))`` samples carry the unknown initial
    state; the last ``d`` cannot be formed. Both ends are excluded from
    ``valid``.
    """
    start = y.start_index if isinstance(y, Signal) else 0
    y = np.asarray(y.samples if isinstance(y, Signal) else y, dtype=float)
    d = M.relative_degree
    head = max(len(M.num), len(M.den))
    if y.size <= head + d:
        raise DataError(f"record of length {y.size} too short for the reference model (need > {head + d})")
    lead = np.asarray(M.num[d:])
    values = np.zeros(y.size)
    values[: y.size - d] = scipy.signal.lfilter(M.den, lead, y[d:])
    return VirtualReference(values, slice(head, y.size - d), start)


@dataclass(frozen=True)
class VrftResult:
    theta: np.ndarray
    residual: float
    samples_used: int
    reference_model: ReferenceModel | None = None

    def to_dict(self) -> dict:
        d = {
            "theta": [float(v) for v in self.theta],
            "residual": float(self.residual),
            "samples_used": int(self.samples_used),
        }
        if self.reference_model is not None:
            d["reference_model"] = self.reference_model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VrftResult":
        ref = d.get("reference_model")
        return cls(
            theta=np.asarray(d["theta"], dtype=float),
            residual=float(d["residual"]),
            samples_used=int(d["samples_used"]),
            reference_model=ReferenceModel(**ref) if ref else None,
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "VrftResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


def filter_through_nic(ctrl: NicController, r_v, y_record, u_record=None, window=None) -> np.ndarray:
    """Replay the inversion controller over recorded data.

    At each position ``k`` in ``window`` the regressor is formed from the
    recorded outputs and applied inputs, and the command targets
    ``r_v[k + 1]``. ``r_v``, ``y_record`` and ``u_record`` share one index
    axis. The live controller is left untouched.
    """
    r_v = np.asarray(r_v, dtype=float)
    y = np.asarray(y_record, dtype=float)
    u = np.zeros_like(y) if u_record is None else np.asarray(u_record, dtype=float)
    if not (r_v.size == y.size == u.size):
        raise IndexError("virtual reference and record are not index-aligned")
    n = ctrl.model.n
    if window is None:
        window = range(n - 1, y.size - 1)
    if len(window) and (window[0] < n - 1 or window[-1] + 1 >= r_v.size):
        raise IndexError(f"replay window {window} outside the record")
    scratch = ctrl.scratch()
    out = np.empty(len(window))
    for j, k in enumerate(window):
        q = regressor_entries(y, u, k, n)
        out[j] = scratch.solve(r_v[k + 1], q)
    return out


def fit_pid(delta_u, e_v, n_theta: int, reference_model: ReferenceModel | None = None) -> VrftResult:
    """Least-squares ``theta`` for the incremental controller.

    ``u_t(theta) = sum_i theta_i * C[t, i]`` where ``C[t, i]`` integrates
    ``e_v`` lagged by ``i`` from the window start with zero pre-history.
    """
    du = np.asarray(delta_u, dtype=float)
    ev = np.asarray(e_v, dtype=float)
    if du.shape != ev.shape:
        raise IndexError("delta_u and e_v are not aligned")
    if n_theta < 0:
        raise ValueError("n_theta must be >= 0")
    if du.size <= n_theta + 1:
        raise DataError(f"window of {du.size} samples too short for n_theta={n_theta}")
    C = kernels.integrated_lags(np.ascontiguousarray(ev), int(n_theta))
    if not np.any(du):
        return VrftResult(np.zeros(n_theta + 1), 0.0, du.size, reference_model)
    Q, R, perm = scipy.linalg.qr(C, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(C.shape) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    if diag.size == 0 or diag.max() == 0 or np.any(diag <= tol):
        raise ConditioningError(f"virtual-error regressor has rank {int(np.sum(diag > tol))} < {n_theta + 1}")
    theta = np.empty(n_theta + 1)
    theta[perm] = scipy.linalg.solve_triangular(R, Q.T @ du)
    res = du - C @ theta
    return VrftResult(theta, float(np.dot(res, res)), du.size, reference_model)


@dataclass(frozen=True)
class PidDesign:
    """Everything the virtual-reference design produced, for inspection."""

    result: VrftResult
    window: range
    r_v: np.ndarray
    e_v: np.ndarray
    u_nl: np.ndarray
    delta_u: np.ndarray


def design_pid(record: DataRecord, ctrl: NicController, M: ReferenceModel, n_theta: int) -> PidDesign:
    """Virtual reference, inversion-controller replay and ``theta`` fit."""
    y, u = record.y.samples, record.u.samples
    vr = virtual_reference(M, y)
    lo = max(vr.valid.start, ctrl.model.n - 1)
    hi = vr.valid.stop - 1  # replay at k needs r_v[k + 1]
    if hi - lo <= n_theta + 1:
        raise DataError("valid window too short for the controller fit")
    window = range(lo, hi)
    u_nl = filter_through_nic(ctrl, vr.values, y, u, window)
    e_v = vr.values[lo:hi] - y[lo:hi]
    delta_u = u[lo:hi] - u_nl
    res = fit_pid(delta_u, e_v, n_theta, M)
    return PidDesign(res, window, vr.values, e_v, u_nl, delta_u)


@dataclass(eq=False)
class PidController:
    theta: np.ndarray
    u_prev: float = 0.0
    errors: list = field(default_factory=list)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if self.theta.size == 0:
            raise ValueError("theta needs at least one entry")
        self.reset(self.u_prev)

    @property
    def n_theta(self) -> int:
        return self.theta.size - 1

    def reset(self, u_prev: float = 0.0) -> None:
        self.u_prev = float(u_prev)
        self.errors = [0.0] * self.n_theta  # e_{t-1}, e_{t-2}, ...

    def step(self, e_t: float) -> float:
        e_t = float(e_t)
        if not np.isfinite(e_t):
            raise ValueError(f"non-finite error sample {e_t}")
        acc = self.u_prev + self.theta[0] * e_t
        for i in range(1, self.theta.size):
            acc = acc + self.theta[i] * self.errors[i - 1]
        if self.n_theta:
            self.errors = [e_t] + self.errors[:-1]
        self.u_prev = float(acc)
        return self.u_prev

    def run(self, e) -> np.ndarray:
        """Batch :meth:`step` over ``e``, advancing the state."""
        e = np.ascontiguousarray(e, dtype=float)
        if not np.all(np.isfinite(e)):
            raise ValueError("non-finite error samples")
        out = kernels.pid_filter(self.theta, e, self.u_prev, np.asarray(self.errors, dtype=float))
        if e.size:
            self.u_prev = float(out[-1])
            hist = list(e[::-1]) + self.errors
            self.errors = [float(v) for v in hist[: self.n_theta]]
        return out


def pid_step(ctrl: PidController, e_t: float) -> float:
    return ctrl.step(e_t)
