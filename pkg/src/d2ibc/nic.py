"""Nonlinear inversion controller.

At each step the command is the minimiser over ``U = [u_min, u_max]`` of::

    J(u) = (r_next - f(q, u))**2 / rho_y + mu * u**2 / rho_u

Models affine in ``u_t`` take a closed-form path; everything else goes to a
coarse grid followed by golden-section refinement.
"""

from __future__ import annotations

import copy
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .signals import DataError, DataRecord, Regressor
from .sysid import RegressionModel, _as_q, predict


class DegenerateNormalizationError(DataError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    grid_points: int = 201
    refine_tol: float = 1e-10

    def __post_init__(self):
        if self.grid_points < 3:
            raise ValueError("grid_points must be >= 3")
        if not self.refine_tol > 0:
            raise ValueError("refine_tol must be > 0")


def rho_constants(record: DataRecord) -> tuple[float, float]:
    """Squared 2-norms of the recorded output and input."""
    y, u = record.y.samples, record.u.samples
    rho_y = float(np.dot(y, y))
    rho_u = float(np.dot(u, u))
    if rho_y == 0 or rho_u == 0:
        raise DegenerateNormalizationError("record has an all-zero channel; normalization undefined")
    return rho_y, rho_u


@dataclass(eq=False)
class NicController:
    model: RegressionModel
    mu: float
    rho_y: float
    rho_u: float
    u_min: float
    u_max: float
    solver: SolverConfig = field(default_factory=SolverConfig)
    # diagnostics: flat-objective tie breaks
    flat_count: int = 0

    def __post_init__(self):
        if not self.u_min < self.u_max:
            raise ValueError(f"need u_min < u_max, got [{self.u_min}, {self.u_max}]")
        if not (self.rho_y > 0 and self.rho_u > 0):
            raise ValueError("rho_y and rho_u must be positive")
        if not self.mu >= 0:
            raise ValueError("mu must be >= 0")
        self.reset()

    # -- history ---------------------------------------------------------
    def reset(self, y_hist=(), u_hist=()) -> None:
        """Clear buffers. Histories are given newest first, zero-padded."""
        n = self.model.n
        m = max(n - 1, 1)
        self._y = deque((list(y_hist) + [0.0] * n)[:n], maxlen=n)
        self._u = deque((list(u_hist) + [0.0] * m)[:m], maxlen=m)

    def observe(self, y: float) -> None:
        """Register a new plant output."""
        self._y.appendleft(float(y))

    def apply(self, u: float) -> None:
        """Overwrite the last emitted command with the input actually applied."""
        self._u[0] = float(u)

    def regressor(self) -> Regressor:
        n = self.model.n
        us = list(self._u)[: n - 1] if n > 1 else []
        return Regressor(np.array(list(self._y) + us), n)

    # -- solve -----------------------------------------------------------
    @property
    def weights(self) -> tuple[float, float]:
        return 1.0 / self.rho_y, self.mu / self.rho_u

    def solve(self, r_next: float, q) -> float:
        """Constrained minimiser of the inversion objective. Pure."""
        alpha = self.model.u_polynomial(q)
        wy, wu = self.weights
        if alpha.size <= 2:
            return self._solve_affine(alpha, r_next, wy, wu)
        return float(
            kernels.minimize_poly_objective(
                np.ascontiguousarray(alpha),
                float(r_next),
                wy,
                wu,
                float(self.u_min),
                float(self.u_max),
                int(self.solver.grid_points),
                float(self.solver.refine_tol),
            )
        )

    def _solve_affine(self, alpha, r_next, wy, wu) -> float:
        a = alpha[0]
        b = alpha[1] if alpha.size > 1 else 0.0
        curvature = b * b * wy + wu
        if curvature == 0.0:
            self.flat_count += 1
            u = 0.0
        elif wu == 0.0:
            u = (r_next - a) / b
        else:
            u = b * (r_next - a) * wy / curvature
        return float(min(max(u, self.u_min), self.u_max))

    def command(self, r_next: float, q=None) -> float:
        """Solve for ``r_next`` and push the command into the input buffer.

        ``q`` defaults to the regressor formed from the internal buffers.
        """
        if q is None:
            q = self.regressor()
        u = self.solve(r_next, q)
        self._u.appendleft(u)
        return u

    def scratch(self) -> "NicController":
        return copy.deepcopy(self)

    # -- io --------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "mu": self.mu,
            "rho_y": self.rho_y,
            "rho_u": self.rho_u,
            "u_min": self.u_min,
            "u_max": self.u_max,
            "solver": {"grid_points": self.solver.grid_points, "refine_tol": self.solver.refine_tol},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NicController":
        return cls(
            model=RegressionModel.from_dict(d["model"]),
            mu=float(d["mu"]),
            rho_y=float(d["rho_y"]),
            rho_u=float(d["rho_u"]),
            u_min=float(d["u_min"]),
            u_max=float(d["u_max"]),
            solver=SolverConfig(**d.get("solver", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "NicController":
        return cls.from_dict(json.loads(Path(path).read_text()))


def objective(ctrl: NicController, q, r_next: float, u: float) -> float:
    """Inversion objective at ``u`` (evaluated even outside ``U``)."""
    d = r_next - predict(ctrl.model, _as_q(q, ctrl.model.n), u)
    return d * d / ctrl.rho_y + ctrl.mu * u * u / ctrl.rho_u


def command(ctrl: NicController, r_next: float, q) -> float:
    return ctrl.command(r_next, q)
