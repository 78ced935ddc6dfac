"""One-step-ahead polynomial regression models ``y_{t+1} = f(q_t, u_t)``.

A model of order ``n`` sees the variable vector ``z = (q_t, u_t)`` of length
``2n``: ``n`` output lags, ``n - 1`` past inputs and the current input last.
Each basis feature is a monomial in ``z``, stored as an integer exponent row.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .signals import DataError, DataRecord, Regressor


class ConditioningError(DataError):
    """Least-squares problem is rank deficient."""


@dataclass(frozen=True)
class IdConfig:
    n: int = 1
    degree: int = 1
    ridge: float = 0.0
    affine_in_u: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("model order n must be >= 1")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if not self.ridge >= 0:
            raise ValueError("ridge must be >= 0")


def variable_names(n: int) -> list[str]:
    names = ["y[t]"] + [f"y[t-{k}]" for k in range(1, n)]
    names += [f"u[t-{k}]" for k in range(1, n)]
    return names + ["u[t]"]


def make_basis(n: int, degree: int, affine_in_u: bool = True) -> np.ndarray:
    """Exponent rows of all monomials in ``2n`` variables up to ``degree``.

    Ordered by total degree, constant first. With ``affine_in_u`` monomials of
    degree >= 2 in ``u_t`` are dropped.
    """
    nv = 2 * n
    rows = [np.zeros(nv, dtype=np.int64)]
    for d in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(nv), d):
            e = np.zeros(nv, dtype=np.int64)
            for v in combo:
                e[v] += 1
            if affine_in_u and e[-1] >= 2:
                continue
            rows.append(e)
    return np.array(rows)


def describe(exponents: np.ndarray) -> str:
    names = variable_names(exponents.size // 2)
    parts = []
    for name, p in zip(names, exponents):
        if p == 1:
            parts.append(name)
        elif p > 1:
            parts.append(f"{name}^{p}")
    return "*".join(parts) if parts else "1"


def parse_descriptor(text: str, n: int) -> np.ndarray:
    names = variable_names(n)
    e = np.zeros(2 * n, dtype=np.int64)
    if text.strip() == "1":
        return e
    for factor in text.split("*"):
        name, _, power = factor.partition("^")
        try:
            e[names.index(name.strip())] += int(power) if power else 1
        except ValueError:
            raise ValueError(f"unknown feature factor {factor!r} for order {n}") from None
    return e


def _features(exponents: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Monomial values; ``z`` has shape (..., 2n), result (..., n_features)."""
    z = np.asarray(z, dtype=float)
    out = np.ones(z.shape[:-1] + (exponents.shape[0],))
    for v in range(exponents.shape[1]):
        p = exponents[:, v]
        if not p.any():
            continue
        out *= z[..., v : v + 1] ** p
    return out


@dataclass(frozen=True, eq=False)
class RegressionModel:
    n: int
    degree: int
    exponents: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        exps = np.array(self.exponents, dtype=np.int64).reshape(-1, 2 * self.n)
        coef = np.array(self.coefficients, dtype=float).reshape(-1)
        if exps.shape[0] != coef.size:
            raise ValueError(f"{exps.shape[0]} features but {coef.size} coefficients")
        exps.setflags(write=False)
        coef.setflags(write=False)
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "coefficients", coef)

    @property
    def affine_in_u(self) -> bool:
        return bool(np.all(self.exponents[:, -1] <= 1))

    @property
    def features(self) -> list[str]:
        return [describe(e) for e in self.exponents]

    @classmethod
    def from_terms(cls, n: int, terms: dict[str, float], degree: int | None = None) -> "RegressionModel":
        """Build a model from ``{"y[t]": 0.5, "u[t]": 1.0, "1": 0.0}``-style terms."""
        exps = np.array([parse_descriptor(k, n) for k in terms]).reshape(-1, 2 * n)
        coef = np.array(list(terms.values()), dtype=float)
        if degree is None:
            degree = int(exps.sum(axis=1).max()) if exps.size else 1
        return cls(n=n, degree=max(degree, 1), exponents=exps, coefficients=coef)

    def coefficient(self, descriptor: str) -> float:
        target = parse_descriptor(descriptor, self.n)
        for e, c in zip(self.exponents, self.coefficients):
            if np.array_equal(e, target):
                return float(c)
        return 0.0

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "degree": self.degree,
            "affine_in_u": self.affine_in_u,
            "features": self.features,
            "coefficients": [float(c) for c in self.coefficients],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionModel":
        n = int(d["n"])
        exps = np.array([parse_descriptor(f, n) for f in d["features"]]).reshape(-1, 2 * n)
        model = cls(n=n, degree=int(d["degree"]), exponents=exps, coefficients=d["coefficients"])
        if "affine_in_u" in d and bool(d["affine_in_u"]) != model.affine_in_u:
            raise ValueError("affine_in_u flag disagrees with the feature list")
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "RegressionModel":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def u_polynomial(self, q) -> np.ndarray:
        """Coefficients ``alpha`` with ``f(q, u) = sum_k alpha[k] * u**k``."""
        q = _as_q(q, self.n)
        z = np.append(q, 1.0)
        qpart = _features(self.exponents[:, :-1], z[:-1]) * self.coefficients
        alpha = np.zeros(int(self.exponents[:, -1].max()) + 1 if self.exponents.size else 1)
        np.add.at(alpha, self.exponents[:, -1], qpart)
        return alpha

    def evaluate(self, z) -> np.ndarray:
        """Vectorised ``f`` on rows of ``z = (q, u)``."""
        return _features(self.exponents, z) @ self.coefficients


def _as_q(q, n: int) -> np.ndarray:
    arr = q.entries if isinstance(q, Regressor) else np.asarray(q, dtype=float).reshape(-1)
    if arr.size != 2 * n - 1:
        raise ValueError(f"regressor length {arr.size} does not match model order {n} (need {2 * n - 1})")
    return arr


def predict(model: RegressionModel, q, u: float) -> float:
    """One-step prediction ``f(q, u)``."""
    z = np.append(_as_q(q, model.n), float(u))
    return float(_features(model.exponents, z) @ model.coefficients)


def affine_decompose(model: RegressionModel, q) -> tuple[float, float]:
    """``(a, b)`` with ``predict(model, q, u) == a + b*u``; affine models only."""
    if not model.affine_in_u:
        raise TypeError("affine_decompose needs a model that is affine in u[t]")
    alpha = model.u_polynomial(q)
    return float(alpha[0]), float(alpha[1]) if alpha.size > 1 else 0.0


def regression_data(record: DataRecord, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Stacked ``z_t = (q_t, u_t)`` rows and targets ``y_{t+1}``."""
    u, y = record.u.samples, record.y.samples
    L = record.L
    if L < n + 1:
        raise DataError(f"record of length {L} too short for order {n}")
    ks = np.arange(n - 1, L - 1)
    cols = [y[ks - j] for j in range(n)] + [u[ks - j] for j in range(1, n)] + [u[ks]]
    return np.column_stack(cols), y[ks + 1]


def identify(record: DataRecord, cfg: IdConfig) -> RegressionModel:
    """Ridge least-squares fit of the polynomial one-step predictor.

    Minimises ``sum (y_{t+1} - f(q_t, u_t))**2 + ridge * ||coefficients||**2``
    over every sample with full regressor history. Features are centred and
    scaled before the QR solve; the penalty stays on the raw coefficients.
    """
    exps = make_basis(cfg.n, cfg.degree, cfg.affine_in_u)
    Z, target = regression_data(record, cfg.n)
    X = _features(exps, Z)
    m, p = X.shape
    if m < p and cfg.ridge == 0:
        raise DataError(f"{m} usable samples for {p} features")

    const = np.all(exps == 0, axis=1)
    mean = np.where(const, 0.0, X.mean(axis=0))
    std = np.where(const, 1.0, X.std(axis=0))
    std = np.where(std > 0, std, 1.0)
    Xs = (X - mean) / std
    # raw coefficients c = T w for standardised coefficients w
    T = np.diag(1.0 / std)
    if const.any():
        k0 = int(np.flatnonzero(const)[0])
        T[k0, :] -= mean / std

    if cfg.ridge > 0:
        A = np.vstack([Xs, np.sqrt(cfg.ridge) * T])
        b = np.concatenate([target, np.zeros(p)])
    else:
        A, b = Xs, target
    Q, R, perm = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(A.shape) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    deficient = int(np.sum(diag <= tol))
    if deficient:
        raise ConditioningError(f"rank deficient regression: {deficient} of {p} features are not identifiable")
    w = np.empty(p)
    w[perm] = scipy.linalg.solve_triangular(R, Q.T @ b)
    coef = T @ w
    return RegressionModel(n=cfg.n, degree=cfg.degree, exponents=exps, coefficients=coef)


def one_step_residuals(model: RegressionModel, record: DataRecord) -> np.ndarray:
    Z, target = regression_data(record, model.n)
    return target - model.evaluate(Z)
