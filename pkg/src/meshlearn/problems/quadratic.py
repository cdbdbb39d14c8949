"""Strongly convex least-squares suite with a dense-solve optimum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..data import Dataset


class QuadraticModel:
    """Loss 0.5 * ||A theta - b||^2 on a batch (A rows, b entries); a sum, not a mean."""

    def __init__(self, dim: int):
        self.dim = dim
        self.fingerprint = f"quadratic-{dim}"

    def loss(self, theta: ad.Var, batch) -> ad.Var:
        a, b = batch
        if len(a) == 0:
            raise ValueError("empty batch")
        tape = theta.tape
        r = ad.sub(ad.matmul(tape.const(a), theta), tape.const(b))
        return ad.scale(ad.l2sq(r), 0.5)

    def predict(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        return x @ theta

    def smoothness(self, batch) -> float:
        a, _ = batch
        return float(np.linalg.eigvalsh(a.T @ a)[-1])


@dataclass(frozen=True)
class QuadraticProblem:
    A: tuple
    b: tuple
    theta_star: np.ndarray

    @property
    def n(self) -> int:
        return len(self.A)

    @property
    def dim(self) -> int:
        return self.A[0].shape[1]

    def datasets(self) -> list[Dataset]:
        return [Dataset(a, b) for a, b in zip(self.A, self.b)]

    def smoothness(self, i: int) -> float:
        return float(np.linalg.eigvalsh(self.A[i].T @ self.A[i])[-1])

    def strong_convexity(self, i: int) -> float:
        return float(np.linalg.eigvalsh(self.A[i].T @ self.A[i])[0])

    def residual(self, theta: np.ndarray) -> float:
        h = sum(a.T @ a for a in self.A)
        r = sum(a.T @ b for a, b in zip(self.A, self.b))
        return float(np.linalg.norm(h @ theta - r))

    def total_loss(self, theta: np.ndarray) -> float:
        return float(sum(0.5 * np.sum((a @ theta - b) ** 2) for a, b in zip(self.A, self.b)))

    @classmethod
    def from_arrays(cls, A, b) -> "QuadraticProblem":
        A = tuple(np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in A)
        b = tuple(np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in b)
        h = sum(a.T @ a for a in A)
        r = sum(a.T @ v for a, v in zip(A, b))
        try:
            theta_star = np.linalg.solve(h, r)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("singular normal equations; re-seed the suite") from exc
        return cls(A, b, theta_star)


def make_quadratic_suite(n: int, d: int, m: int, seed: int, cond_cap: float | None = None,
                         scale: float = 3.0) -> QuadraticProblem:
    """Random per-robot least squares with A_i entries N(0, scale^2 / m), b_i ~ N(0, 1).

    With ``cond_cap`` the singular values of each A_i are clipped from below so
    that cond(A_i^T A_i) <= cond_cap.
    """
    if m < d:
        raise ValueError("need m >= d for strongly convex local objectives")
    rng = np.random.default_rng(seed)
    A, b = [], []
    for _ in range(n):
        a = rng.normal(size=(m, d)) * (scale / np.sqrt(m))
        if cond_cap is not None:
            u, s, vt = np.linalg.svd(a, full_matrices=False)
            s = np.maximum(s, s[0] / np.sqrt(cond_cap))
            a = (u * s) @ vt
        A.append(a)
        b.append(rng.normal(size=m))
    return QuadraticProblem.from_arrays(A, b)
