"""First-order steppers and the round-indexed schedules that drive them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import FlatParams


def lr_log_interp(k: int, lr_hi: float, lr_lo: float, K: int) -> float:
    """Log-linear interpolation from lr_hi at k=0 to lr_lo at k=K (clamped past K)."""
    if not lr_hi >= lr_lo > 0:
        raise ValueError("need lr_hi >= lr_lo > 0")
    if K <= 0 or k >= K:
        return lr_lo if k >= K else lr_hi
    if k <= 0:
        return lr_hi
    return math.exp(math.log(lr_hi) + (k / K) * (math.log(lr_lo) - math.log(lr_hi)))


def dsgd_alpha(k: int, alpha0: float, mu: float) -> float:
    """Step size after k applications of a <- a * (1 - mu * a)."""
    if alpha0 <= 0 or mu < 0:
        raise ValueError("need alpha0 > 0 and mu >= 0")
    a = alpha0
    for _ in range(k):
        a = a * (1.0 - mu * a)
    return a


@dataclass(frozen=True)
class StepSizeSchedule:
    kind: str = "constant"  # constant | log_interp | dsgd_decay
    lr: float = 1e-3
    lr_lo: float = 1e-4
    horizon: int = 1
    mu: float = 0.0
    _cache: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("constant", "log_interp", "dsgd_decay"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.kind == "log_interp" and not self.lr >= self.lr_lo > 0:
            raise ValueError("log_interp needs lr >= lr_lo > 0")
        if self.kind == "dsgd_decay" and self.mu < 0:
            raise ValueError("mu must be >= 0")

    def value(self, k: int) -> float:
        if self.kind == "constant":
            return self.lr
        if self.kind == "log_interp":
            return lr_log_interp(k, self.lr, self.lr_lo, self.horizon)
        # memoized recurrence; values are identical to dsgd_alpha(k, ...)
        cache = self._cache
        if not cache:
            cache.append(self.lr)
        while len(cache) <= k:
            a = cache[-1]
            cache.append(a * (1.0 - self.mu * a))
        return cache[k]


@dataclass(frozen=True)
class RhoSchedule:
    rho0: float = 1.0
    growth: float = 0.0

    def __post_init__(self):
        if self.rho0 <= 0:
            raise ValueError("rho0 must be positive")
        if self.growth < 0:
            raise ValueError("rho growth must be >= 0")

    def value(self, k: int) -> float:
        return self.rho0 * (1.0 + self.growth) ** k


def rho_value(k: int, rho0: float = 0.5, growth: float = 0.003) -> float:
    return RhoSchedule(rho0, growth).value(k)


class PrimalStepper:
    """SGD or Adam on a flat vector. Adam bias correction uses the stepper's
    own step count, not the communication round."""

    def __init__(self, kind: str = "adam", schedule: StepSizeSchedule | None = None,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown stepper kind {kind!r}")
        self.kind = kind
        self.schedule = schedule or StepSizeSchedule("constant", 1e-3)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None
        self.t = 0

    def reset(self):
        self.m = self.v = None
        self.t = 0

    def step(self, params, grad, k: int = 0, lr: float | None = None):
        wrap = isinstance(params, FlatParams)
        theta = params.theta if wrap else np.asarray(params)
        g = grad.theta if isinstance(grad, FlatParams) else np.asarray(grad)
        if g.shape != theta.shape:
            raise ValueError(f"gradient dimension {g.shape} does not match params {theta.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
        lr = self.schedule.value(k) if lr is None else lr

        if self.kind == "sgd":
            new = theta - lr * g
        else:
            if self.m is None:
                self.m = np.zeros_like(theta)
                self.v = np.zeros_like(theta)
            elif self.m.shape != theta.shape:
                raise ValueError("moment state dimension does not match params")
            self.t += 1
            self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
            self.v = self.beta2 * self.v + (1.0 - self.beta2) * (g * g)
            m_hat = self.m / (1.0 - self.beta1 ** self.t)
            v_hat = self.v / (1.0 - self.beta2 ** self.t)
            new = theta - lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params.replace(new) if wrap else new
