"""Per-round state transitions for DiNNO, DSGD, DSGT and the two references.

Robots only see each other through :class:`Message` objects produced by
:func:`exchange`; a message carries parameter-shaped vectors and nothing else.
Every round function takes a ``pmap`` (``map`` or an executor's ``map``) used
for the per-robot work; results are collected in robot order, and each robot
draws from its own RNG stream, so the outcome does not depend on ``pmap``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import EpochSampler, next_batch
from .graph import CommGraph
from .nn import FlatParams
from .optim import PrimalStepper, RhoSchedule

HEADER_BYTES = 8  # each serialized vector is prefixed by its length d


class MissingMessageError(RuntimeError):
    pass


@dataclass
class RobotState:
    id: int
    theta: np.ndarray
    fingerprint: str
    view: object
    rng: np.random.Generator
    stepper: PrimalStepper | None = None
    dual: np.ndarray | None = None
    tracker: np.ndarray | None = None
    grad_prev: np.ndarray | None = None
    sampler: EpochSampler = field(init=False, repr=False)
    cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.sampler = EpochSampler(self.rng)

    @property
    def params(self) -> FlatParams:
        return FlatParams(self.theta, self.fingerprint)

    def batch(self, batch_size: int | None):
        return next_batch(self.view, self.sampler, batch_size)


@dataclass(frozen=True)
class Message:
    sender: int
    vectors: tuple

    @property
    def nbytes(self) -> int:
        return sum(HEADER_BYTES + v.size * 8 for v in self.vectors)


@dataclass(frozen=True)
class DinnoConfig:
    B: int = 2
    rho: RhoSchedule = RhoSchedule(0.5, 0.003)
    batch_size: int | None = 64
    # exact mode: full-batch gradient steps of length 1/L on the primal objective
    exact: bool = False
    reset_optimizer_each_round: bool = True

    def __post_init__(self):
        if self.B < 1:
            raise ValueError(f"B must be >= 1, got {self.B}")


def exchange(states: list[RobotState], graph: CommGraph, payload) -> tuple[list[dict[int, Message]], list[int]]:
    """Round barrier: every robot sends ``payload(state)`` to each neighbor.

    Returns per-robot inboxes and per-robot bytes sent.
    """
    outgoing = [Message(s.id, tuple(payload(s))) for s in states]
    inboxes: list[dict[int, Message]] = [dict() for _ in states]
    sent = [0] * len(states)
    for i, nbrs in enumerate(graph.neighbors):
        for j in nbrs:
            inboxes[j][i] = outgoing[i]
            sent[i] += outgoing[i].nbytes
    return inboxes, sent


def _received(inbox: dict[int, Message], neighbors, slot: int = 0) -> list[np.ndarray]:
    missing = [j for j in neighbors if j not in inbox]
    if missing:
        raise MissingMessageError(f"no message from neighbors {missing}")
    return [inbox[j].vectors[slot] for j in neighbors]


def loss_and_grad(model, theta: np.ndarray, batch) -> tuple[float, np.ndarray]:
    tape = ad.Tape()
    t = tape.param(theta)
    loss = model.loss(t, batch)
    return float(loss.value), tape.backward(loss)[t]


def _mix(W: np.ndarray, i: int, neighbors, own: np.ndarray, received: list[np.ndarray]) -> np.ndarray:
    # fixed summation order: ascending node id, self included
    terms = sorted([(i, own)] + list(zip(neighbors, received)), key=lambda t: t[0])
    out = np.zeros_like(own)
    for j, v in terms:
        out = out + W[i, j] * v
    return out


# DiNNO -----------------------------------------------------------------------

def dinno_dual_update(dual: np.ndarray, theta_i: np.ndarray, neighbor_thetas: list[np.ndarray], rho: float) -> np.ndarray:
    disagreement = np.zeros_like(theta_i)
    for theta_j in neighbor_thetas:
        disagreement = disagreement + (theta_i - theta_j)
    return dual + rho * disagreement


def dinno_primal_objective(model, theta: ad.Var, dual: np.ndarray, theta_i: np.ndarray,
                           neighbor_thetas: list[np.ndarray], rho: float, batch) -> ad.Var:
    """loss + theta.p + rho * sum_j ||theta - (theta_i + theta_j) / 2||^2.

    The edge midpoints stand in for the auxiliary consensus variables, which
    are never stored. ``model=None`` means a zero loss.
    """
    tape = theta.tape
    obj = ad.dot(theta, tape.const(dual))
    if model is not None:
        obj = ad.add(model.loss(theta, batch), obj)
    if neighbor_thetas:
        penalty = None
        for theta_j in neighbor_thetas:
            term = ad.l2sq(ad.sub(theta, tape.const(0.5 * (theta_i + theta_j))))
            penalty = term if penalty is None else ad.add(penalty, term)
        obj = ad.add(obj, ad.scale(penalty, rho))
    return obj


def primal_smoothness(model, batch, rho: float, n_neighbors: int) -> float:
    return model.smoothness(batch) + 2.0 * rho * n_neighbors


def dinno_primal_approx(state: RobotState, model, dual: np.ndarray, neighbor_thetas: list[np.ndarray],
                        rho: float, cfg: DinnoConfig, k: int) -> np.ndarray:
    """B first-order steps on the primal objective, warm-started at theta_i^k."""
    if cfg.B < 1:
        raise ValueError("B must be >= 1")
    theta_k = state.theta
    psi = theta_k
    for _ in range(cfg.B):
        batch = state.batch(None if cfg.exact else cfg.batch_size)
        tape = ad.Tape()
        t = tape.param(psi)
        obj = dinno_primal_objective(model, t, dual, theta_k, neighbor_thetas, rho, batch)
        grad = tape.backward(obj)[t]
        if cfg.exact:
            key = ("L", rho, len(neighbor_thetas))
            if key not in state.cache:
                state.cache.clear()
                state.cache[key] = primal_smoothness(model, batch, rho, len(neighbor_thetas))
            psi = psi - grad / state.cache[key]
        else:
            psi = state.stepper.step(psi, grad, k)
    return psi


def dinno_round(states: list[RobotState], graph: CommGraph, model, cfg: DinnoConfig, k: int, pmap=map) -> list[int]:
    rho = cfg.rho.value(k)
    inboxes, sent = exchange(states, graph, lambda s: (s.theta,))

    def update(i):
        s = states[i]
        nbrs = graph.neighbors[i]
        received = _received(inboxes[i], nbrs)
        dual = dinno_dual_update(s.dual, s.theta, received, rho)
        if cfg.reset_optimizer_each_round and s.stepper is not None:
            s.stepper.reset()
        return dual, dinno_primal_approx(s, model, dual, received, rho, cfg, k)

    results = list(pmap(update, range(len(states))))
    for s, (dual, theta) in zip(states, results):
        s.dual, s.theta = dual, theta
    return sent


# DSGD ------------------------------------------------------------------------

def dsgd_round(states: list[RobotState], graph: CommGraph, W: np.ndarray, model, alpha: float,
               batch_size: int | None, pmap=map) -> list[int]:
    inboxes, sent = exchange(states, graph, lambda s: (s.theta,))

    def update(i):
        s = states[i]
        nbrs = graph.neighbors[i]
        mixed = _mix(W, i, nbrs, s.theta, _received(inboxes[i], nbrs))
        _, g = loss_and_grad(model, s.theta, s.batch(batch_size))
        return mixed - alpha * g

    for s, theta in zip(states, list(pmap(update, range(len(states))))):
        s.theta = theta
    return sent


# DSGT ------------------------------------------------------------------------

def dsgt_init(states: list[RobotState], model, batch_size: int | None):
    """y_i^0 = g(theta_i^0); the gradient is cached for the first tracking update."""
    for s in states:
        _, g = loss_and_grad(model, s.theta, s.batch(batch_size))
        s.tracker = g
        s.grad_prev = g


def dsgt_round(states: list[RobotState], graph: CommGraph, W: np.ndarray, model, alpha: float,
               batch_size: int | None, pmap=map) -> list[int]:
    if any(s.tracker is None for s in states):
        dsgt_init(states, model, batch_size)
    inboxes, sent = exchange(states, graph, lambda s: (s.theta, s.tracker))

    def update(i):
        s = states[i]
        nbrs = graph.neighbors[i]
        thetas = _received(inboxes[i], nbrs, 0)
        trackers = _received(inboxes[i], nbrs, 1)
        stepped = [t - alpha * y for t, y in zip(thetas, trackers)]
        theta_new = _mix(W, i, nbrs, s.theta - alpha * s.tracker, stepped)
        _, g_new = loss_and_grad(model, theta_new, s.batch(batch_size))
        y_new = _mix(W, i, nbrs, s.tracker, trackers) + g_new - s.grad_prev
        return theta_new, y_new, g_new

    for s, (theta, y, g) in zip(states, list(pmap(update, range(len(states))))):
        s.theta, s.tracker, s.grad_prev = theta, y, g
    return sent


# references ------------------------------------------------------------------

def _local_steps(state: RobotState, model, steps: int, batch_size: int | None, k: int):
    if len(state.view.current()) == 0:
        raise ValueError(f"robot {state.id} has an empty dataset")
    psi = state.theta
    for _ in range(steps):
        _, g = loss_and_grad(model, psi, state.batch(batch_size))
        psi = state.stepper.step(psi, g, k)
    state.theta = psi


def centralized_round(state: RobotState, model, steps: int, batch_size: int | None, k: int):
    """A single model trained on the union view; no communication."""
    _local_steps(state, model, steps, batch_size, k)


def local_only_round(states: list[RobotState], model, steps: int, batch_size: int | None, k: int, pmap=map):
    def update(i):
        _local_steps(states[i], model, steps, batch_size, k)

    list(pmap(update, range(len(states))))
