"""Undirected communication graphs and the mixing matrices built on them."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np


class GraphError(ValueError):
    pass


class DisconnectedGraphError(GraphError):
    pass


@dataclass(frozen=True)
class CommGraph:
    n: int
    edges: frozenset

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "CommGraph":
        if n < 1:
            raise GraphError("graph needs at least one node")
        canon = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise GraphError(f"self-loop at node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"edge ({i}, {j}) out of range for n={n}")
            e = (min(i, j), max(i, j))
            if e in canon:
                raise GraphError(f"duplicate edge {e}")
            canon.add(e)
        return cls(n, frozenset(canon))

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return tuple(tuple(sorted(x)) for x in nbrs)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(x) for x in self.neighbors])

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def laplacian(self) -> np.ndarray:
        a = self.adjacency()
        return np.diag(a.sum(axis=1)) - a

    def is_connected(self) -> bool:
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in self.neighbors[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.n


def complete_graph(n: int) -> CommGraph:
    return CommGraph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def cycle_graph(n: int) -> CommGraph:
    if n <= 2:
        return complete_graph(n)
    return CommGraph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def path_graph(n: int) -> CommGraph:
    return CommGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def erdos_renyi_graph(n: int, p: float, seed: int, max_retries: int = 200) -> CommGraph:
    """G(n, p), resampled from the same stream until connected."""
    if not 0.0 <= p <= 1.0:
        raise GraphError("edge probability must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    for _ in range(max_retries):
        keep = rng.random(iu.size) < p
        g = CommGraph.from_edges(n, zip(iu[keep].tolist(), ju[keep].tolist()))
        if g.is_connected():
            return g
    raise DisconnectedGraphError(f"no connected G({n}, {p}) within {max_retries} draws")


def proximity_graph(positions: np.ndarray, radius: float) -> CommGraph:
    """Edge between every pair closer than ``radius``. Connectivity is not enforced."""
    if radius <= 0:
        raise GraphError("radius must be positive")
    pos = np.asarray(positions, dtype=np.float64)
    n = len(pos)
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    return CommGraph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n) if dist[i, j] < radius])


def build_topology(kind: str, n: int, seed: int = 0, *, p: float = 0.3, edges=None,
                   positions=None, radius: float = 1.0, max_retries: int = 200) -> CommGraph:
    if n < 1:
        raise GraphError("graph needs at least one node")
    if kind == "complete":
        g = complete_graph(n)
    elif kind == "cycle":
        g = cycle_graph(n)
    elif kind == "path":
        g = path_graph(n)
    elif kind == "erdos_renyi":
        g = erdos_renyi_graph(n, p, seed, max_retries)
    elif kind == "proximity":
        if positions is None:
            raise GraphError("proximity topology needs positions")
        g = proximity_graph(positions, radius)
    elif kind == "edges":
        g = CommGraph.from_edges(n, edges or [])
    else:
        raise GraphError(f"unknown topology {kind!r}")
    if not g.is_connected():
        raise DisconnectedGraphError(f"{kind} graph on {n} nodes is disconnected")
    return g


def metropolis_weights(g: CommGraph) -> np.ndarray:
    """w_ij = 1 / (1 + max(d_i, d_j)) on edges, diagonal takes the remainder."""
    deg = g.degrees
    w = np.zeros((g.n, g.n))
    for i, j in g.edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    w[np.diag_indices(g.n)] = 1.0 - w.sum(axis=1)
    return w


def fiedler_value(g: CommGraph) -> float:
    if g.n < 2:
        raise GraphError("algebraic connectivity needs at least two nodes")
    return float(np.linalg.eigvalsh(g.laplacian())[1])


def check_mixing_matrix(w: np.ndarray, g: CommGraph, tol: float = 1e-12) -> list[str]:
    """Empty list when W is symmetric, doubly stochastic, nonnegative and graph-conforming."""
    problems = []
    if w.shape != (g.n, g.n):
        return [f"shape {w.shape} != ({g.n}, {g.n})"]
    if np.any(w < 0):
        problems.append("negative entries")
    if not np.array_equal(w, w.T):
        problems.append("not symmetric")
    if np.max(np.abs(w.sum(axis=0) - 1)) > tol:
        problems.append("column sums differ from 1")
    if np.max(np.abs(w.sum(axis=1) - 1)) > tol:
        problems.append("row sums differ from 1")
    allowed = g.adjacency() + np.eye(g.n)
    if np.any((w != 0) & (allowed == 0)):
        problems.append("nonzero weight outside the graph")
    return problems
