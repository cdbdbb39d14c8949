"""Experiment driver: builds robots from a config and runs the round loop.

Per round: refresh the graph (time-varying problems), exchange messages and
count bytes, apply the algorithm update, advance streaming windows, then log
metrics every ``log_interval`` rounds.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import algos
from .algos import RobotState
from .autodiff import NonFiniteError
from .config import ExperimentConfig
from .data import Dataset, StaticView, StreamWindow, UnionView
from .graph import CommGraph, DisconnectedGraphError, build_topology, metropolis_weights, proximity_graph
from .nn import MLP, FlatParams, init_params
from .optim import PrimalStepper, RhoSchedule, StepSizeSchedule
from .problems.classification import make_classification_suite
from .problems.mapping import load_grid_map, make_mapping_suite
from .problems.quadratic import QuadraticModel, make_quadratic_suite

log = logging.getLogger(__name__)

CSV_HEADER = ["round", "robot", "train_loss", "val_loss", "val_acc", "consensus_err", "bytes_sent", "rho", "lr"]


class RunError(RuntimeError):
    pass


# partitioning ----------------------------------------------------------------

@dataclass(frozen=True)
class PartitionPlan:
    mode: str
    assignment: np.ndarray  # sample index -> robot id
    n_robots: int

    def shards(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.assignment == i) for i in range(self.n_robots)]


def partition(labels: np.ndarray, mode: str, n: int, seed: int) -> PartitionPlan:
    """Heterogeneous: robot i owns classes c with c % n == i; when robots
    outnumber classes, robots sharing a class split it round-robin.
    Homogeneous: shuffle, then deal round-robin."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot partition an empty dataset")
    rng = np.random.default_rng(seed)
    assignment = np.empty(labels.size, dtype=int)
    if mode == "homogeneous":
        perm = rng.permutation(labels.size)
        assignment[perm] = np.arange(labels.size) % n
    elif mode == "heterogeneous":
        classes = np.unique(labels)
        for ci, c in enumerate(classes):
            idx = np.flatnonzero(labels == c)
            owners = [i for i in range(n) if i % len(classes) == ci] if n > len(classes) else [ci % n]
            idx = idx[rng.permutation(idx.size)]
            assignment[idx] = np.array(owners)[np.arange(idx.size) % len(owners)]
    else:
        raise ValueError(f"unknown partition mode {mode!r}")
    return PartitionPlan(mode, assignment, n)


# metrics ---------------------------------------------------------------------

@dataclass
class MetricsRow:
    round: int
    robot: int
    train_loss: float
    val_loss: float
    val_acc: float
    consensus_err: float
    bytes_sent: int
    rho: float
    lr: float


def consensus_error(thetas: list[np.ndarray], graph: CommGraph) -> float:
    """max over edges of ||theta_i - theta_j|| / sqrt(d)."""
    if len(thetas) < 2:
        raise ValueError("consensus error needs at least two robots")
    d = thetas[0].size
    worst = 0.0
    for i, j in graph.sorted_edges():
        worst = max(worst, float(np.linalg.norm(thetas[i] - thetas[j])))
    return worst / math.sqrt(d)


def evaluate(model, theta: np.ndarray, val: Dataset, task: str, offset: float = 0.0) -> dict:
    """Mean validation loss; Top-1 accuracy (lowest index wins ties) for classification."""
    if len(val) == 0:
        raise ValueError("empty validation set")
    if task == "quadratic":
        loss = 0.5 * float(np.sum((val.x @ theta - val.y) ** 2)) - offset
        return {"loss": loss, "acc": math.nan}
    loss = float(np.mean(model.per_sample_loss(theta, (val.x, val.y))))
    acc = math.nan
    if task == "classification":
        pred = np.argmax(model.predict(theta, val.x), axis=1)
        acc = float(np.mean(pred == val.y))
    return {"loss": loss, "acc": acc}


def summarize(values) -> dict:
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    # clamp so identical entries give min == mean == max despite summation rounding
    return {"mean": min(max(math.fsum(v) / v.size, lo), hi), "min": lo, "max": hi}


def format_float(x: float) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.9g}"


def metrics_csv(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.round, r.robot, format_float(r.train_loss), format_float(r.val_loss), format_float(r.val_acc),
                    format_float(r.consensus_err), r.bytes_sent, format_float(r.rho), format_float(r.lr)])
    return buf.getvalue()


# environment -----------------------------------------------------------------

@dataclass
class Environment:
    task: str
    model: object
    views: list  # one per robot
    val: Dataset
    theta0: np.ndarray
    fingerprint: str
    static_graph: CommGraph | None = None
    positions: list | None = None  # mapping: per robot (T, 2)
    streams: list | None = None
    scans_per_round: int = 1
    val_offset: float = 0.0
    extra: dict = field(default_factory=dict)

    def graph_at(self, k: int, radius: float) -> CommGraph:
        if self.static_graph is not None:
            return self.static_graph
        pos = np.array([p[(k * self.scans_per_round) % len(p)] for p in self.positions])
        g = proximity_graph(pos, radius)
        if not g.is_connected():
            raise DisconnectedGraphError(f"proximity graph disconnected at round {k}")
        return g

    def advance_streams(self, k: int):
        """Feed the scans collected during round k (k = -1 preloads the first batch)."""
        if self.streams is None:
            return
        for view, stream in zip(self.views, self.streams):
            for s in range(self.scans_per_round):
                view.push(stream[((k + 1) * self.scans_per_round + s) % len(stream)])


def build_environment(cfg: ExperimentConfig) -> Environment:
    p, r, n = cfg.problem, cfg.run, cfg.run.robots
    topo = cfg.topology
    static = None
    if topo.kind != "proximity":
        static = build_topology(topo.kind, n, seed=r.data_seed, p=topo.p, edges=topo.edges)

    if p.kind == "quadratic":
        prob = make_quadratic_suite(n, p.dim, p.rows, r.data_seed, p.cond_cap, p.entry_scale)
        model = QuadraticModel(p.dim)
        theta0 = np.random.default_rng(r.init_seed).normal(size=p.dim)
        val = Dataset.concat(prob.datasets())
        env = Environment("quadratic", model, [StaticView(d) for d in prob.datasets()], val, theta0,
                          model.fingerprint, static, val_offset=prob.total_loss(prob.theta_star))
        env.extra["problem"] = prob
        return env

    arch = cfg.arch()
    model = MLP(arch)
    theta0 = init_params(arch, r.init_seed, cfg.model.init).theta
    if p.kind == "classification":
        suite = make_classification_suite(p.num_classes, p.samples_per_class, p.input_dim, r.data_seed,
                                          p.source, p.noise, p.val_fraction)
        plan = partition(suite.train.y, cfg.partition.mode, n, r.data_seed)
        views = [StaticView(suite.train.take(idx)) for idx in plan.shards()]
        env = Environment("classification", model, views, suite.val, theta0, arch.fingerprint, static)
        env.extra["suite"] = suite
        env.extra["plan"] = plan
        return env

    grid = load_grid_map(p.map_file)
    suite = make_mapping_suite(grid, n, None, p.scans_per_trajectory, r.data_seed, p.num_rays, p.max_range,
                               p.samples_per_ray, p.val_poses)
    views = [StreamWindow(p.window) for _ in range(n)]
    env = Environment("mapping", model, views, suite.val, theta0, arch.fingerprint, static,
                      positions=suite.positions, streams=suite.streams, scans_per_round=p.scans_per_round)
    env.extra["suite"] = suite
    env.advance_streams(-1)
    return env


# driver ----------------------------------------------------------------------

@dataclass
class RunResult:
    rows: list[MetricsRow]
    thetas: list[np.ndarray]
    states: list[RobotState]
    env: Environment
    bytes_per_round: list[list[int]]

    def csv(self) -> str:
        return metrics_csv(self.rows)


def _lr_schedule(cfg: ExperimentConfig) -> StepSizeSchedule:
    a = cfg.algorithm
    if a.lr_schedule == "log_interp":
        return StepSizeSchedule("log_interp", a.lr, a.lr_lo, max(cfg.run.rounds, 1))
    return StepSizeSchedule("constant", a.lr)


def _make_states(cfg: ExperimentConfig, env: Environment) -> list[RobotState]:
    a = cfg.algorithm
    streams = np.random.SeedSequence(cfg.run.stream_seed).spawn(cfg.run.robots)
    sched = _lr_schedule(cfg)
    if a.name == "centralized":
        view = UnionView(env.views)
        return [RobotState(0, env.theta0.copy(), env.fingerprint, view, np.random.default_rng(streams[0]),
                           stepper=PrimalStepper(a.optimizer, sched))]
    states = []
    for i, view in enumerate(env.views):
        s = RobotState(i, env.theta0.copy(), env.fingerprint, view, np.random.default_rng(streams[i]),
                       stepper=PrimalStepper(a.optimizer, sched))
        if a.name == "dinno":
            s.dual = np.zeros_like(env.theta0)
        states.append(s)
    return states


def write_checkpoint(out_dir: Path, k: int, states: list[RobotState]):
    ck = Path(out_dir) / "checkpoints"
    ck.mkdir(parents=True, exist_ok=True)
    for s in states:
        (ck / f"round_{k:06d}_robot_{s.id:03d}.bin").write_bytes(FlatParams(s.theta, s.fingerprint).to_bytes())


def run_experiment(cfg: ExperimentConfig, workers: int | None = None, out_dir=None, env: Environment | None = None,
                   observer=None) -> RunResult:
    """Run ``cfg.run.rounds`` rounds. ``observer(k, states)``, if given, is
    called after every round with the number of completed rounds."""
    a, r = cfg.algorithm, cfg.run
    workers = workers or r.workers
    out_dir = out_dir if out_dir is not None else r.out_dir
    env = env or build_environment(cfg)
    states = _make_states(cfg, env)
    model = env.model
    K = r.rounds
    rho = RhoSchedule(a.rho0, a.rho_growth)
    dinno_cfg = algos.DinnoConfig(a.B, rho, a.batch_size, a.exact_primal, a.reset_optimizer_each_round)
    baseline_bs = a.baseline_batch_size if a.baseline_batch_size is not None else a.batch_size
    dsgd_alpha = StepSizeSchedule("dsgd_decay", a.dsgd_alpha0, mu=a.dsgd_mu)
    lr_sched = _lr_schedule(cfg)

    rows: list[MetricsRow] = []
    cumulative = [0] * len(states)
    bytes_per_round: list[list[int]] = []

    def schedule_values(k):
        rho_k = rho.value(k) if a.name == "dinno" else math.nan
        if a.name == "dsgd":
            lr_k = dsgd_alpha.value(k)
        elif a.name == "dsgt":
            lr_k = a.dsgt_alpha
        elif a.exact_primal:
            lr_k = math.nan
        else:
            lr_k = lr_sched.value(k)
        return rho_k, lr_k

    def log_round(k, graph):
        thetas = [s.theta for s in states]
        cons = consensus_error(thetas, graph) if len(states) > 1 else 0.0
        rho_k, lr_k = schedule_values(k)
        for s in states:
            local = s.view.current()
            train = evaluate(model, s.theta, local, env.task)["loss"] if env.task != "quadratic" else \
                0.5 * float(np.sum((local.x @ s.theta - local.y) ** 2))
            val = evaluate(model, s.theta, env.val, env.task, env.val_offset)
            rows.append(MetricsRow(k, s.id, train, val["loss"], val["acc"], cons, cumulative[s.id], rho_k, lr_k))

    def dump_and_fail(k, exc):
        if out_dir is not None:
            write_checkpoint(Path(out_dir) / "failure", k, states)
        raise RunError(f"round {k}: {exc}") from exc

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    pmap = pool.map if pool is not None else map
    try:
        graph = env.graph_at(0, cfg.topology.radius)
        log_round(0, graph)
        if a.name == "dsgt":
            algos.dsgt_init(states, model, baseline_bs)
        for k in range(K):
            try:
                graph = env.graph_at(k, cfg.topology.radius)
            except DisconnectedGraphError as exc:
                raise RunError(f"round {k}: communication graph is disconnected") from exc
            try:
                if a.name == "dinno":
                    sent = algos.dinno_round(states, graph, model, dinno_cfg, k, pmap)
                elif a.name == "dsgd":
                    sent = algos.dsgd_round(states, graph, metropolis_weights(graph), model, dsgd_alpha.value(k),
                                            baseline_bs, pmap)
                elif a.name == "dsgt":
                    sent = algos.dsgt_round(states, graph, metropolis_weights(graph), model, a.dsgt_alpha,
                                            baseline_bs, pmap)
                elif a.name == "centralized":
                    algos.centralized_round(states[0], model, a.B, a.batch_size, k)
                    sent = [0]
                else:
                    algos.local_only_round(states, model, a.B, a.batch_size, k, pmap)
                    sent = [0] * len(states)
            except (NonFiniteError, FloatingPointError) as exc:
                dump_and_fail(k, exc)
            bytes_per_round.append(list(sent))
            cumulative = [c + b for c, b in zip(cumulative, sent)]
            env.advance_streams(k)
            if observer is not None:
                observer(k + 1, states)
            done = k + 1
            if done % r.log_interval == 0 or done == K:
                log_round(done, env.graph_at(done, cfg.topology.radius) if env.static_graph is None else graph)
            if out_dir is not None and r.checkpoint_interval and done % r.checkpoint_interval == 0:
                write_checkpoint(Path(out_dir), done, states)
            if any(not np.all(np.isfinite(s.theta)) for s in states):
                dump_and_fail(k, FloatingPointError("non-finite parameters"))
    finally:
        if pool is not None:
            pool.shutdown()

    result = RunResult(rows, [s.theta for s in states], states, env, bytes_per_round)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(result.csv(), encoding="utf-8", newline="")
        (out / "config.yaml").write_text(cfg.dump())
        write_checkpoint(out, K, states)
    return result
