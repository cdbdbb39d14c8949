"""Experiment configuration: YAML schema, validation and bundled presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .nn import INIT_SCHEMES, ArchError, ModelArch

SCHEMA_VERSION = 1
ALGORITHMS = ("dinno", "dsgd", "dsgt", "centralized", "local_only")
PROBLEMS = ("quadratic", "classification", "mapping")
TOPOLOGIES = ("complete", "cycle", "path", "erdos_renyi", "edges", "proximity")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class ProblemConfig:
    kind: str = ""
    # quadratic
    dim: int = 20
    rows: int = 40
    cond_cap: float | None = None
    entry_scale: float = 3.0
    # classification
    source: str = "digits_subset"
    num_classes: int = 10
    samples_per_class: int | None = None
    input_dim: int = 64
    noise: float = 0.3
    val_fraction: float = 0.2
    # mapping
    map_file: str | None = None
    scans_per_trajectory: int = 400
    num_rays: int = 64
    max_range: float = 8.0
    samples_per_ray: int = 4
    val_poses: int = 100
    window: int = 400
    scans_per_round: int = 5


@dataclass
class ModelConfig:
    hidden: list = field(default_factory=lambda: [[64, "relu"], [64, "relu"]])
    output: list = field(default_factory=lambda: [10, "log_softmax"])
    loss: str = "nll"
    sin_omega: float = 30.0
    init: str = "kaiming-uniform"


@dataclass
class AlgorithmConfig:
    name: str = ""
    B: int = 2
    rho0: float = 0.5
    rho_growth: float = 0.003
    optimizer: str = "adam"
    lr_schedule: str = "log_interp"
    lr: float = 0.005
    lr_lo: float = 0.0005
    batch_size: int | None = 64
    exact_primal: bool = False
    reset_optimizer_each_round: bool = True
    dsgd_alpha0: float = 0.005
    dsgd_mu: float = 0.001
    dsgt_alpha: float = 0.005
    baseline_batch_size: int | None = None


@dataclass
class TopologyConfig:
    kind: str = "cycle"
    p: float = 0.3
    edges: list = field(default_factory=list)
    radius: float = 0.8


@dataclass
class PartitionConfig:
    mode: str = "heterogeneous"


@dataclass
class RunConfig:
    robots: int = 0
    rounds: int = -1
    log_interval: int = 10
    data_seed: int = 0
    init_seed: int = 0
    stream_seed: int = 1
    workers: int = 1
    out_dir: str | None = None
    checkpoint_interval: int = 0


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def arch(self) -> ModelArch | None:
        if self.problem.kind == "quadratic":
            return None
        in_dim = 2 if self.problem.kind == "mapping" else self.problem.input_dim
        return ModelArch(in_dim, tuple(tuple(h) for h in self.model.hidden), tuple(self.model.output),
                         self.model.loss, self.model.sin_omega)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


SECTIONS = {
    "problem": ProblemConfig,
    "model": ModelConfig,
    "algorithm": AlgorithmConfig,
    "topology": TopologyConfig,
    "partition": PartitionConfig,
    "run": RunConfig,
}
REQUIRED = [("problem", "kind"), ("algorithm", "name"), ("run", "robots"), ("run", "rounds")]


def _type_ok(value, default, annotation: str) -> bool:
    if value is None:
        return "None" in annotation
    if isinstance(default, bool) or annotation.startswith("bool"):
        return isinstance(value, bool)
    if annotation.startswith("int"):
        return isinstance(value, int) and not isinstance(value, bool)
    if annotation.startswith("float"):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if annotation.startswith("str"):
        return isinstance(value, str)
    if annotation.startswith("list"):
        return isinstance(value, list)
    return True


def from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    """Build and validate; raises ConfigError listing every violation."""
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a mapping"])
    if "schema_version" not in raw:
        errors.append("missing required key 'schema_version'")
    elif raw["schema_version"] != SCHEMA_VERSION:
        errors.append(f"unsupported schema_version {raw['schema_version']!r} (expected {SCHEMA_VERSION})")
    for key in raw:
        if key != "schema_version" and key not in SECTIONS:
            errors.append(f"unknown section '{key}'")

    cfg = ExperimentConfig()
    for name, cls in SECTIONS.items():
        section = raw.get(name) or {}
        if not isinstance(section, dict):
            errors.append(f"section '{name}' must be a mapping")
            continue
        target = getattr(cfg, name)
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key, value in section.items():
            if key not in fields:
                errors.append(f"unknown key '{name}.{key}'")
                continue
            if not _type_ok(value, getattr(target, key), str(fields[key].type)):
                errors.append(f"'{name}.{key}' has wrong type: {value!r}")
                continue
            setattr(target, key, value)
    for sec, key in REQUIRED:
        if key not in (raw.get(sec) or {}):
            errors.append(f"missing required key '{sec}.{key}'")
    try:
        errors += validate(cfg)
    except (TypeError, ValueError) as exc:  # already-reported type errors can trip later checks
        errors.append(f"validation aborted: {exc}")
    if errors:
        raise ConfigError(errors)
    return cfg


def validate(cfg: ExperimentConfig) -> list[str]:
    errors = []
    p, a, t, r = cfg.problem, cfg.algorithm, cfg.topology, cfg.run
    if p.kind not in PROBLEMS:
        errors.append(f"problem.kind must be one of {PROBLEMS}")
    if a.name not in ALGORITHMS:
        errors.append(f"algorithm.name must be one of {ALGORITHMS}")
    if a.B < 1:
        errors.append(f"algorithm.B must be >= 1 (got {a.B})")
    if a.rho0 <= 0:
        errors.append("algorithm.rho0 must be > 0")
    if a.rho_growth < 0:
        errors.append("algorithm.rho_growth must be >= 0")
    if a.optimizer not in ("adam", "sgd"):
        errors.append("algorithm.optimizer must be adam or sgd")
    if a.lr_schedule not in ("constant", "log_interp"):
        errors.append("algorithm.lr_schedule must be constant or log_interp")
    if a.lr <= 0 or a.lr_lo <= 0 or (a.lr_schedule == "log_interp" and a.lr < a.lr_lo):
        errors.append("learning rates must be positive with lr >= lr_lo")
    for key in ("batch_size", "baseline_batch_size"):
        v = getattr(a, key)
        if v is not None and v < 1:
            errors.append(f"algorithm.{key} must be >= 1 or null")
    if a.dsgd_alpha0 <= 0 or a.dsgd_mu < 0 or a.dsgt_alpha < 0:
        errors.append("dsgd_alpha0 must be > 0, dsgd_mu >= 0, dsgt_alpha >= 0")
    if a.exact_primal and p.kind != "quadratic":
        errors.append("algorithm.exact_primal needs a quadratic problem (smoothness constant)")
    if t.kind not in TOPOLOGIES:
        errors.append(f"topology.kind must be one of {TOPOLOGIES}")
    if (p.kind == "mapping") != (t.kind == "proximity"):
        errors.append("the mapping problem uses (and only it uses) the proximity topology")
    if not 0 <= t.p <= 1:
        errors.append("topology.p must lie in [0, 1]")
    if t.radius <= 0:
        errors.append("topology.radius must be > 0")
    if cfg.partition.mode not in ("heterogeneous", "homogeneous"):
        errors.append("partition.mode must be heterogeneous or homogeneous")
    if r.robots < 1:
        errors.append("run.robots must be >= 1")
    if r.rounds < 0:
        errors.append("run.rounds must be >= 0")
    if r.log_interval < 1:
        errors.append("run.log_interval must be >= 1")
    if r.workers < 1:
        errors.append("run.workers must be >= 1")
    if r.checkpoint_interval < 0:
        errors.append("run.checkpoint_interval must be >= 0")
    if cfg.model.init not in INIT_SCHEMES:
        errors.append(f"model.init must be one of {INIT_SCHEMES}")
    if p.kind in ("classification", "mapping"):
        try:
            arch = cfg.arch()
        except (ArchError, TypeError, ValueError, IndexError) as exc:
            errors.append(f"model: {exc}")
        else:
            if p.kind == "classification" and (arch.output[0] != p.num_classes or arch.loss_kind != "nll"):
                errors.append("classification needs an nll model with one output per class")
            if p.kind == "mapping" and (arch.output[0] != 1 or arch.loss_kind != "bce"):
                errors.append("mapping needs a single-output bce model")
    if p.kind == "quadratic" and p.rows < p.dim:
        errors.append("quadratic problem needs rows >= dim")
    if p.kind == "mapping" and (p.window < 1 or p.scans_per_round < 1):
        errors.append("mapping window and scans_per_round must be >= 1")
    return errors


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([f"cannot parse {path}: {exc}"]) from exc
    return from_dict(raw)


def paper_defaults(name: str) -> dict:
    """Raw config dicts for the bundled experiment presets."""
    if name == "mnist-like":
        return {
            "schema_version": SCHEMA_VERSION,
            "problem": {"kind": "classification", "source": "digits_subset", "num_classes": 10, "input_dim": 64},
            "model": {"hidden": [[64, "relu"], [64, "relu"]], "output": [10, "log_softmax"], "loss": "nll"},
            "algorithm": {"name": "dinno", "B": 2, "rho0": 0.5, "rho_growth": 0.003, "optimizer": "adam",
                          "lr_schedule": "log_interp", "lr": 0.005, "lr_lo": 0.0005, "batch_size": 64,
                          "dsgd_alpha0": 0.005, "dsgd_mu": 0.001, "dsgt_alpha": 0.005},
            "topology": {"kind": "cycle"},
            "partition": {"mode": "heterogeneous"},
            "run": {"robots": 10, "rounds": 1000, "log_interval": 50},
        }
    if name == "mapping":
        return {
            "schema_version": SCHEMA_VERSION,
            "problem": {"kind": "mapping", "scans_per_trajectory": 400, "window": 400, "scans_per_round": 5},
            "model": {"hidden": [[256, "sin"], [64, "relu"], [64, "relu"], [64, "relu"]], "output": [1, "sigmoid"],
                      "loss": "bce", "sin_omega": 10.0},
            "algorithm": {"name": "dinno", "B": 5, "rho0": 0.1, "rho_growth": 0.003, "optimizer": "adam",
                          "lr_schedule": "log_interp", "lr": 0.001, "lr_lo": 0.0001, "batch_size": 1000,
                          "baseline_batch_size": 2000, "dsgd_alpha0": 0.001, "dsgd_mu": 0.001,
                          "dsgt_alpha": 0.001},
            "topology": {"kind": "proximity", "radius": 0.8},
            "run": {"robots": 3, "rounds": 300, "log_interval": 25},
        }
    if name == "theorem1":
        return {
            "schema_version": SCHEMA_VERSION,
            "problem": {"kind": "quadratic", "dim": 20, "rows": 40},
            "algorithm": {"name": "dinno", "B": 20, "rho0": 1.0, "rho_growth": 0.0, "exact_primal": True,
                          "batch_size": None},
            "topology": {"kind": "cycle"},
            "run": {"robots": 5, "rounds": 500, "log_interval": 10},
        }
    raise ConfigError([f"unknown preset {name!r} (choose mnist-like, mapping, theorem1)"])


def merge(base: dict, override: dict) -> dict:
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in base.items()}
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = v
    return out
