"""Declarative MLPs over a single flat weight vector.

Every network in the package is an :class:`ModelArch` plus a
:class:`FlatParams`. The flat layout is layer-major; each layer stores its
``(fan_in, fan_out)`` weight matrix row-major followed by its bias.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

HIDDEN_ACTIVATIONS = ("relu", "sigmoid", "sin")
OUTPUT_HEADS = ("identity", "sigmoid", "log_softmax")
LOSS_KINDS = ("nll", "bce", "mse")
INIT_SCHEMES = ("kaiming-uniform", "uniform-fanin")

BCE_CLAMP = 1e-7


class ArchError(ValueError):
    pass


class FingerprintError(ValueError):
    pass


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelArch:
    input_dim: int
    hidden: tuple[tuple[int, str], ...]
    output: tuple[int, str]
    loss_kind: str
    # frequency factor applied to pre-activations of sin layers
    sin_omega: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple((int(w), str(a)) for w, a in self.hidden))
        object.__setattr__(self, "output", (int(self.output[0]), str(self.output[1])))
        if self.input_dim < 1:
            raise ArchError("input_dim must be >= 1")
        if not self.hidden:
            raise ArchError("at least one hidden layer is required")
        for width, act in self.hidden:
            if width < 1:
                raise ArchError(f"hidden width must be >= 1, got {width}")
            if act not in HIDDEN_ACTIVATIONS:
                raise ArchError(f"unknown activation {act!r}")
        width, head = self.output
        if width < 1:
            raise ArchError("output width must be >= 1")
        if head not in OUTPUT_HEADS:
            raise ArchError(f"unknown output head {head!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise ArchError(f"unknown loss kind {self.loss_kind!r}")
        if self.loss_kind == "nll" and head != "log_softmax":
            raise ArchError("nll loss needs a log_softmax head")
        if self.loss_kind == "bce" and head != "sigmoid":
            raise ArchError("bce loss needs a sigmoid head")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        widths = [self.input_dim] + [w for w, _ in self.hidden] + [self.output[0]]
        return list(zip(widths[:-1], widths[1:]))

    @property
    def activations(self) -> list[str]:
        return [a for _, a in self.hidden] + [self.output[1]]

    @property
    def dim(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_shapes)

    @property
    def fingerprint(self) -> str:
        return hashlib.sha1(repr(self).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class FlatParams:
    theta: np.ndarray
    fingerprint: str = field(default="")

    def __post_init__(self):
        if self.theta.ndim != 1:
            raise ValueError("theta must be a 1-D vector")

    @property
    def dim(self) -> int:
        return self.theta.size

    def check(self, other: "FlatParams"):
        if self.fingerprint != other.fingerprint:
            raise FingerprintError(f"layout mismatch: {self.fingerprint} vs {other.fingerprint}")

    def replace(self, theta: np.ndarray) -> "FlatParams":
        if theta.shape != self.theta.shape:
            raise ValueError(f"dimension mismatch: {theta.shape} vs {self.theta.shape}")
        return FlatParams(theta, self.fingerprint)

    def __add__(self, other: "FlatParams") -> "FlatParams":
        self.check(other)
        return FlatParams(self.theta + other.theta, self.fingerprint)

    def __sub__(self, other: "FlatParams") -> "FlatParams":
        self.check(other)
        return FlatParams(self.theta - other.theta, self.fingerprint)

    @staticmethod
    def average(items: list["FlatParams"]) -> "FlatParams":
        for p in items[1:]:
            items[0].check(p)
        return FlatParams(np.mean([p.theta for p in items], axis=0), items[0].fingerprint)

    def to_bytes(self) -> bytes:
        return struct.pack("<Q", self.dim) + self.theta.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes, fingerprint: str = "", expected_dim: int | None = None) -> "FlatParams":
        if len(buf) < 8:
            raise ValueError("truncated parameter blob")
        (d,) = struct.unpack("<Q", buf[:8])
        if len(buf) != 8 + 8 * d:
            raise ValueError(f"blob length {len(buf)} does not match d={d}")
        if expected_dim is not None and d != expected_dim:
            raise FingerprintError(f"blob has d={d}, architecture expects {expected_dim}")
        return cls(np.frombuffer(buf, dtype="<f8", offset=8).astype(np.float64), fingerprint)


def init_params(arch: ModelArch, seed: int, scheme: str = "kaiming-uniform") -> FlatParams:
    """Deterministic initial weights.

    kaiming-uniform: relu layers get U(+-sqrt(6/fan_in)), other layers
    U(+-sqrt(3/fan_in)). uniform-fanin: every layer U(+-1/sqrt(fan_in)).
    Under both schemes a sin layer gets U(+-1/fan_in) weights, the usual
    choice for a frequency-scaled first layer. Biases are U(+-1/sqrt(fan_in)).
    """
    if scheme not in INIT_SCHEMES:
        raise ArchError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    chunks = []
    for (fan_in, fan_out), act in zip(arch.layer_shapes, arch.activations):
        if act == "sin":
            bound = 1.0 / fan_in
        elif scheme == "kaiming-uniform":
            bound = np.sqrt((6.0 if act == "relu" else 3.0) / fan_in)
        else:
            bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        b = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-b, b, size=fan_out))
    return FlatParams(np.concatenate(chunks), arch.fingerprint)


def flatten(arch: ModelArch, layers: list[tuple[np.ndarray, np.ndarray]]) -> FlatParams:
    shapes = arch.layer_shapes
    if len(layers) != len(shapes):
        raise FingerprintError(f"expected {len(shapes)} layers, got {len(layers)}")
    chunks = []
    for (w, b), (fi, fo) in zip(layers, shapes):
        if w.shape != (fi, fo) or b.shape != (fo,):
            raise FingerprintError(f"layer shape {w.shape}/{b.shape} does not match ({fi}, {fo})")
        chunks += [np.ascontiguousarray(w).ravel(), b]
    return FlatParams(np.concatenate(chunks).astype(np.float64), arch.fingerprint)


def unflatten(arch: ModelArch, params: FlatParams) -> list[tuple[np.ndarray, np.ndarray]]:
    if params.fingerprint != arch.fingerprint:
        raise FingerprintError(f"params fingerprint {params.fingerprint!r} does not match arch {arch.fingerprint!r}")
    if params.dim != arch.dim:
        raise FingerprintError(f"params have d={params.dim}, arch expects {arch.dim}")
    out, off = [], 0
    for fi, fo in arch.layer_shapes:
        w = params.theta[off : off + fi * fo].reshape(fi, fo)
        off += fi * fo
        b = params.theta[off : off + fo]
        off += fo
        out.append((w, b))
    return out


def _activate_np(z: np.ndarray, act: str, omega: float) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if act == "sin":
        return np.sin(omega * z)
    if act == "log_softmax":
        s = z - z.max(axis=1, keepdims=True)
        return s - np.log(np.exp(s).sum(axis=1, keepdims=True))
    return z


def _activate(z: ad.Var, act: str, omega: float) -> ad.Var:
    if act == "relu":
        return ad.relu(z)
    if act == "sigmoid":
        return ad.sigmoid(z)
    if act == "sin":
        return ad.sin(ad.scale(z, omega))
    if act == "log_softmax":
        return ad.log_softmax(z)
    return z


class MLP:
    """An architecture bound to the loss machinery the algorithms call into."""

    def __init__(self, arch: ModelArch):
        self.arch = arch
        self.dim = arch.dim
        self.fingerprint = arch.fingerprint

    def forward(self, theta: ad.Var, x: np.ndarray) -> ad.Var:
        h = theta.tape.const(x)
        off = 0
        for (fi, fo), act in zip(self.arch.layer_shapes, self.arch.activations):
            w = ad.view(theta, off, (fi, fo))
            off += fi * fo
            b = ad.view(theta, off, (fo,))
            off += fo
            h = _activate(ad.add_bias(ad.matmul(h, w), b), act, self.arch.sin_omega)
        return h

    def predict(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        for (w, b), act in zip(unflatten(self.arch, FlatParams(theta, self.fingerprint)), self.arch.activations):
            h = _activate_np(h @ w + b, act, self.arch.sin_omega)
        return h

    def check_batch(self, batch):
        x, y = batch
        if len(x) == 0:
            raise ValueError("empty batch")
        if x.ndim != 2 or x.shape[1] != self.arch.input_dim:
            raise ad.ShapeError(f"inputs have shape {x.shape}, expected (n, {self.arch.input_dim})")
        kind, width = self.arch.loss_kind, self.arch.output[0]
        if kind == "nll":
            bad = np.flatnonzero((y < 0) | (y >= width) | (y != np.floor(y)))
            if bad.size:
                raise LabelError(f"class label {y[bad[0]]} out of range at batch index {bad[0]}")
        elif kind == "bce":
            bad = np.flatnonzero((y < 0) | (y > 1))
            if bad.size:
                raise LabelError(f"bce label {y.ravel()[bad[0]]} outside [0, 1] at batch index {bad[0]}")

    def _targets(self, y: np.ndarray) -> np.ndarray:
        n, width = len(y), self.arch.output[0]
        if self.arch.loss_kind == "nll":
            onehot = np.zeros((n, width))
            onehot[np.arange(n), y.astype(int)] = 1.0
            return onehot
        return np.asarray(y, dtype=np.float64).reshape(n, width)

    def loss(self, theta: ad.Var, batch) -> ad.Var:
        """Mean loss over the batch as a node on ``theta``'s tape."""
        self.check_batch(batch)
        x, y = batch
        n = len(x)
        try:
            out = self.forward(theta, x)
            return _loss_node(out, theta.tape.const(self._targets(y)), self.arch.loss_kind, n)
        except ad.NonFiniteError:
            idx = self._first_nonfinite(theta.value, batch)
            raise ad.NonFiniteError(f"non-finite loss at batch index {idx}") from None

    def per_sample_loss(self, theta: np.ndarray, batch) -> np.ndarray:
        x, y = batch
        out = self.predict(theta, x)
        t = self._targets(y)
        kind = self.arch.loss_kind
        with np.errstate(all="ignore"):
            if kind == "nll":
                return -(out * t).sum(axis=1)
            if kind == "bce":
                p = np.clip(out, BCE_CLAMP, 1 - BCE_CLAMP)
                return -(t * np.log(p) + (1 - t) * np.log(1 - p)).mean(axis=1)
            return ((out - t) ** 2).mean(axis=1)

    def _first_nonfinite(self, theta, batch) -> int:
        per = self.per_sample_loss(theta, batch)
        bad = np.flatnonzero(~np.isfinite(per))
        return int(bad[0]) if bad.size else -1


def _loss_node(out: ad.Var, target: ad.Var, kind: str, n: int) -> ad.Var:
    if kind == "nll":
        return ad.scale(ad.sum(ad.mul(out, target)), -1.0 / n)
    if kind == "bce":
        p = ad.clip(out, BCE_CLAMP, 1.0 - BCE_CLAMP)
        ones = out.tape.const(np.ones(out.shape))
        ll = ad.add(ad.mul(target, ad.log(p)), ad.mul(ad.sub(ones, target), ad.log(ad.sub(ones, p))))
        return ad.scale(ad.mean(ll), -1.0)
    return ad.mean(ad.square(ad.sub(out, target)))


def model_loss(arch: ModelArch, params: FlatParams, batch) -> tuple[float, FlatParams]:
    """Mean batch loss and its gradient with respect to the flat weights."""
    model = MLP(arch)
    if params.fingerprint != arch.fingerprint:
        raise FingerprintError("params do not belong to this architecture")
    tape = ad.Tape()
    theta = tape.param(params.theta)
    loss = model.loss(theta, batch)
    grads = tape.backward(loss)
    return float(loss.value), params.replace(grads[theta])
