"""Minimal feed-forward network engine used to build and query frozen source models.

A model is an ordered stack of ``dense``, ``relu``, ``flatten`` and ``softmax``
layers. Everything is float64. Once wrapped in :class:`FrozenModel` the weights
are read-only arrays and the model is identified by :func:`param_digest`, a
SHA-256 over the little-endian parameter payload.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ReprokitError, ShapeError

log = logging.getLogger(__name__)

LAYER_KINDS = ("dense", "relu", "flatten", "softmax")
_KIND_CODE = {"dense": 1, "relu": 2, "flatten": 3, "softmax": 4}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}

MAGIC = b"RPKMODEL"
FORMAT_VERSION = 1
DIGEST_SIZE = 32


@dataclass(frozen=True, eq=False)
class LayerSpec:
    kind: str
    in_dim: int = 0
    out_dim: int = 0
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}; expected one of {LAYER_KINDS}")
        if self.kind != "dense":
            return
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("dense layer needs positive in_dim and out_dim")
        if self.weight is not None and self.weight.shape != (self.out_dim, self.in_dim):
            raise ShapeError(
                f"dense weight shape {self.weight.shape} != (out_dim, in_dim) = "
                f"{(self.out_dim, self.in_dim)}"
            )
        if self.bias is not None and self.bias.shape != (self.out_dim,):
            raise ShapeError(f"dense bias shape {self.bias.shape} != ({self.out_dim},)")

    @property
    def has_params(self) -> bool:
        return self.kind == "dense"


def dense(in_dim: int, out_dim: int, weight=None, bias=None) -> LayerSpec:
    if weight is not None:
        weight = np.asarray(weight, dtype=np.float64)
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
    return LayerSpec("dense", int(in_dim), int(out_dim), weight, bias)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def softmax_layer() -> LayerSpec:
    return LayerSpec("softmax")


def _frozen_array(a) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


def _payload_bytes(layers) -> bytes:
    chunks = []
    for layer in layers:
        if layer.has_params:
            chunks.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
            chunks.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(chunks)


@dataclass(frozen=True, eq=False)
class FrozenModel:
    """Immutable layer stack. ``param_digest`` is computed once at construction."""

    layers: tuple
    input_dim: int
    num_classes: int
    input_range: tuple = (-1.0, 1.0)
    param_digest: str = field(init=False)

    def __post_init__(self):
        layers = []
        width = self.input_dim
        for i, layer in enumerate(self.layers):
            if layer.kind == "softmax" and i != len(self.layers) - 1:
                raise ValueError("softmax may only appear as the final layer")
            if layer.has_params:
                if layer.weight is None or layer.bias is None:
                    raise ValueError(f"layer {i}: frozen dense layer needs weight and bias")
                if layer.in_dim != width:
                    raise ShapeError(f"layer {i}: expected in_dim {width}, got {layer.in_dim}")
                if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                    raise ValueError(f"layer {i}: non-finite parameters")
                layer = LayerSpec("dense", layer.in_dim, layer.out_dim,
                                  _frozen_array(layer.weight), _frozen_array(layer.bias))
                width = layer.out_dim
            layers.append(layer)
        if width != self.num_classes:
            raise ShapeError(f"network output width {width} != num_classes {self.num_classes}")
        lo, hi = (float(v) for v in self.input_range)
        if not lo < hi:
            raise ValueError(f"input_range must satisfy lo < hi, got {self.input_range}")
        object.__setattr__(self, "layers", tuple(layers))
        object.__setattr__(self, "input_range", (lo, hi))
        digest = hashlib.sha256(_payload_bytes(layers)).hexdigest()
        object.__setattr__(self, "param_digest", digest)

    @property
    def has_softmax(self) -> bool:
        return bool(self.layers) and self.layers[-1].kind == "softmax"

    @property
    def n_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers if l.has_params)


def param_digest(model: FrozenModel) -> str:
    """Hex SHA-256 of the parameter bytes; recomputed rather than read from the cache."""
    return hashlib.sha256(_payload_bytes(model.layers)).hexdigest()


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(model: FrozenModel, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        raise ShapeError(f"expected a batch of shape (n, {model.input_dim}), got a vector of shape {x.shape}")
    d = int(np.prod(x.shape[1:]))
    if d != model.input_dim:
        raise ShapeError(f"input dimension mismatch: expected {model.input_dim}, got {d}")
    if not np.all(np.isfinite(x)):
        raise ValueError("batch contains non-finite values")
    return x.reshape(x.shape[0], d)


def _run(layers, x, keep=False):
    acts = []
    for layer in layers:
        if keep:
            acts.append(x)
        if layer.kind == "dense":
            x = x @ layer.weight.T + layer.bias
        elif layer.kind == "relu":
            x = np.maximum(x, 0.0)
        elif layer.kind == "flatten":
            x = x.reshape(x.shape[0], -1)
        else:
            x = softmax(x)
    return x, acts


def _logit_layers(model):
    return model.layers[:-1] if model.has_softmax else model.layers


def forward(model: FrozenModel, batch) -> np.ndarray:
    """Class probabilities, shape (n, K_S).

    For a model without a trailing softmax this is the raw network output.
    """
    out, _ = _run(model.layers, _as_batch(model, batch))
    return out


def logits(model: FrozenModel, batch) -> np.ndarray:
    out, _ = _run(_logit_layers(model), _as_batch(model, batch))
    return out


def _backprop(layers, acts, g):
    for layer, a in zip(reversed(layers), reversed(acts)):
        if layer.kind == "dense":
            g = g @ layer.weight
        elif layer.kind == "relu":
            g = g * (a > 0)
        elif layer.kind == "flatten":
            g = g.reshape(a.shape)
    return g


def backward_to_input(model: FrozenModel, batch, grad_out, wrt: str = "output") -> np.ndarray:
    """Gradient of ``sum(grad_out * f(batch))`` with respect to ``batch``.

    ``wrt="output"`` differentiates the model output (probabilities when the
    model ends in softmax); ``wrt="logits"`` differentiates the pre-softmax
    representation instead. Parameters receive no gradient.
    """
    x = _as_batch(model, batch)
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != (x.shape[0], model.num_classes):
        raise ShapeError(f"grad_out shape {g.shape} != {(x.shape[0], model.num_classes)}")
    if wrt not in ("output", "logits"):
        raise ValueError(f"wrt must be 'output' or 'logits', got {wrt!r}")
    layers = _logit_layers(model)
    z, acts = _run(layers, x, keep=True)
    if wrt == "output" and model.has_softmax:
        p = softmax(z)
        g = p * (g - np.sum(g * p, axis=1, keepdims=True))
    return _backprop(layers, acts, g)


@dataclass(frozen=True)
class SourceTrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.1
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")


def init_layers(arch, input_dim: int, rng: np.random.Generator) -> list:
    """Glorot-uniform weights, zero biases, drawn in layer order."""
    layers = []
    width = input_dim
    for layer in arch:
        if layer.kind == "dense":
            if layer.in_dim != width:
                raise ShapeError(f"dense layer expects in_dim {layer.in_dim}, previous width is {width}")
            limit = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
            w = rng.uniform(-limit, limit, size=(layer.out_dim, layer.in_dim))
            layer = LayerSpec("dense", layer.in_dim, layer.out_dim, w, np.zeros(layer.out_dim))
            width = layer.out_dim
        layers.append(layer)
    return layers


def _split_dataset(dataset):
    if hasattr(dataset, "samples"):
        return np.asarray(dataset.samples, dtype=np.float64), np.asarray(dataset.labels)
    x, y = dataset
    return np.asarray(x, dtype=np.float64), np.asarray(y)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    return float(-np.mean(np.log(np.maximum(probs[np.arange(len(labels)), labels], 1e-12))))


def train_source(dataset, arch, cfg: SourceTrainConfig, input_range=(-1.0, 1.0), history=None) -> FrozenModel:
    """Fit a classifier with SGD + momentum on softmax cross-entropy.

    ``arch`` lists the layers before the output softmax (one is appended if
    missing); dense entries only need their dimensions. Per-epoch mean training
    losses are appended to ``history`` when a list is passed, preceded by the
    loss at initialization.
    """
    x, y = _split_dataset(dataset)
    if x.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    x = x.reshape(x.shape[0], -1)
    if y.shape != (x.shape[0],):
        raise ShapeError(f"{x.shape[0]} samples but labels have shape {y.shape}")
    arch = list(arch)
    if not arch or arch[-1].kind != "softmax":
        arch.append(softmax_layer())
    num_classes = next(l.out_dim for l in reversed(arch) if l.kind == "dense")
    if np.any(y < 0) or np.any(y >= num_classes) or not np.issubdtype(y.dtype, np.integer):
        raise ValueError(f"labels must be integers in [0, {num_classes})")

    rng = np.random.default_rng(cfg.seed)
    layers = init_layers(arch, x.shape[1], rng)
    body = layers[:-1]
    velocity = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) if l.has_params else None for l in body]

    def epoch_loss():
        z, _ = _run(body, x)
        return cross_entropy(softmax(z), y)

    if history is not None:
        history.append(epoch_loss())
    n = x.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            z, acts = _run(body, xb, keep=True)
            g = softmax(z)
            g[np.arange(len(yb)), yb] -= 1.0
            g /= len(yb)
            for i in range(len(body) - 1, -1, -1):
                layer, a = body[i], acts[i]
                if layer.kind == "dense":
                    gw, gb = g.T @ a, g.sum(axis=0)
                    g = g @ layer.weight
                    vw, vb = velocity[i]
                    vw *= cfg.momentum
                    vw -= cfg.learning_rate * gw
                    vb *= cfg.momentum
                    vb -= cfg.learning_rate * gb
                    layer.weight[...] += vw
                    layer.bias[...] += vb
                elif layer.kind == "relu":
                    g = g * (a > 0)
        if history is not None:
            history.append(epoch_loss())
        if not all(np.all(np.isfinite(l.weight)) for l in body if l.has_params):
            raise ReprokitError("source training diverged (non-finite weights)")

    model = FrozenModel(tuple(layers), x.shape[1], num_classes, tuple(input_range))
    log.info("trained source model %s (%d params)", model.param_digest[:12], model.n_params)
    return model


# ---------------------------------------------------------------------------
# checkpoint format
#
#   0   8 bytes  magic "RPKMODEL"
#   8   u32      format version
#   12  u32      manifest length L
#   16  L bytes  manifest: u32 input_dim, u32 num_classes, f64 range lo, f64 range hi,
#                u32 n_layers, n_layers x (u32 kind, u32 in_dim, u32 out_dim)
#   ..  f64 LE   parameter payload (weight row-major, then bias, per dense layer)
#   ..  32 bytes SHA-256 of the payload
# ---------------------------------------------------------------------------


def _manifest(model: FrozenModel) -> bytes:
    parts = [struct.pack("<IIddI", model.input_dim, model.num_classes,
                         model.input_range[0], model.input_range[1], len(model.layers))]
    for layer in model.layers:
        parts.append(struct.pack("<III", _KIND_CODE[layer.kind], layer.in_dim, layer.out_dim))
    return b"".join(parts)


def dumps_checkpoint(model: FrozenModel) -> bytes:
    manifest = _manifest(model)
    payload = _payload_bytes(model.layers)
    return b"".join([
        MAGIC,
        struct.pack("<II", FORMAT_VERSION, len(manifest)),
        manifest,
        payload,
        hashlib.sha256(payload).digest(),
    ])


def loads_checkpoint(data: bytes) -> FrozenModel:
    data = bytes(data)

    def need(offset, size, what):
        if len(data) < offset + size:
            raise CheckpointError(
                f"truncated checkpoint: {what} needs {size} bytes, {max(len(data) - offset, 0)} available",
                offset)

    need(0, 8, "magic")
    if data[:8] != MAGIC:
        raise CheckpointError(f"bad magic {data[:8]!r}, expected {MAGIC!r}", 0)
    need(8, 8, "header")
    version, mlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}", 8)
    need(16, mlen, "manifest")
    mend = 16 + mlen
    if mlen < 28:
        raise CheckpointError(f"manifest too short ({mlen} bytes)", 12)
    input_dim, num_classes, lo, hi, n_layers = struct.unpack_from("<IIddI", data, 16)
    if 28 + 12 * n_layers != mlen:
        raise CheckpointError(f"manifest length {mlen} inconsistent with {n_layers} layers", 12)

    layers, shapes = [], []
    off = 16 + 28
    for _ in range(n_layers):
        code, din, dout = struct.unpack_from("<III", data, off)
        if code not in _CODE_KIND:
            raise CheckpointError(f"unknown layer kind code {code}", off)
        kind = _CODE_KIND[code]
        layers.append((kind, din, dout))
        if kind == "dense":
            shapes.append((dout, din))
        off += 12

    n_floats = sum(o * i + o for o, i in shapes)
    need(mend, 8 * n_floats, "parameter payload")
    pend = mend + 8 * n_floats
    need(pend, DIGEST_SIZE, "digest trailer")
    if len(data) != pend + DIGEST_SIZE:
        raise CheckpointError(f"{len(data) - pend - DIGEST_SIZE} unexpected trailing bytes", pend + DIGEST_SIZE)
    payload = data[mend:pend]
    if hashlib.sha256(payload).digest() != data[pend:]:
        raise CheckpointError("parameter digest mismatch: payload is corrupt", pend)

    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    specs, pos = [], 0
    for kind, din, dout in layers:
        if kind == "dense":
            w = values[pos:pos + dout * din].reshape(dout, din)
            pos += dout * din
            b = values[pos:pos + dout]
            pos += dout
            specs.append(LayerSpec("dense", din, dout, w, b))
        else:
            specs.append(LayerSpec(kind))
    try:
        return FrozenModel(tuple(specs), input_dim, num_classes, (lo, hi))
    except (ValueError, ShapeError) as exc:
        raise CheckpointError(f"inconsistent manifest: {exc}", 16) from exc


def save_checkpoint(model: FrozenModel, path) -> None:
    Path(path).write_bytes(dumps_checkpoint(model))


def load_checkpoint(path) -> FrozenModel:
    return loads_checkpoint(Path(path).read_bytes())


def checkpoint_io(model: FrozenModel, path) -> FrozenModel:
    """Save ``model`` to ``path`` and load it back."""
    save_checkpoint(model, path)
    return load_checkpoint(path)
