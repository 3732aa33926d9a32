"""Source-to-target output mappings: averaged label blocks or a trainable linear head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssumptionError, CapacityError, ShapeError


@dataclass(frozen=True)
class LabelMapping:
    """``blocks[t]`` is the tuple of source labels assigned to target label ``t``."""

    blocks: tuple
    K_S: int

    def __post_init__(self):
        blocks = tuple(tuple(int(s) for s in b) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if len(blocks) > self.K_S:
            raise AssumptionError(f"{len(blocks)} target classes exceed {self.K_S} source classes")
        seen = set()
        for t, block in enumerate(blocks):
            if not block:
                raise ValueError(f"target label {t} has no source labels")
            for s in block:
                if not 0 <= s < self.K_S:
                    raise ValueError(f"source label {s} outside [0, {self.K_S})")
                if s in seen:
                    raise ValueError(f"source label {s} assigned to more than one target label")
                seen.add(s)

    @property
    def K_T(self) -> int:
        return len(self.blocks)

    @property
    def is_one_to_one(self) -> bool:
        return all(len(b) == 1 for b in self.blocks)

    def matrix(self) -> np.ndarray:
        """(K_S, K_T) averaging matrix, so scores = probs @ matrix()."""
        a = np.zeros((self.K_S, self.K_T))
        for t, block in enumerate(self.blocks):
            a[list(block), t] = 1.0 / len(block)
        return a

    def to_pairs(self) -> list:
        return [[t, list(b)] for t, b in enumerate(self.blocks)]

    @classmethod
    def from_pairs(cls, pairs, K_S: int) -> "LabelMapping":
        pairs = sorted(pairs, key=lambda p: p[0])
        if [p[0] for p in pairs] != list(range(len(pairs))):
            raise ValueError("mapping pairs must cover target labels 0..K_T-1 exactly once")
        return cls(tuple(tuple(p[1]) for p in pairs), K_S)


def aggregate_label_probs(mapping: LabelMapping, src_probs) -> np.ndarray:
    p = np.asarray(src_probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != mapping.K_S:
        raise ShapeError(f"expected source probabilities of shape (n, {mapping.K_S}), got {p.shape}")
    return p @ mapping.matrix()


def _check_capacity(K_S, K_T, m):
    if K_T < 1 or m < 1:
        raise ValueError("K_T and m must be >= 1")
    if K_T > K_S:
        raise AssumptionError(f"{K_T} target classes exceed {K_S} source classes (requires K_T <= K_S)")
    if m * K_T > K_S:
        raise CapacityError(f"{m} labels for each of {K_T} targets needs {m * K_T} source labels, have {K_S}")


def random_label_mapping(K_S: int, K_T: int, m: int = 1, seed: int = 0) -> LabelMapping:
    _check_capacity(K_S, K_T, m)
    picks = np.random.default_rng(seed).permutation(K_S)[: m * K_T].reshape(K_T, m)
    return LabelMapping(tuple(tuple(sorted(row)) for row in picks.tolist()), K_S)


def frequency_counts(src_probs, labels, K_T: int) -> np.ndarray:
    """counts[t, s]: samples of target class t whose source argmax is s."""
    src_probs = np.asarray(src_probs)
    labels = np.asarray(labels)
    counts = np.zeros((K_T, src_probs.shape[1]), dtype=np.int64)
    np.add.at(counts, (labels, np.argmax(src_probs, axis=1)), 1)
    return counts


def greedy_assign(counts, m: int) -> LabelMapping:
    """Take (target, source) pairs in descending count order until every target holds m labels.

    Ties go to the lower source label, then the lower target label. A pair is
    skipped once its source label is taken or its target is full.
    """
    counts = np.asarray(counts)
    K_T, K_S = counts.shape
    _check_capacity(K_S, K_T, m)
    order = sorted(((-int(counts[t, s]), s, t) for t in range(K_T) for s in range(K_S)))
    blocks = [[] for _ in range(K_T)]
    used = set()
    for _, s, t in order:
        if s in used or len(blocks[t]) == m:
            continue
        blocks[t].append(s)
        used.add(s)
    return LabelMapping(tuple(tuple(b) for b in blocks), K_S)


def greedy_frequency_mapping(model, t, target_x, target_y, m: int = 1, K_T: int | None = None) -> LabelMapping:
    """Frequency-based greedy mapping from the model's responses to zero-padded targets.

    ``model`` is a FrozenModel or any callable returning source probabilities
    for a batch (e.g. a black-box endpoint). The transform is evaluated with
    W = 0 regardless of its current parameters.
    """
    from .input_transform import apply_transform  # local: avoids a cycle at import

    target_y = np.asarray(target_y)
    if K_T is None:
        K_T = int(target_y.max()) + 1
    missing = sorted(set(range(K_T)) - set(np.unique(target_y).tolist()))
    if missing:
        raise ValueError(f"target classes {missing} have no samples")
    if hasattr(model, "num_classes"):
        _check_capacity(model.num_classes, K_T, m)
    xt = apply_transform(t.with_W(np.zeros_like(t.W)), target_x)
    probs = model(xt) if callable(model) else _forward(model, xt)
    return greedy_assign(frequency_counts(probs, target_y, K_T), m)


def _forward(model, x):
    from .model_core import forward

    return forward(model, x)


@dataclass
class LinearHead:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"head weight {self.weight.shape} and bias {self.bias.shape} disagree")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("head parameters must be finite")

    @property
    def K_T(self) -> int:
        return self.weight.shape[0]

    @property
    def K_S(self) -> int:
        return self.weight.shape[1]

    @property
    def size(self) -> int:
        return self.weight.size + self.bias.size

    @classmethod
    def init(cls, K_S: int, K_T: int, seed: int = 0) -> "LinearHead":
        limit = np.sqrt(6.0 / (K_S + K_T))
        w = np.random.default_rng(seed).uniform(-limit, limit, size=(K_T, K_S))
        return cls(w, np.zeros(K_T))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weight.ravel(), self.bias])

    @classmethod
    def from_flat(cls, v, K_S: int, K_T: int) -> "LinearHead":
        v = np.asarray(v, dtype=np.float64)
        return cls(v[: K_T * K_S].reshape(K_T, K_S), v[K_T * K_S:])


def linear_head_forward(head: LinearHead, src_out) -> np.ndarray:
    x = np.asarray(src_out, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != head.K_S:
        raise ShapeError(f"expected head input of shape (n, {head.K_S}), got {x.shape}")
    return x @ head.weight.T + head.bias


def linear_head_backward(head: LinearHead, src_out, grad_out):
    """Returns ``(grad_weight, grad_bias, grad_src_out)`` for upstream ``grad_out``."""
    x = np.asarray(src_out, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != (x.shape[0], head.K_T):
        raise ShapeError(f"grad_out shape {g.shape} != {(x.shape[0], head.K_T)}")
    return g.T @ x, g.sum(axis=0), g @ head.weight


@dataclass
class OutputMap:
    """Exactly one of ``mapping`` or ``head`` is set. ``head_input`` is 'probs' or 'logits'."""

    mapping: LabelMapping | None = None
    head: LinearHead | None = None
    head_input: str = "probs"

    def __post_init__(self):
        if (self.mapping is None) == (self.head is None):
            raise ValueError("OutputMap needs exactly one of mapping or head")
        if self.head_input not in ("probs", "logits"):
            raise ValueError(f"head_input must be 'probs' or 'logits', got {self.head_input!r}")

    @property
    def variant(self) -> str:
        return "label_mapping" if self.mapping is not None else "linear_head"

    @property
    def K_T(self) -> int:
        return self.mapping.K_T if self.mapping is not None else self.head.K_T

    @property
    def uses_logits(self) -> bool:
        return self.head is not None and self.head_input == "logits"

    def scores(self, src) -> np.ndarray:
        if self.mapping is not None:
            return aggregate_label_probs(self.mapping, src)
        return linear_head_forward(self.head, src)

    def to_dict(self) -> dict:
        if self.mapping is not None:
            return {"variant": self.variant, "K_S": self.mapping.K_S, "pairs": self.mapping.to_pairs()}
        return {"variant": self.variant, "head_input": self.head_input,
                "weight": self.head.weight.tolist(), "bias": self.head.bias.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "OutputMap":
        if d["variant"] == "label_mapping":
            return cls(mapping=LabelMapping.from_pairs(d["pairs"], d["K_S"]))
        return cls(head=LinearHead(d["weight"], d["bias"]), head_input=d.get("head_input", "probs"))
