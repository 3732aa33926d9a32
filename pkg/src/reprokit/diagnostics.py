"""Risk and representation-alignment diagnostics for a reprogrammed model.

The alignment term is an empirical Wasserstein-1 distance between two
equal-size clouds of source-model logits, solved exactly as a min-cost perfect
matching. ``holds`` in :class:`Theorem1Report` is a finite-sample check of the
target-risk bound on one trained instance, not a proof of it.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import AssumptionError, ShapeError, UnsupportedModeError
from .input_transform import InputTransform, apply_transform
from .kernels import linear_assignment, pairwise_euclidean
from .model_core import FrozenModel, forward, logits
from .output_map import LabelMapping, OutputMap
from .reprogram import composite_grad

MAX_EXACT_W1 = 512


class ReprogrammedModel:
    """Callable stack ``output_map(f_S(transform(x)))`` returning target-class scores."""

    def __init__(self, model: FrozenModel, transform: InputTransform, omap: OutputMap):
        self.model = model
        self.transform = transform
        self.omap = omap

    def __call__(self, x) -> np.ndarray:
        xt = apply_transform(self.transform, x)
        src = logits(self.model, xt) if self.omap.uses_logits else forward(self.model, xt)
        return self.omap.scores(src)


def _predict(predictor, x):
    if isinstance(predictor, FrozenModel):
        return forward(predictor, x)
    return np.asarray(predictor(x), dtype=np.float64)


def one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def rms_risk(predictor, samples, onehot) -> float:
    """Mean over samples of ``||f(x) - y||_2``; ``predictor`` is a FrozenModel or callable."""
    y = np.asarray(onehot, dtype=np.float64)
    pred = _predict(predictor, samples)
    if pred.shape != y.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match label shape {y.shape}")
    return float(np.mean(np.linalg.norm(pred - y, axis=1)))


def empirical_w1(a, b) -> float:
    """Exact W1 between the uniform empirical measures on the rows of ``a`` and ``b``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"sample counts differ: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    n = a.shape[0]
    if n == 0:
        raise ShapeError("empty samples")
    if n > MAX_EXACT_W1:
        raise ValueError(
            f"exact assignment is capped at {MAX_EXACT_W1} samples, got {n}; subsample both sides first")
    cost = pairwise_euclidean(a, b)
    cols = linear_assignment(cost)
    return float(np.sum(cost[np.arange(n), cols]) / n)


def _subsample(n_avail, n, rng):
    if n >= n_avail:
        return np.arange(n_avail)
    return np.sort(rng.choice(n_avail, size=n, replace=False))


def representation_samples(model, transform, target_x, source_x, source_y=None, labels=None,
                           n_rep=256, seed=0):
    """Paired logit clouds ``(z_target, z_source)`` of equal size.

    Source rows are restricted to ``labels`` when given (the mapped source
    classes). Both sides are cut to ``min(n_rep, n_target, n_source)``;
    a side is subsampled (seeded) only when it has more rows than that.
    """
    source_x = np.asarray(source_x, dtype=np.float64)
    if labels is not None:
        keep = np.isin(np.asarray(source_y), list(labels))
        source_x = source_x[keep]
    target_x = np.asarray(target_x, dtype=np.float64)
    n = min(n_rep, MAX_EXACT_W1, len(target_x), len(source_x))
    if n < 2:
        raise ValueError(f"need at least 2 samples on each side, got {n}")
    rng = np.random.default_rng(seed)
    ti = _subsample(len(target_x), n, rng)
    si = _subsample(len(source_x), n, rng)
    return logits(model, apply_transform(transform, target_x[ti])), logits(model, source_x[si])


def _mapped_labels(omap):
    mapping = omap.mapping if isinstance(omap, OutputMap) else omap
    if isinstance(mapping, LabelMapping):
        return sorted(s for b in mapping.blocks for s in b)
    return None


def w1_tracker(model, source, target_x, n_rep=256, seed=0):
    """Epoch hook for :func:`reprokit.reprogram.reprogram` that records ``w1`` each epoch."""

    def hook(epoch, transform, omap):
        zt, zs = representation_samples(model, transform, target_x, source.samples, source.labels,
                                        _mapped_labels(omap), n_rep, seed)
        return {"w1": empirical_w1(zt, zs)}

    return hook


@dataclass
class Theorem1Report:
    target_risk: float
    source_risk: float | None
    w1: float | None
    K: int
    n_rep: int
    alignment_term: float | None = None
    bound: float | None = None
    holds: bool | None = None

    def __post_init__(self):
        if self.w1 is not None:
            self.alignment_term = 2.0 * math.sqrt(self.K) * self.w1
        if self.source_risk is not None and self.alignment_term is not None:
            self.bound = self.source_risk + self.alignment_term
            self.holds = bool(self.target_risk <= self.bound)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["w1_is_estimate"] = True
        d["checked_assumptions"] = ["one-to-one label mapping"]
        return d

    def table(self) -> str:
        def fmt(v):
            if v is None:
                return "n/a"
            if isinstance(v, bool):
                return "yes" if v else "no"
            return f"{v:.6f}"

        head = ["target_risk", "eps_S", "W1_hat", "2sqrt(K)*W1_hat", "bound", "holds"]
        vals = [fmt(v) for v in (self.target_risk, self.source_risk, self.w1,
                                 self.alignment_term, self.bound, self.holds)]
        widths = [max(len(h), len(v)) for h, v in zip(head, vals)]
        line = " | ".join(h.rjust(w) for h, w in zip(head, widths))
        rule = "-+-".join("-" * w for w in widths)
        row = " | ".join(v.rjust(w) for v, w in zip(vals, widths))
        return "\n".join([line, rule, row])


def theorem1_report(model: FrozenModel, transform: InputTransform, omap, source_heldout, target_test,
                    n_rep: int = 256, seed: int = 0) -> Theorem1Report:
    """Evaluate target risk against source risk plus the scaled alignment term.

    ``omap`` must be a one-to-one label mapping (an OutputMap or LabelMapping).
    ``source_heldout`` may be None, in which case the source risk, W1 and
    bound are reported as unavailable.
    """
    mapping = omap.mapping if isinstance(omap, OutputMap) else omap
    if not isinstance(mapping, LabelMapping):
        raise AssumptionError("the risk bound assumes a one-to-one label mapping; a linear head was given")
    if not mapping.is_one_to_one:
        raise AssumptionError(
            "the risk bound assumes a one-to-one label mapping; got blocks of sizes "
            f"{[len(b) for b in mapping.blocks]}")
    K = mapping.K_T
    stack = ReprogrammedModel(model, transform, OutputMap(mapping=mapping))
    target_risk = rms_risk(stack, target_test.samples, one_hot(target_test.labels, K))
    if source_heldout is None:
        return Theorem1Report(target_risk, None, None, K, 0)
    source_risk = rms_risk(model, source_heldout.samples, one_hot(source_heldout.labels, model.num_classes))
    zt, zs = representation_samples(model, transform, target_test.samples, source_heldout.samples,
                                    source_heldout.labels, _mapped_labels(mapping), n_rep, seed)
    return Theorem1Report(target_risk, source_risk, empirical_w1(zt, zs), K, len(zt))


def input_gradient_l1(model, transform: InputTransform, omap: OutputMap, x, y, loss_kind="ce",
                      mode="white_box") -> float:
    """l1 norm of the batch-averaged gradient of the task loss with respect to the transformed input."""
    if mode != "white_box" or not isinstance(model, FrozenModel):
        raise UnsupportedModeError("input gradients need white-box access to the frozen model")
    _, _, _, g_x = composite_grad(model, transform, omap, x, y, loss_kind)
    # g_x already carries the 1/n of the mean loss, so its sum is the mean per-sample gradient
    return float(np.abs(g_x.sum(axis=0)).sum())
