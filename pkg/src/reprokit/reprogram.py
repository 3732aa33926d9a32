"""End-to-end reprogramming of a frozen classifier.

Only the input transform parameters ``W`` and, for a linear head, the head
weights are trained. White-box mode backpropagates through the frozen model;
black-box mode sees the model only through a probability oracle and estimates
the ``W`` gradient with forward differences, while the head (which is ours)
still gets exact gradients.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AssumptionError, DivergenceError, ShapeError, UnsupportedModeError
from .input_transform import InputTransform, PlacementLayout, apply_transform, transform_grad
from .model_core import FrozenModel, backward_to_input, forward, logits, param_digest, softmax
from .output_map import (
    LinearHead,
    OutputMap,
    greedy_frequency_mapping,
    linear_head_backward,
    random_label_mapping,
)
from .zeroth_order import zeroth_order_gradient

log = logging.getLogger(__name__)

CLAMP = 1e-12
OUTPUT_MAPS = ("greedy", "random", "linear_head")
LOSSES = ("ce", "nll", "mse")


@dataclass(frozen=True)
class ReprogramConfig:
    epochs: int = 100
    batch_size: int = 32
    lr_W: float = 0.05
    lr_head: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    mode: str = "white_box"
    q: int = 20
    mu: float = 0.01
    output_map: str = "greedy"
    m: int = 1
    head_input: str = "probs"
    layout_mode: str = "center"
    offset: int = 0
    replicates: int = 1
    overlay: bool = False
    loss: str = "ce"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.q < 1:
            raise ValueError(f"q must be >= 1, got {self.q}")
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if self.lr_W < 0 or self.lr_head < 0:
            raise ValueError("learning rates must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.mode not in ("white_box", "black_box"):
            raise ValueError(f"mode must be white_box or black_box, got {self.mode!r}")
        if self.output_map not in OUTPUT_MAPS:
            raise ValueError(f"output_map must be one of {OUTPUT_MAPS}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.mode == "black_box" and self.output_map == "linear_head" and self.head_input == "logits":
            raise UnsupportedModeError("a black-box model exposes probabilities only; use head_input='probs'")

    def layout(self, d_T: int, d_S: int) -> PlacementLayout:
        return PlacementLayout(d_T, d_S, self.layout_mode, self.offset, self.replicates)


@dataclass
class TrainTrace:
    """Per-epoch records plus the step-0 record taken before any update."""

    initial: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    queries: int = 0
    train_oracle_calls: int = 0
    steps: int = 0
    wall_clock: float = 0.0

    @property
    def losses(self) -> list:
        return [r["loss"] for r in self.records]

    def lines(self) -> list:
        return [self.initial] + self.records


class CountingOracle:
    """Probability oracle around a frozen model that only exposes forward outputs."""

    def __init__(self, model: FrozenModel):
        self._model = model
        self.input_dim = model.input_dim
        self.num_classes = model.num_classes
        self.calls = 0
        self.queries = 0

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        self.calls += 1
        self.queries += x.shape[0]
        return forward(self._model, x)


def _split(data):
    if hasattr(data, "samples"):
        x, y = data.samples, data.labels
    else:
        x, y = data
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(x.shape[0], int(np.prod(x.shape[1:]))), np.asarray(y, dtype=np.int64)


def task_loss(pred, labels, normalize: bool = True) -> float:
    """Mean cross-entropy, ``-log(max(pred[y] / sum(pred), 1e-12))``.

    With ``normalize=False`` the row sum is not divided out, which scores the
    raw aggregated probability of the true class.
    """
    return float(np.mean(_ce_terms(pred, labels, normalize)[0]))


def _ce_terms(pred, labels, normalize=True):
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels)
    if pred.ndim != 2 or labels.shape != (pred.shape[0],):
        raise ShapeError(f"pred {pred.shape} and labels {labels.shape} disagree")
    if np.any(labels < 0) or np.any(labels >= pred.shape[1]):
        raise ValueError(f"labels must lie in [0, {pred.shape[1]})")
    total = pred.sum(axis=1)
    if np.any(total <= 0):
        raise ValueError("prediction rows must have a strictly positive sum")
    if not normalize:
        total = np.ones_like(total)
    q = pred[np.arange(len(labels)), labels] / total
    return -np.log(np.maximum(q, CLAMP)), q, total


def task_loss_grad(pred, labels, normalize: bool = True) -> np.ndarray:
    """Gradient of :func:`task_loss` with respect to ``pred`` (zero where the clamp is active)."""
    pred = np.asarray(pred, dtype=np.float64)
    _, q, total = _ce_terms(pred, labels, normalize)
    n = pred.shape[0]
    rows = np.arange(n)
    g = np.zeros_like(pred)
    if normalize:
        g += (1.0 / total)[:, None]
    g[rows, labels] -= 1.0 / pred[rows, labels]
    g[q <= CLAMP] = 0.0
    return g / n


def _mse(scores, labels):
    y = np.zeros_like(scores)
    y[np.arange(len(labels)), labels] = 1.0
    diff = scores - y
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def _source(model, omap, xt):
    if omap.uses_logits:
        return logits(model, xt)
    return forward(model, xt)


def _prediction(omap: OutputMap, src):
    """Map source outputs to the distribution the loss sees. Returns (pred, raw scores)."""
    scores = omap.scores(src)
    if omap.head is not None:
        return softmax(scores), scores
    return scores, scores


def _objective(omap, src, y, loss_kind):
    """Loss on source outputs ``src`` and its gradient with respect to the map's raw scores."""
    pred, scores = _prediction(omap, src)
    if loss_kind == "mse":
        return _mse(scores, y)
    normalize = loss_kind == "ce"
    loss = task_loss(pred, y, normalize)
    g = task_loss_grad(pred, y, normalize)
    if omap.head is not None:
        g = pred * (g - np.sum(g * pred, axis=1, keepdims=True))
    return loss, g


def composite_loss(model, t: InputTransform, omap: OutputMap, x, y, loss_kind="ce") -> float:
    """Task loss of the full stack: transform -> frozen model -> output map."""
    return _objective(omap, _source(model, omap, apply_transform(t, x)), y, loss_kind)[0]


def composite_grad(model, t: InputTransform, omap: OutputMap, x, y, loss_kind="ce"):
    """Exact gradients: returns ``(loss, grad_W, grad_head_flat or None, grad_xtilde)``."""
    xt = apply_transform(t, x)
    src = _source(model, omap, xt)
    loss, g = _objective(omap, src, y, loss_kind)
    head_grad = None
    if omap.head is not None:
        gw, gb, g_src = linear_head_backward(omap.head, src, g)
        head_grad = np.concatenate([gw.ravel(), gb])
    else:
        g_src = g @ omap.mapping.matrix().T
    g_x = backward_to_input(model, xt, g_src, wrt="logits" if omap.uses_logits else "output")
    return loss, transform_grad(t, g_x), head_grad, g_x


@dataclass
class ReprogramState:
    transform: InputTransform
    omap: OutputMap
    vel_W: np.ndarray
    vel_head: np.ndarray | None

    def snapshot(self) -> dict:
        out = {"W": self.transform.W.tolist()}
        if self.omap.head is not None:
            out["head"] = self.omap.head.flat().tolist()
        return out


def _momentum_update(param, vel, grad, lr, momentum):
    vel *= momentum
    vel -= lr * grad
    param += vel


def _check_finite(state, *grads, what="gradient"):
    for g in grads:
        if g is not None and not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite {what}; aborting", state=state.snapshot())


def _check_params(state):
    head = state.omap.head.flat() if state.omap.head is not None else None
    _check_finite(state, state.transform.W, head, what="parameters")


def first_order_step(model: FrozenModel, state: ReprogramState, x, y, cfg: ReprogramConfig) -> float:
    """One SGD-with-momentum update of W (and the head) from exact gradients. Returns the batch loss."""
    _check_params(state)
    loss, gW, gH, _ = composite_grad(model, state.transform, state.omap, x, y, cfg.loss)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}", state=state.snapshot())
    _check_finite(state, gW, gH)
    _momentum_update(state.transform.W, state.vel_W, gW, cfg.lr_W, cfg.momentum)
    if gH is not None:
        head = state.omap.head
        flat = head.flat()
        _momentum_update(flat, state.vel_head, gH, cfg.lr_head, cfg.momentum)
        state.omap.head = LinearHead.from_flat(flat, head.K_S, head.K_T)
    return loss


def zeroth_order_step(oracle, state: ReprogramState, x, y, cfg: ReprogramConfig, seed) -> float:
    """One update where W sees only oracle outputs; makes exactly q + 1 oracle calls."""
    _check_params(state)
    t, omap = state.transform, state.omap
    idx = t.trainable
    src = oracle(apply_transform(t, x))
    loss, g = _objective(omap, src, y, cfg.loss)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}", state=state.snapshot())

    def loss_at(w_sub):
        W = t.W.copy()
        W[idx] = w_sub
        return _objective(omap, oracle(apply_transform(t.with_W(W), x)), y, cfg.loss)[0]

    try:
        g_sub = zeroth_order_gradient(loss_at, t.W[idx], cfg.q, cfg.mu, seed, f0=loss)
    except FloatingPointError as exc:
        raise DivergenceError(str(exc), state=state.snapshot()) from exc
    gW = np.zeros_like(t.W)
    gW[idx] = g_sub
    gH = None
    if omap.head is not None:
        gw, gb, _ = linear_head_backward(omap.head, src, g)
        gH = np.concatenate([gw.ravel(), gb])
    _check_finite(state, gW, gH)
    _momentum_update(t.W, state.vel_W, gW, cfg.lr_W, cfg.momentum)
    if gH is not None:
        flat = omap.head.flat()
        _momentum_update(flat, state.vel_head, gH, cfg.lr_head, cfg.momentum)
        omap.head = LinearHead.from_flat(flat, omap.head.K_S, omap.head.K_T)
    return loss


def predict_scores(source, t: InputTransform, omap: OutputMap, x) -> np.ndarray:
    """Target-class scores; ``source`` is a FrozenModel or a probability oracle."""
    xt = apply_transform(t, x)
    src = source(xt) if callable(source) else _source(source, omap, xt)
    return omap.scores(src)


def evaluate(source, t, omap, x, y, loss_kind="ce"):
    """Return ``(loss, accuracy)`` of the reprogrammed stack on (x, y)."""
    xt = apply_transform(t, x)
    src = source(xt) if callable(source) else _source(source, omap, xt)
    loss = _objective(omap, src, y, loss_kind)[0]
    return loss, float(np.mean(np.argmax(omap.scores(src), axis=1) == y))


def build_output_map(cfg: ReprogramConfig, source, t, x, y, K_S: int, K_T: int, seed) -> OutputMap:
    if cfg.output_map == "greedy":
        return OutputMap(mapping=greedy_frequency_mapping(source, t, x, y, cfg.m, K_T))
    if cfg.output_map == "random":
        return OutputMap(mapping=random_label_mapping(K_S, K_T, cfg.m, seed))
    return OutputMap(head=LinearHead.init(K_S, K_T, seed), head_input=cfg.head_input)


def reprogram(model, target_train, target_test, cfg: ReprogramConfig, oracle=None, epoch_hook=None):
    """Train an input transform and output map on top of a frozen source model.

    ``model`` is required in white-box mode. In black-box mode every model
    evaluation goes through ``oracle`` (a callable returning probabilities with
    ``input_dim`` and ``num_classes`` attributes); when omitted, a counting
    oracle around ``model`` is used. ``epoch_hook(epoch, transform, omap)`` may
    return a dict merged into that epoch's trace record; it is called for the
    step-0 record as well.

    Returns ``(transform, output_map, trace)``.
    """
    started = time.perf_counter()
    black_box = cfg.mode == "black_box"
    if black_box and oracle is None:
        if model is None:
            raise ValueError("black-box mode needs a model or an oracle")
        oracle = CountingOracle(model)
    if not black_box and model is None:
        raise UnsupportedModeError("white-box mode needs the frozen model itself")
    dims = oracle if black_box else model
    d_S, K_S = dims.input_dim, dims.num_classes

    x, y = _split(target_train)
    xs, ys = _split(target_test)
    if x.shape[0] == 0:
        raise ValueError("target training set is empty")
    if xs.shape[1] != x.shape[1]:
        raise ShapeError("train and test target samples differ in dimension")
    K_T = int(max(y.max(), ys.max() if len(ys) else 0)) + 1
    if x.shape[1] > d_S:
        raise AssumptionError(f"target dimension {x.shape[1]} exceeds source dimension {d_S}")
    if K_T > K_S:
        raise AssumptionError(f"{K_T} target classes exceed {K_S} source classes")

    digest = param_digest(model) if model is not None else None
    ss = np.random.SeedSequence(cfg.seed)
    shuffle_rng, zo_rng, init_rng = (np.random.default_rng(s) for s in ss.spawn(3))

    lo_hi = model.input_range if model is not None else (-1.0, 1.0)
    t = InputTransform.create(cfg.layout(x.shape[1], d_S), overlay=cfg.overlay, input_range=lo_hi)
    source = oracle if black_box else model
    omap = build_output_map(cfg, source, t, x, y, K_S, K_T, int(init_rng.integers(2**31)))
    state = ReprogramState(t, omap, np.zeros_like(t.W),
                           np.zeros(omap.head.size) if omap.head is not None else None)
    trace = TrainTrace()

    def record(epoch):
        loss, acc = evaluate(source, t, state.omap, x, y, cfg.loss)
        test_acc = evaluate(source, t, state.omap, xs, ys, cfg.loss)[1] if len(ys) else float("nan")
        rec = {"epoch": epoch, "loss": loss, "train_acc": acc, "test_acc": test_acc,
               "queries": oracle.queries if black_box else 0,
               "oracle_calls": oracle.calls if black_box else 0}
        if epoch_hook is not None:
            rec.update(epoch_hook(epoch, t, state.omap) or {})
        if not np.isfinite(loss):
            trace.records.append(rec)
            raise DivergenceError(f"loss became {loss} at epoch {epoch}", state=state.snapshot(), trace=trace)
        return rec

    trace.initial = record(0)
    n = x.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                if black_box:
                    before = oracle.calls
                    zeroth_order_step(oracle, state, x[idx], y[idx], cfg, int(zo_rng.integers(2**63)))
                    trace.train_oracle_calls += oracle.calls - before
                else:
                    first_order_step(model, state, x[idx], y[idx], cfg)
            except DivergenceError as exc:
                exc.trace = trace
                raise
            trace.steps += 1
        trace.records.append(record(epoch))
        log.debug("epoch %d loss %.5f acc %.3f", epoch, trace.records[-1]["loss"], trace.records[-1]["train_acc"])

    if black_box:
        trace.queries = oracle.queries
    if digest is not None and param_digest(model) != digest:
        raise AssertionError("frozen model parameters changed during reprogramming")
    trace.wall_clock = time.perf_counter() - started
    return t, state.omap, trace


def config_dict(cfg: ReprogramConfig) -> dict:
    return asdict(cfg)
