"""Embedding of target samples into the source input space.

A target vector of length ``d_T`` is written into a zero vector of length
``d_S`` at the layout's occupied indices. Every remaining index carries a
trainable value ``tanh(W_i)``, which keeps the padding inside (-1, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionError, CapacityError, RangeError, ShapeError

MODES = ("center", "offset", "replicate")


@dataclass(frozen=True)
class PlacementLayout:
    d_T: int
    d_S: int
    mode: str = "center"
    k: int = 0
    r: int = 1

    def __post_init__(self):
        if self.d_T < 1 or self.d_S < 1:
            raise ValueError("d_T and d_S must be positive")
        if self.d_T > self.d_S:
            raise AssumptionError(
                f"target dimension {self.d_T} exceeds source dimension {self.d_S} (requires d_T <= d_S)")
        if self.mode not in MODES:
            raise ValueError(f"unknown placement mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "offset" and not 0 <= self.k <= self.d_S - self.d_T:
            raise CapacityError(f"offset {self.k} does not fit {self.d_T} values into {self.d_S}")
        if self.mode == "replicate":
            if self.r < 1:
                raise ValueError("replicate count must be >= 1")
            if self.r * self.d_T > self.d_S:
                raise CapacityError(
                    f"{self.r} replicates of {self.d_T} values need {self.r * self.d_T} slots, "
                    f"only {self.d_S} available")

    @property
    def replicates(self) -> int:
        return self.r if self.mode == "replicate" else 1

    @property
    def occupied_indices(self) -> np.ndarray:
        if self.mode == "center":
            start = (self.d_S - self.d_T) // 2
            return np.arange(start, start + self.d_T)
        if self.mode == "offset":
            return np.arange(self.k, self.k + self.d_T)
        return np.arange(self.r * self.d_T)

    def to_dict(self) -> dict:
        return {"d_T": self.d_T, "d_S": self.d_S, "mode": self.mode, "k": self.k, "r": self.r}


def build_placement_mask(layout: PlacementLayout):
    """Return ``(M, occupied)``: M is 0 where target values land, 1 on trainable padding."""
    occupied = layout.occupied_indices
    mask = np.ones(layout.d_S, dtype=np.int8)
    mask[occupied] = 0
    return mask, occupied


@dataclass
class InputTransform:
    layout: PlacementLayout
    mask: np.ndarray
    W: np.ndarray
    enforce_range: bool = False
    input_range: tuple = (-1.0, 1.0)
    occupied: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.int8)
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.mask.shape != (self.layout.d_S,) or self.W.shape != (self.layout.d_S,):
            raise ShapeError(f"mask and W must both have shape ({self.layout.d_S},)")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("mask must be binary")
        self.occupied = self.layout.occupied_indices

    @classmethod
    def create(cls, layout: PlacementLayout, overlay: bool = False, **kwargs) -> "InputTransform":
        """Transform with W = 0. ``overlay`` makes every dim trainable, data dims included."""
        if overlay:
            mask = np.ones(layout.d_S, dtype=np.int8)
        else:
            mask, _ = build_placement_mask(layout)
        return cls(layout, mask, np.zeros(layout.d_S), **kwargs)

    @property
    def theta(self) -> np.ndarray:
        return np.tanh(self.mask * self.W)

    @property
    def trainable(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def n_trainable(self) -> int:
        return int(self.mask.sum())

    def with_W(self, W) -> "InputTransform":
        return InputTransform(self.layout, self.mask.copy(), np.array(W, dtype=np.float64),
                              self.enforce_range, self.input_range)


def zero_pad(layout: PlacementLayout, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layout.d_T:
        raise ShapeError(f"expected target batch of shape (n, {layout.d_T}), got {x.shape}")
    out = np.zeros((x.shape[0], layout.d_S))
    out[:, layout.occupied_indices] = np.tile(x, layout.replicates)
    return out


def apply_transform(t: InputTransform, x) -> np.ndarray:
    """Zero-pad ``x`` into the layout and add ``tanh(M * W)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    x = x.reshape(x.shape[0], -1)
    if t.enforce_range:
        lo, hi = t.input_range
        if np.any(x < lo) or np.any(x > hi):
            raise RangeError(f"target values outside input range [{lo}, {hi}]")
    return zero_pad(t.layout, x) + t.theta


def transform_grad(t: InputTransform, grad_xtilde) -> np.ndarray:
    """Gradient with respect to W given the upstream gradient on the transformed batch."""
    g = np.asarray(grad_xtilde, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape[1] != t.layout.d_S:
        raise ShapeError(f"grad_xtilde width {g.shape[1]} != d_S {t.layout.d_S}")
    th = np.tanh(t.W)
    return g.sum(axis=0) * t.mask * (1.0 - th * th)
