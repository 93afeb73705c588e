"""Training objective: cross-entropy plus memory, orthogonality and 0.5-anchoring terms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Value
from .pathway import SelectionParams


@dataclass
class LossConfig:
    alpha: float = 0.5
    beta: float = 1e-5
    gamma: float = 1e-4
    orth_include_self: bool = False
    orth_on_masks: bool = True
    mem_all_past: bool = False
    # during injury repair: "protect" regenerates every other task's weights and holds
    # them at their snapshots; "pull" draws the repaired task's weights toward them
    repair_memory: str = "protect"

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.repair_memory not in ("protect", "pull"):
            raise ValueError(f"repair_memory must be 'protect' or 'pull', got {self.repair_memory!r}")


@dataclass
class LossBreakdown:
    l_class: Value
    l_mem: Value
    l_orth: Value
    l_anchor: Value
    total: Value

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data) for k in ("l_class", "l_mem", "l_orth", "l_anchor", "total")}


def classification_loss(logits: Value, labels) -> Value:
    """Mean cross-entropy over the batch."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeError("classification_loss", logits.shape, labels.shape)
    n_cls = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise ValueError(f"label out of range [0, {n_cls})")
    picked = logits[np.arange(labels.shape[0]), labels]
    return ad.mean(ad.logsumexp(logits, axis=1) - picked)


def memory_loss(current: Sequence[Value], target: Sequence[np.ndarray] | None) -> Value:
    """Euclidean norm of the concatenated difference to a detached target; 0 without target."""
    if target is None:
        return Value(0.0)
    if len(current) != len(target):
        raise ValueError("memory loss: layer count mismatch")
    diffs = []
    for w, t in zip(current, target):
        if tuple(w.shape) != tuple(np.shape(t)):
            raise ShapeError("memory_loss", w.shape, np.shape(t))
        diffs.append((w - np.asarray(t)).reshape(-1))
    return ad.l2norm(ad.concat(diffs))


def orthogonal_loss(current: Sequence[Value], past: Sequence[Sequence]) -> Value:
    """Sum over past tasks, layers and elements of ``current * past``.

    Past operands are treated as constants.
    """
    total = Value(0.0)
    for other in past:
        for cur, prev in zip(current, other):
            prev = prev.data if isinstance(prev, Value) else np.asarray(prev, dtype=np.float64)
            total = total + ad.sum_(cur * prev)
    return total


def anchor_loss(sel: SelectionParams) -> Value:
    total = Value(0.0)
    for p in sel.values():
        total = total + ad.sum_(ad.square(p - 0.5))
    return total


def total_loss(l_class: Value, l_mem: Value, l_orth: Value, l_anchor: Value,
               cfg: LossConfig) -> LossBreakdown:
    total = l_class + cfg.alpha * l_mem + cfg.beta * l_orth + cfg.gamma * l_anchor
    return LossBreakdown(l_class, ad.as_value(l_mem), ad.as_value(l_orth), ad.as_value(l_anchor), total)
