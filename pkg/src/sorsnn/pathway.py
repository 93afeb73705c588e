"""Per-task synapse selection, pathway masking and injury.

Each task owns a pair of tensors ``a`` / ``a_tilde`` per layer. A synapse is
active for the task when ``a >= a_tilde`` and it is still available; the
task's pathway is the generated weight tensor with inactive synapses zeroed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Value
from .snn import LayerSpec


class NoUniqueSynapsesError(ValueError):
    """The target task has no synapse that is absent from every other task."""


@dataclass
class SelectionParams:
    task: int
    a: list[Value]
    a_tilde: list[Value]
    frozen: bool = False

    def values(self) -> list[Value]:
        return self.a + self.a_tilde


@dataclass
class Pathway:
    weights: list[Value]        # masked weights P = m * W
    masks: list[Value]          # binary, carries the straight-through gradient

    @property
    def active_counts(self) -> list[int]:
        return [int(m.data.sum()) for m in self.masks]

    @property
    def active_fractions(self) -> list[float]:
        return [float(m.data.mean()) for m in self.masks]


def full_availability(layers: Sequence[LayerSpec]) -> list[np.ndarray]:
    return [np.ones(spec.weight_shape, dtype=bool) for spec in layers]


def new_selection(task: int, layers: Sequence[LayerSpec], rng: np.random.Generator,
                  init_std: float = 0.01) -> SelectionParams:
    a = [Value(0.5 + init_std * rng.standard_normal(s.weight_shape), name=f"a.{task}.{s.name}")
         for s in layers]
    a_tilde = [Value(0.5 + init_std * rng.standard_normal(s.weight_shape), name=f"a~.{task}.{s.name}")
               for s in layers]
    return SelectionParams(task, a, a_tilde)


class SelectionBank:
    """Selection parameters keyed by task id."""

    def __init__(self, layers: Sequence[LayerSpec], init_std: float = 0.01):
        self.layers = list(layers)
        self.init_std = init_std
        self.params: dict[int, SelectionParams] = {}

    def __contains__(self, task: int) -> bool:
        return task in self.params

    def __getitem__(self, task: int) -> SelectionParams:
        return self.params[task]

    def tasks(self) -> list[int]:
        return list(self.params)

    def new(self, task: int, rng: np.random.Generator, relearn: bool = False) -> SelectionParams:
        if task in self.params and not relearn:
            raise ValueError(f"selection parameters for task {task} already exist")
        sel = new_selection(task, self.layers, rng, self.init_std)
        self.params[task] = sel
        return sel

    def freeze(self, task: int) -> None:
        self.params[task].frozen = True


def binary_masks(sel: SelectionParams, avail: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Gradient-free masks: ``(a >= a_tilde) & available``."""
    out = []
    for a, at, av in zip(sel.a, sel.a_tilde, avail):
        if a.shape != av.shape:
            raise ShapeError("binary_masks", a.shape, av.shape)
        out.append((a.data >= at.data) & av)
    return out


def select_pathway(weights: Sequence[Value], sel: SelectionParams, avail: Sequence[np.ndarray],
                   temperature: float = 1.0) -> Pathway:
    if not (len(weights) == len(sel.a) == len(avail)):
        raise ValueError("weights, selection params and availability must cover the same layers")
    masked, masks = [], []
    for w, a, at, av in zip(weights, sel.a, sel.a_tilde, avail):
        w = ad.as_value(w)
        if w.shape != a.shape or a.shape != av.shape:
            raise ShapeError("select_pathway", w.shape, a.shape, av.shape)
        m = ad.gate(a, at, temperature) * av.astype(np.float64)
        masks.append(m)
        masked.append(w * m)
    return Pathway(masked, masks)


@dataclass
class OverlapStats:
    dot: int
    jaccard: float


def mask_overlap(m1: Sequence[np.ndarray], m2: Sequence[np.ndarray]) -> OverlapStats:
    """Shared-active count and Jaccard index over all layers (0/0 -> 0)."""
    dot = 0
    union = 0
    for x, y in zip(m1, m2):
        x = np.asarray(x, dtype=bool)
        y = np.asarray(y, dtype=bool)
        if x.shape != y.shape:
            raise ShapeError("mask_overlap", x.shape, y.shape)
        dot += int(np.count_nonzero(x & y))
        union += int(np.count_nonzero(x | y))
    return OverlapStats(dot, dot / union if union else 0.0)


def unique_synapses(masks: Mapping[int, Sequence[np.ndarray]], target: int) -> list[np.ndarray]:
    others = [m for t, m in masks.items() if t != target]
    out = []
    for layer, mine in enumerate(masks[target]):
        u = np.asarray(mine, dtype=bool).copy()
        for other in others:
            u &= ~np.asarray(other[layer], dtype=bool)
        out.append(u)
    return out


def injure(masks: Mapping[int, Sequence[np.ndarray]], target: int, fraction: float,
           avail: Sequence[np.ndarray], seed) -> list[np.ndarray]:
    """Clear ``fraction`` of the synapses used only by ``target`` from availability.

    Returns a new availability list; the input list is not modified.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"injury fraction must lie in (0, 1], got {fraction}")
    if target not in masks:
        raise KeyError(f"no mask for task {target}")
    uniq = unique_synapses(masks, target)
    flat = np.concatenate([u.ravel() for u in uniq])
    idx = np.flatnonzero(flat)
    if idx.size == 0:
        raise NoUniqueSynapsesError(f"task {target} has no synapses unique to it")
    n_clear = int(round(fraction * idx.size))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(idx, size=n_clear, replace=False)
    new_flat = np.concatenate([np.asarray(av, dtype=bool).ravel() for av in avail])
    new_flat[chosen] = False
    out = []
    start = 0
    for av in avail:
        n = av.size
        out.append(new_flat[start:start + n].reshape(av.shape).copy())
        start += n
    return out
