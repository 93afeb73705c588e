"""Recurrent weight generator.

One LSTM per region walks the layers of the spiking network in order. At
layer ``l`` it reads ``[x_task || x_layer]`` plus the previous hidden state,
and a per-layer affine head maps the hidden state to that layer's weights.
The last state of a region seeds the first layer of the next region.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Value, no_grad
from .snn import LayerSpec, check_regions


class UnknownTaskError(KeyError):
    pass


@dataclass
class RegulatorConfig:
    task_dim: int = 32
    layer_dim: int = 32
    hidden: int = 96
    handoff: bool = True
    init_gain: float = 1.5


@dataclass
class TaskEmbedding:
    task: int
    x: Value
    frozen: bool = False


@dataclass
class LSTMParams:
    w_x: Value      # [4H, d_in], gate rows ordered forget, input, output, cell
    w_h: Value      # [4H, H]
    b: Value        # [4H]

    def values(self) -> list[Value]:
        return [self.w_x, self.w_h, self.b]


def lstm_cell(x: Value, h: Value, c: Value, p: LSTMParams) -> tuple[Value, Value]:
    """Returns ``(c_new, o_new)``."""
    H = h.shape[0]
    z = ad.matmul(p.w_x, x) + ad.matmul(p.w_h, h) + p.b
    forget = ad.sigmoid(z[0:H])
    inp = ad.sigmoid(z[H:2 * H])
    out = ad.sigmoid(z[2 * H:3 * H])
    cell = ad.tanh(z[3 * H:4 * H])
    c_new = forget * c + inp * cell
    return c_new, out * ad.tanh(c_new)


class Regulator:
    def __init__(self, layers: Sequence[LayerSpec], cfg: RegulatorConfig | None = None,
                 rng: np.random.Generator | None = None):
        check_regions(layers)
        self.layers = list(layers)
        self.cfg = cfg or RegulatorConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        H = self.cfg.hidden
        d_in = self.cfg.task_dim + self.cfg.layer_dim
        self.n_regions = max(layer.region_id for layer in self.layers) + 1

        bound_x = 1.0 / np.sqrt(d_in)
        bound_h = 1.0 / np.sqrt(H)
        self.lstm = []
        for r in range(self.n_regions):
            self.lstm.append(LSTMParams(
                w_x=Value(rng.uniform(-bound_x, bound_x, (4 * H, d_in)), name=f"lstm{r}.w_x"),
                w_h=Value(rng.uniform(-bound_h, bound_h, (4 * H, H)), name=f"lstm{r}.w_h"),
                b=Value(rng.uniform(-bound_h, bound_h, 4 * H), name=f"lstm{r}.b"),
            ))
        self.layer_emb = [Value(rng.standard_normal(self.cfg.layer_dim), name=f"x_L.{s.name}")
                          for s in self.layers]
        self.task_emb: dict[int, TaskEmbedding] = {}

        # head scale: initial W std ~ gain / sqrt(fan_in), probed with a zero task input
        with no_grad():
            probe = self._hidden_states(Value(np.zeros(self.cfg.task_dim)))
        # head weights are stored at unit scale behind a fixed multiplier so that a
        # per-parameter adaptive step moves W at a rate independent of the hidden size
        self.head_w = []
        self.head_b = []
        self.head_scale = []
        for spec, o in zip(self.layers, probe):
            target = self.cfg.init_gain / np.sqrt(spec.fan_in)
            norm = max(float(np.linalg.norm(o.data)), 1e-8)
            self.head_scale.append(target / norm)
            self.head_w.append(Value(rng.standard_normal((spec.n_weights, H)), name=f"head.{spec.name}.w"))
            self.head_b.append(Value(np.zeros(spec.n_weights), name=f"head.{spec.name}.b"))

    # ------------------------------------------------------------- parameters
    def shared_parameters(self) -> list[Value]:
        """LSTM and head parameters (trained across every task)."""
        out = []
        for p in self.lstm:
            out.extend(p.values())
        out.extend(self.head_w)
        out.extend(self.head_b)
        return out

    def add_task(self, task: int, rng: np.random.Generator) -> TaskEmbedding:
        if task in self.task_emb:
            raise ValueError(f"task {task} already has an embedding")
        emb = TaskEmbedding(task, Value(rng.standard_normal(self.cfg.task_dim), name=f"x_T.{task}"))
        self.task_emb[task] = emb
        return emb

    def freeze(self, task: int) -> None:
        self.embedding(task).frozen = True

    def embedding(self, task: int) -> TaskEmbedding:
        try:
            return self.task_emb[task]
        except KeyError:
            raise UnknownTaskError(f"no embedding for task {task}") from None

    # ------------------------------------------------------------- generation
    def _hidden_states(self, x_task: Value) -> list[Value]:
        if x_task.shape != (self.cfg.task_dim,):
            raise ad.ShapeError("task embedding", x_task.shape, (self.cfg.task_dim,))
        H = self.cfg.hidden
        h = Value(np.zeros(H))
        c = Value(np.zeros(H))
        states = []
        prev_region = 0
        for spec, x_layer in zip(self.layers, self.layer_emb):
            if spec.region_id != prev_region and not self.cfg.handoff:
                h = Value(np.zeros(H))
                c = Value(np.zeros(H))
            prev_region = spec.region_id
            x = ad.concat([x_task, x_layer])
            c, h = lstm_cell(x, h, c, self.lstm[spec.region_id])
            states.append(h)
        return states

    def generate_from(self, x_task: Value) -> list[Value]:
        out = []
        states = self._hidden_states(x_task)
        for spec, o, hw, hb, k in zip(self.layers, states, self.head_w, self.head_b, self.head_scale):
            out.append((ad.matmul(hw, o) * k + hb).reshape(spec.weight_shape))
        return out

    def generate(self, task: int) -> list[Value]:
        """Per-layer weight tensors for ``task`` (shaped like each layer's weights)."""
        return self.generate_from(self.embedding(task).x)

    def snapshot(self, tasks: Sequence[int]) -> dict[int, list[np.ndarray]]:
        """Detached copies of the weights currently generated for ``tasks``."""
        with no_grad():
            return {t: [w.data.copy() for w in self.generate(t)] for t in tasks}


def generate_weights(regulator: Regulator, task: int) -> list[Value]:
    return regulator.generate(task)


def snapshot_targets(regulator: Regulator, tasks: Sequence[int]) -> dict[int, list[np.ndarray]]:
    return regulator.snapshot(tasks)
