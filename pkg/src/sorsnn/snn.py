"""Leaky integrate-and-fire layers driven by externally supplied weights.

The network holds no parameters of its own: every forward pass receives one
(masked) weight tensor per layer. A spike train is a :class:`Value` of shape
``[T, B, *neuron_shape]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Value

RESET_MODES = ("none", "zero", "subtract")


@dataclass
class LifConfig:
    tau: float = 0.2
    v_th: float = 0.5
    t_window: int = 4
    lam: float = 2.0
    reset_mode: str = "zero"
    surrogate_centering: str = "threshold"

    def __post_init__(self):
        if not 0.0 <= self.tau < 1.0:
            raise ValueError(f"tau must lie in [0, 1), got {self.tau}")
        if self.t_window < 1:
            raise ValueError(f"t_window must be >= 1, got {self.t_window}")
        if self.lam <= 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if self.reset_mode not in RESET_MODES:
            raise ValueError(f"reset_mode must be one of {RESET_MODES}, got {self.reset_mode!r}")


@dataclass
class LayerSpec:
    name: str
    kind: str                       # "dense" | "conv2d"
    in_shape: tuple
    out_shape: tuple
    region_id: int = 0
    kernel: int = 3
    stride: int = 1
    pad: int = 1

    def __post_init__(self):
        self.in_shape = tuple(self.in_shape)
        self.out_shape = tuple(self.out_shape)
        if self.kind == "dense":
            if len(self.out_shape) != 1:
                raise ValueError(f"{self.name}: dense out_shape must be 1-d")
        elif self.kind == "conv2d":
            if len(self.in_shape) != 3 or len(self.out_shape) != 3:
                raise ValueError(f"{self.name}: conv2d shapes must be (C, H, W)")
            _, H, W = self.in_shape
            Ho = (H + 2 * self.pad - self.kernel) // self.stride + 1
            Wo = (W + 2 * self.pad - self.kernel) // self.stride + 1
            if self.out_shape[1:] != (Ho, Wo):
                raise ValueError(f"{self.name}: out_shape {self.out_shape} inconsistent with "
                                 f"conv geometry, expected spatial {(Ho, Wo)}")
        else:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    @property
    def weight_shape(self) -> tuple:
        if self.kind == "dense":
            return (self.out_shape[0], int(np.prod(self.in_shape)))
        return (self.out_shape[0], self.in_shape[0], self.kernel, self.kernel)

    @property
    def n_weights(self) -> int:
        return int(np.prod(self.weight_shape))

    @property
    def fan_in(self) -> int:
        return int(np.prod(self.weight_shape[1:]))


def check_regions(layers: Sequence[LayerSpec]) -> None:
    ids = [layer.region_id for layer in layers]
    if ids and ids[0] != 0:
        raise ValueError("region ids must start at 0")
    for prev, cur in zip(ids, ids[1:]):
        if cur not in (prev, prev + 1):
            raise ValueError(f"region ids must be contiguous and nondecreasing, got {ids}")


def default_layers(input_shape=(1, 8, 8), n_classes: int = 2, channels=(4, 8),
                   hidden: int = 64) -> list[LayerSpec]:
    """Two conv layers (region 0) then a hidden dense and a readout layer (region 1)."""
    c, h, w = input_shape
    c1, c2 = channels
    h2, w2 = (h + 1) // 2, (w + 1) // 2
    return [
        LayerSpec("conv1", "conv2d", (c, h, w), (c1, h, w), region_id=0, kernel=3, stride=1, pad=1),
        LayerSpec("conv2", "conv2d", (c1, h, w), (c2, h2, w2), region_id=0, kernel=3, stride=2, pad=1),
        LayerSpec("fc1", "dense", (c2, h2, w2), (hidden,), region_id=1),
        LayerSpec("fc_out", "dense", (hidden,), (n_classes,), region_id=1),
    ]


def lif_step(u, current, cfg: LifConfig) -> tuple[Value, Value]:
    """One leaky integration step followed by thresholding and reset.

    Returns ``(u_next, spikes)``. The reset uses a detached copy of the spikes.
    """
    current = ad.as_value(current)
    u = ad.as_value(u)
    if u.shape != current.shape:
        raise ShapeError("lif_step", u.shape, current.shape)
    u_new = cfg.tau * u + current
    s = ad.spike(u_new, cfg.v_th, cfg.lam, cfg.surrogate_centering)
    if cfg.reset_mode == "zero":
        u_new = u_new * (1.0 - s.data)
    elif cfg.reset_mode == "subtract":
        u_new = u_new - cfg.v_th * s.data
    return u_new, s


def synaptic_current(x: Value, weights: Value, spec: LayerSpec) -> Value:
    """Weighted presynaptic sum for a batch ``x`` of shape [N, *in_shape]."""
    if tuple(weights.shape) != spec.weight_shape:
        raise ShapeError(f"{spec.name} weights", weights.shape, spec.weight_shape)
    if tuple(x.shape[1:]) != spec.in_shape:
        raise ShapeError(f"{spec.name} input", x.shape[1:], spec.in_shape)
    if spec.kind == "dense":
        flat = x.reshape(x.shape[0], -1)
        return ad.matmul(flat, ad.transpose(weights))
    return ad.conv2d(x, weights, stride=spec.stride, pad=spec.pad)


def _currents(spikes_in: Value, weights: Value, spec: LayerSpec) -> Value:
    T, B = spikes_in.shape[:2]
    flat = spikes_in.reshape((T * B,) + tuple(spikes_in.shape[2:]))
    cur = synaptic_current(flat, weights, spec)
    return cur.reshape((T, B) + spec.out_shape)


def layer_forward(spikes_in, weights, spec: LayerSpec, cfg: LifConfig) -> Value:
    """Spiking layer over the whole window: [T, B, *in_shape] -> [T, B, *out_shape]."""
    spikes_in = ad.as_value(spikes_in)
    weights = ad.as_value(weights)
    cur = _currents(spikes_in, weights, spec)
    T, B = cur.shape[:2]
    u = Value(np.zeros((B,) + spec.out_shape))
    out = []
    for t in range(T):
        u, s = lif_step(u, cur[t], cfg)
        out.append(s)
    return ad.stack(out, axis=0)


def readout_forward(spikes_in, weights, spec: LayerSpec, cfg: LifConfig) -> Value:
    """Non-spiking readout: leaky potential without reset, averaged over the window."""
    spikes_in = ad.as_value(spikes_in)
    cur = _currents(spikes_in, ad.as_value(weights), spec)
    T = cur.shape[0]
    u = None
    total = None
    for t in range(T):
        u = cur[t] if u is None else cfg.tau * u + cur[t]
        total = u if total is None else total + u
    return total * (1.0 / T)


def encode(x: np.ndarray, in_shape: tuple, t_window: int) -> Value:
    """Direct-current encoding: the real-valued input is presented at every step."""
    x = np.asarray(x, dtype=np.float64)
    B = x.shape[0]
    try:
        x = x.reshape((B,) + tuple(in_shape))
    except ValueError:
        raise ShapeError("encode", x.shape, in_shape) from None
    return Value(np.broadcast_to(x, (t_window,) + x.shape).copy())


def network_forward(x, pathways: Sequence, layers: Sequence[LayerSpec], cfg: LifConfig,
                    return_trains: bool = False):
    """Propagate a batch through every layer; the last layer is the readout.

    ``x`` is either a real-valued batch [B, ...] (direct encoding) or an
    already encoded train [T, B, *in_shape] passed as a Value.
    """
    if len(pathways) != len(layers):
        raise ValueError(f"expected {len(layers)} pathway tensors, got {len(pathways)}")
    if isinstance(x, Value):
        h = x
    else:
        h = encode(x, layers[0].in_shape, cfg.t_window)
    trains = []
    for spec, w in zip(layers[:-1], pathways[:-1]):
        if w is None:
            raise ValueError(f"missing pathway for layer {spec.name}")
        h = layer_forward(h, w, spec, cfg)
        trains.append(h)
    if pathways[-1] is None:
        raise ValueError(f"missing pathway for layer {layers[-1].name}")
    logits = readout_forward(h, pathways[-1], layers[-1], cfg)
    if return_trains:
        return logits, trains
    return logits
