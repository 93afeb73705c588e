"""Adam over :class:`~sorsnn.autodiff.Value` leaves."""

from __future__ import annotations

import numpy as np

from .autodiff import Value


class Adam:
    def __init__(self, params: list[Value], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, lrs: list[float] | None = None, eps_list: list[float] | None = None):
        self.params = list(params)
        self.lrs = list(lrs) if lrs is not None else [lr] * len(self.params)
        if len(self.lrs) != len(self.params):
            raise ValueError("one learning rate per parameter expected")
        self.eps = list(eps_list) if eps_list is not None else [eps] * len(self.params)
        if len(self.eps) != len(self.params):
            raise ValueError("one eps per parameter expected")
        self.b1, self.b2 = betas
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = np.zeros_like(p.data)

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v, lr, eps in zip(self.params, self.m, self.v, self.lrs, self.eps):
            if lr == 0.0:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
