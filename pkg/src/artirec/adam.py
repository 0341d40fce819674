"""Plain Adam with bias correction, over a dict of named numpy arrays."""

from __future__ import annotations

import numpy as np

from . import _kernels


class Adam:
    """Updates parameters in place from same-shaped gradient arrays.

    One shared learning rate. Updates run through a fused serial kernel,
    so repeated runs are bit-reproducible.
    """

    def __init__(self, params: dict, lr: float = 0.01, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            _kernels.adam_update(
                self.params[name],
                np.ascontiguousarray(g, dtype=np.float64),
                self.m[name],
                self.v[name],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                c1,
                c2,
            )
