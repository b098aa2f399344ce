"""Adam optimizer over named parameter arrays, with lazy row updates.

Hash-table gradients are sparse (only rows touched by the batch), so `step`
accepts an optional row-index set per array and updates moments and
parameters for those rows only; untouched rows keep their moments, which is
the convention of fused hash-grid trainers. Bias correction always uses the
global step counter.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Adam"]


class Adam:
    def __init__(
        self,
        params: dict[str, np.ndarray],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-15,
    ) -> None:
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(
        self,
        grads: dict[str, np.ndarray],
        lr: float | dict[str, float],
        touched: dict[str, np.ndarray] | None = None,
    ) -> None:
        """Apply one update in place. `lr` may be per-array.

        `touched[key]`, when present, restricts the update of that array to
        the given row indices (first axis).
        """
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for key, p in self.params.items():
            g = grads.get(key)
            if g is None:
                continue
            lr_k = lr[key] if isinstance(lr, dict) else lr
            rows = touched.get(key) if touched is not None else None
            m, v = self.m[key], self.v[key]
            if rows is None:
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
                p -= lr_k * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            else:
                gr = g[rows]
                m[rows] = self.beta1 * m[rows] + (1.0 - self.beta1) * gr
                v[rows] = self.beta2 * v[rows] + (1.0 - self.beta2) * (gr * gr)
                p[rows] -= (
                    lr_k * (m[rows] / bc1) / (np.sqrt(v[rows] / bc2) + self.eps)
                )

    def reset(self) -> None:
        for k in self.m:
            self.m[k][:] = 0.0
            self.v[k][:] = 0.0
        self.step_count = 0
