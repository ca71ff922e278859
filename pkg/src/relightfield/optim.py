"""Adam optimizer (Kingma & Ba) with bias correction.

`adam_step` updates one parameter group in place. Embedding-style tables
(hash grids) use `adam_step_rows`, which applies the same update only to rows
touched by the current batch, like torch's SparseAdam; decayed moments of
untouched rows are caught up implicitly by skipping them (their gradient is
zero and they receive no update).
"""

from __future__ import annotations

import numpy as np


def adam_step(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place. ``t`` is the 1-based step."""
    grad = np.asarray(grad)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient in adam_step")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * np.square(grad)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return param, m, v


def adam_step_rows(param, grad_rows, rows, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Sparse Adam over selected rows of a 2D table.

    ``rows`` are unique sorted indices; ``grad_rows`` their gradients.
    """
    if not np.all(np.isfinite(grad_rows)):
        raise FloatingPointError("non-finite gradient in adam_step_rows")
    ms = m[rows]
    vs = v[rows]
    ms *= beta1
    ms += (1.0 - beta1) * grad_rows
    vs *= beta2
    vs += (1.0 - beta2) * np.square(grad_rows)
    m[rows] = ms
    v[rows] = vs
    m_hat = ms / (1.0 - beta1**t)
    v_hat = vs / (1.0 - beta2**t)
    param[rows] -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)
    return param, m, v


class AdamGroup:
    """Moments plus step counter for a named set of arrays with one lr."""

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p) for k, p in params.items()}
        self.v = {k: np.zeros_like(p) for k, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k, p in self.params.items():
            adam_step(
                p, grads[k], self.m[k], self.v[k], self.t,
                self.lr, self.beta1, self.beta2, self.eps,
            )
