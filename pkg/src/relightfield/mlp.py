"""From-scratch MLP for the transfer field: 8 weight layers, 512-wide ReLU
hidden layers, a skip connection feeding the raw input into layer 4, and a
softplus output head so predicted transfer values stay non-negative.

Forward/backward are plain matmuls (BLAS is pinned to one thread for
reproducibility). The dtype follows the parameter arrays: float32 for
training, float64 for finite-difference gates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HIDDEN = 512
N_LAYERS = 8
SKIP_LAYER = 3  # 0-based weight index whose input is concat(h, x)
OUT_DIM = 3


def softplus(x):
    return np.logaddexp(0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class MlpParams:
    weights: list  # per layer, (in, out)
    biases: list  # per layer, (out,)
    in_dim: int

    @property
    def dtype(self):
        return self.weights[0].dtype

    def layer_shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]

    def n_parameters(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            in_dim=self.in_dim,
        )


def init_mlp(
    in_dim: int,
    seed: int = 0,
    dtype=np.float32,
    hidden: int = HIDDEN,
    n_layers: int = N_LAYERS,
) -> MlpParams:
    """Kaiming-uniform fan-in init; the output layer is scaled by 0.1."""
    rng = np.random.Generator(np.random.Philox(key=[seed, 0x31337]))
    dims_in = []
    dims_out = []
    for i in range(n_layers):
        if i == 0:
            dims_in.append(in_dim)
        elif i == SKIP_LAYER:
            dims_in.append(hidden + in_dim)
        else:
            dims_in.append(hidden)
        dims_out.append(OUT_DIM if i == n_layers - 1 else hidden)
    weights = []
    biases = []
    for i, (di, do) in enumerate(zip(dims_in, dims_out)):
        bound = np.sqrt(6.0 / di)
        if i == n_layers - 1:
            bound *= 0.1
        weights.append(rng.uniform(-bound, bound, (di, do)).astype(dtype))
        biases.append(np.zeros(do, dtype=dtype))
    return MlpParams(weights=weights, biases=biases, in_dim=in_dim)


def mlp_forward(
    params: MlpParams, x: np.ndarray, want_cache: bool = False,
    check_finite: bool = True,
):
    """Softplus-mapped outputs (B, 3) for inputs (B, in_dim).

    Raises on non-finite intermediates, naming the layer (skipped when
    ``check_finite`` is off for inference-only hot paths).
    """
    x = np.ascontiguousarray(x, dtype=params.dtype)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValueError(f"expected (B, {params.in_dim}) input, got {x.shape}")
    h = x
    cache = [x] if want_cache else None
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if i == SKIP_LAYER:
            h = np.concatenate([h, x], axis=1)
        z = h @ w + b
        if check_finite and not np.all(np.isfinite(z)):
            raise FloatingPointError(f"non-finite activation in layer {i}")
        h = z if i == n - 1 else np.maximum(z, 0)
        if want_cache:
            cache.append(h)
    out = softplus(h)
    return (out, cache) if want_cache else (out, None)


def mlp_backward(params: MlpParams, cache: list, d_out: np.ndarray):
    """Reverse-mode gradients for all weights and biases plus the input.

    ``cache`` must come from `mlp_forward(..., want_cache=True)` on the same
    input. Returns (grads, d_x) where grads has per-layer "w{i}" / "b{i}"
    entries and d_x is (B, in_dim), from both the first layer and the skip.
    """
    if len(cache) != len(params.weights) + 1:
        raise ValueError("forward cache does not match parameter count")
    x = cache[0]
    n = len(params.weights)
    z_out = cache[-1]  # pre-mapping linear output
    delta = np.ascontiguousarray(d_out, dtype=params.dtype) * sigmoid(z_out)
    grads = {}
    d_x = np.zeros_like(x)
    for i in range(n - 1, -1, -1):
        h_in = cache[i]
        if i == SKIP_LAYER:
            h_in = np.concatenate([h_in, x], axis=1)
        if i != n - 1:
            # cache[i+1] holds relu(z); its positive entries pass gradient
            delta = delta * (cache[i + 1] > 0)
        grads[f"w{i}"] = h_in.T @ delta
        grads[f"b{i}"] = delta.sum(axis=0)
        delta = delta @ params.weights[i].T
        if i == SKIP_LAYER:
            d_x += delta[:, -params.in_dim:]
            delta = np.ascontiguousarray(delta[:, : -params.in_dim])
    d_x += delta
    return grads, d_x
