"""Small fully-connected networks with explicit forward/backward passes.

The whole pipeline is a fixed compute graph, so instead of a general autodiff
tape each block exposes ``forward`` returning a cache and ``backward``
consuming it. Backward passes return gradients with respect to both inputs
and parameters; analytic gradients are validated against central finite
differences in the test suite.
"""

from __future__ import annotations

import numpy as np


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


class MLP:
    """ReLU MLP with a linear output layer.

    Parameters live in ``self.params`` as [W0, b0, W1, b1, ...] and are
    updated in place by the optimizer. ``final_zero`` zero-initializes the
    output layer so the network starts as the constant-zero function
    (used for the residual decoder).
    """

    def __init__(
        self,
        sizes: list[int],
        rng: np.random.Generator,
        final_zero: bool = False,
        final_scale: float = 0.1,
        dtype=np.float64,
    ):
        self.sizes = list(sizes)
        self.dtype = np.dtype(dtype)
        self.params: list[np.ndarray] = []
        n_layers = len(sizes) - 1
        for i in range(n_layers):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            last = i == n_layers - 1
            if last and final_zero:
                W = np.zeros((fan_in, fan_out))
            elif last:
                W = rng.normal(0.0, final_scale / np.sqrt(fan_in), size=(fan_in, fan_out))
            else:
                W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            self.params.append(W.astype(self.dtype))
            self.params.append(np.zeros(fan_out, dtype=self.dtype))

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """x: (N, in_dim) -> (N, out_dim), plus the activation cache."""
        cache = [x]
        h = x
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            h = h @ W + b
            if i < n_layers - 1:
                h = relu(h)
            cache.append(h)
        return h, cache

    def backward(
        self, cache: list, dy: np.ndarray, need_param_grads: bool = True
    ) -> tuple[np.ndarray, list[np.ndarray] | None]:
        """Returns (dx, param_grads); param_grads is None when not requested."""
        n_layers = len(self.sizes) - 1
        grads: list[np.ndarray] | None = [None] * (2 * n_layers) if need_param_grads else None
        g = dy
        for i in range(n_layers - 1, -1, -1):
            W = self.params[2 * i]
            h_in = cache[i]
            if i < n_layers - 1:
                # cache[i+1] holds the post-relu activation of this layer
                g = g * (cache[i + 1] > 0)
            if need_param_grads:
                grads[2 * i] = h_in.T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ W.T
        return g, grads

    def state(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params]

    def load_state(self, arrays: list[np.ndarray]) -> None:
        if len(arrays) != len(self.params):
            raise ValueError("parameter count mismatch")
        for p, a in zip(self.params, arrays):
            if p.shape != a.shape:
                raise ValueError(f"shape mismatch {p.shape} vs {a.shape}")
            p[...] = a.astype(self.dtype)


class PositionalEncoding:
    """Deterministic sinusoidal frequency bank on normalized coordinates.

    For p in [0, 1]^3 emits [p, sin(2^k pi p), cos(2^k pi p)] for
    k = 0..n_bands-1, giving 3 + 6*n_bands output dims.
    """

    def __init__(self, n_bands: int = 4):
        self.n_bands = int(n_bands)
        self.freqs = (2.0 ** np.arange(self.n_bands)) * np.pi

    @property
    def out_dim(self) -> int:
        return 3 + 6 * self.n_bands

    def forward(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """p: (N, 3) normalized coords -> (N, out_dim); cache is the phase array."""
        phase = p[:, None, :] * self.freqs[None, :, None]  # (N, B, 3)
        n = p.shape[0]
        enc = np.concatenate(
            [p, np.sin(phase).reshape(n, -1), np.cos(phase).reshape(n, -1)], axis=1
        )
        return enc.astype(p.dtype), phase

    def backward(self, phase: np.ndarray, denc: np.ndarray) -> np.ndarray:
        """denc: (N, out_dim) -> gradient w.r.t. the normalized coords (N, 3)."""
        n = phase.shape[0]
        b = self.n_bands
        dp = denc[:, :3].copy()
        dsin = denc[:, 3 : 3 + 3 * b].reshape(n, b, 3)
        dcos = denc[:, 3 + 3 * b :].reshape(n, b, 3)
        term = dsin * np.cos(phase) - dcos * np.sin(phase)
        dp += (term * self.freqs[None, :, None]).sum(axis=1)
        return dp
