"""Small fully-connected networks with hand-written backpropagation.

Hidden layers use tanh; the output layer is tanh (policy networks, keeps
actions in the unit box) or identity (value networks).  ``backward``
consumes the activations cached by the most recent ``forward`` and returns
exact reverse-mode gradients for every parameter plus the input, which the
tests cross-check against central finite differences.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class MlpGrads(NamedTuple):
    weights: list[np.ndarray]
    biases: list[np.ndarray]


class Mlp:
    """Feed-forward net; float64 parameters stored as (fan_in, fan_out)."""

    def __init__(self, sizes, output_activation: str = "identity", rng=None):
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output size")
        if output_activation not in ("identity", "tanh"):
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.sizes = list(sizes)
        self.output_activation = output_activation
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))
        self._cache: list[np.ndarray] | None = None

    @classmethod
    def from_params(cls, sizes, output_activation, weights, biases) -> "Mlp":
        net = cls(sizes, output_activation)
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != net.weights[i].shape or b.shape != net.biases[i].shape:
                raise ValueError("parameter shapes do not match the layer sizes")
            net.weights[i] = np.array(w, dtype=float)
            net.biases[i] = np.array(b, dtype=float)
        return net

    def copy(self) -> "Mlp":
        return Mlp.from_params(self.sizes, self.output_activation, self.weights, self.biases)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def forward(self, x) -> np.ndarray:
        """Evaluate the net; accepts a single vector or a (batch, dim) array."""
        arr = np.asarray(x, dtype=float)
        single = arr.ndim == 1
        if single:
            arr = arr[None, :]
        if arr.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input dim {self.sizes[0]}, got {arr.shape[1]}")
        acts = [arr]
        for i in range(self.n_layers):
            z = acts[-1] @ self.weights[i] + self.biases[i]
            last = i == self.n_layers - 1
            if not last or self.output_activation == "tanh":
                z = np.tanh(z)
            acts.append(z)
        self._cache = acts
        out = acts[-1]
        return out[0] if single else out

    def backward(self, grad_output) -> tuple[MlpGrads, np.ndarray]:
        """Gradients of ``sum(grad_output * output)`` w.r.t. params and input.

        Requires a preceding ``forward``; per-sample contributions are summed
        over the batch.
        """
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        acts = self._cache
        g = np.asarray(grad_output, dtype=float)
        single = g.ndim == 1
        if single:
            g = g[None, :]
        if g.shape != acts[-1].shape:
            raise ValueError(
                f"grad_output shape {g.shape} does not match output {acts[-1].shape}"
            )
        if self.output_activation == "tanh":
            delta = g * (1.0 - acts[-1] ** 2)
        else:
            delta = g.copy()
        d_weights: list[np.ndarray] = [None] * self.n_layers
        d_biases: list[np.ndarray] = [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            d_weights[i] = acts[i].T @ delta
            d_biases[i] = delta.sum(axis=0)
            back = delta @ self.weights[i].T
            if i > 0:
                delta = back * (1.0 - acts[i] ** 2)
            else:
                grad_input = back
        return MlpGrads(d_weights, d_biases), (grad_input[0] if single else grad_input)

    def apply_gradients(self, grads: MlpGrads, scale: float) -> None:
        """Shift every parameter by ``scale`` times its gradient."""
        for i in range(self.n_layers):
            self.weights[i] += scale * grads.weights[i]
            self.biases[i] += scale * grads.biases[i]

    def blend_from(self, online: "Mlp", kappa: float) -> None:
        """Soft update: self <- kappa * self + (1 - kappa) * online."""
        for i in range(self.n_layers):
            self.weights[i] = kappa * self.weights[i] + (1.0 - kappa) * online.weights[i]
            self.biases[i] = kappa * self.biases[i] + (1.0 - kappa) * online.biases[i]

    def params_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_params_flat(self, flat: np.ndarray) -> None:
        i = 0
        for layer in range(self.n_layers):
            w = self.weights[layer]
            self.weights[layer] = flat[i : i + w.size].reshape(w.shape).copy()
            i += w.size
            b = self.biases[layer]
            self.biases[layer] = flat[i : i + b.size].copy()
            i += b.size
        if i != flat.size:
            raise ValueError("flat parameter vector has the wrong length")
