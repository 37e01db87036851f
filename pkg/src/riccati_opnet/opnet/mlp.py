"""Fully connected networks with explicit reverse-mode gradients."""

import math

import numpy as np

RELU = "relu"
TANH = "tanh"
GELU = "gelu"
ACTIVATIONS = (RELU, TANH, GELU)

_GELU_C = math.sqrt(2.0 / math.pi)


def activate(name, z):
    if name == TANH:
        return np.tanh(z)
    if name == RELU:
        return np.maximum(z, 0.0)
    if name == GELU:
        return 0.5 * z * (1.0 + np.tanh(_GELU_C * (z + 0.044715 * z ** 3)))
    raise ValueError(f"unknown activation {name!r}")


def activate_grad(name, z):
    if name == TANH:
        return 1.0 - np.tanh(z) ** 2
    if name == RELU:
        return (z > 0.0).astype(z.dtype)
    if name == GELU:
        u = _GELU_C * (z + 0.044715 * z ** 3)
        th = np.tanh(u)
        du = _GELU_C * (1.0 + 3.0 * 0.044715 * z ** 2)
        return 0.5 * (1.0 + th) + 0.5 * z * (1.0 - th ** 2) * du
    raise ValueError(f"unknown activation {name!r}")


class Mlp:
    """Affine layers with a hidden activation and a linear output layer."""

    def __init__(self, widths, activation=TANH, rng=None):
        if len(widths) < 2:
            raise ValueError("an Mlp needs at least input and output widths")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.widths = [int(w) for w in widths]
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self):
        return len(self.weights)

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def count_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward(self, x, cache=False):
        """Apply the network to rows of ``x``; optionally keep the tape."""
        tape = []
        h = x
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if cache:
                tape.append((h, z))
            h = z if i == last else activate(self.activation, z)
        return (h, tape) if cache else h

    def backward(self, tape, grad_out, need_params=True):
        """Gradients of a scalar loss given ``dL/d(output)``.

        Returns ``(param_grads, grad_input)`` with ``param_grads`` ordered
        like :meth:`params`; with ``need_params=False`` only the input
        gradient is formed and ``param_grads`` is ``None``.
        """
        grads = [None] * (2 * self.n_layers)
        g = grad_out
        for i in range(self.n_layers - 1, -1, -1):
            h_in, z = tape[i]
            if i != self.n_layers - 1:
                g = g * activate_grad(self.activation, z)
            if need_params:
                grads[2 * i] = h_in.T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return (grads if need_params else None), g

    def set_params(self, arrays):
        arrays = list(arrays)
        self.weights = [np.array(a, dtype=float) for a in arrays[0::2]]
        self.biases = [np.array(a, dtype=float) for a in arrays[1::2]]

    def describe(self):
        return {"widths": self.widths, "activation": self.activation}
