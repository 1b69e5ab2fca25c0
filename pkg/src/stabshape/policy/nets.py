"""Small tanh MLPs over flat parameter vectors, with a hand-written backward pass."""

from __future__ import annotations

import numpy as np


class MLP:
    """Feed-forward net: tanh on hidden layers, linear output.

    Parameters live in one flat float64 vector laid out layer by layer as
    (W row-major, then b). ``hidden=()`` gives a single affine map.
    """

    def __init__(self, n_in: int, hidden, n_out: int):
        self.sizes = [int(n_in), *[int(h) for h in hidden], int(n_out)]
        self.shapes = [(a, b) for a, b in zip(self.sizes[:-1], self.sizes[1:])]
        self.n_params = sum(a * b + b for a, b in self.shapes)

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def init(self, rng: np.random.Generator, out_scale: float = 1.0) -> np.ndarray:
        theta = np.zeros(self.n_params)
        layers = self.unpack(theta)
        for k, (W, _) in enumerate(layers):
            fan_in, fan_out = W.shape
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            W[:] = rng.uniform(-lim, lim, W.shape)
            if k == len(layers) - 1:
                W *= out_scale
        return theta

    def unpack(self, theta: np.ndarray):
        """(W, b) views into ``theta``; writes go through."""
        out, i = [], 0
        for a, b in self.shapes:
            W = theta[i : i + a * b].reshape(a, b)
            i += a * b
            out.append((W, theta[i : i + b]))
            i += b
        return out

    def forward(self, theta: np.ndarray, x: np.ndarray):
        """Returns (y, cache). ``x`` is (N, n_in)."""
        layers = self.unpack(theta)
        acts = [x]
        h = x
        for k, (W, b) in enumerate(layers):
            h = h @ W + b
            if k < len(layers) - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def __call__(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        layers = self.unpack(theta)
        h = x
        for k, (W, b) in enumerate(layers):
            h = h @ W + b
            if k < len(layers) - 1:
                h = np.tanh(h)
        return h

    def backward(self, theta: np.ndarray, acts, gy: np.ndarray, need_input: bool = True):
        """Gradient of sum(gy * y) w.r.t. (theta, x)."""
        layers = self.unpack(theta)
        grad = np.zeros_like(theta)
        glayers = self.unpack(grad)
        g = gy
        gx = None
        for k in range(len(layers) - 1, -1, -1):
            W, _ = layers[k]
            h_in = acts[k]
            gW, gb = glayers[k]
            gW[:] = h_in.T @ g
            gb[:] = g.sum(axis=0)
            if k > 0 or need_input:
                gx = g @ W.T
            if k > 0:
                g = gx * (1.0 - h_in * h_in)  # h_in is a tanh output here
        return grad, gx
