"""Small dense networks in NumPy with hand-written backprop and Adam.

Checkpoint layout (``.mlp`` files)::

    b"WBMLP\\n"                       magic
    b"version 1\\n"                   format version
    <one line of JSON>\\n             {"sizes": [...], "output": "tanh"|"identity", "dtype": "<f8"}
    raw little-endian float64 data   W0 (row-major, in x out), b0, W1, b1, ...

Round trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MAGIC = b"WBMLP\n"
VERSION = 1
ACTIVATIONS = ("tanh", "identity")


class Mlp:
    """Fully connected network with ReLU hidden layers.

    Inputs may be a single vector ``(in,)`` or a batch ``(n, in)``; the
    output has the matching rank.
    """

    def __init__(self, sizes: Sequence[int], output: str = "identity",
                 rng: Optional[np.random.Generator] = None):
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise ValueError(f"bad layer sizes {sizes}")
        if output not in ACTIVATIONS:
            raise ValueError(f"output activation must be one of {ACTIVATIONS}")
        self.sizes = [int(s) for s in sizes]
        self.output = output
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        net = Mlp.__new__(Mlp)
        net.sizes = list(self.sizes)
        net.output = self.output
        net.weights = [w.copy() for w in self.weights]
        net.biases = [b.copy() for b in self.biases]
        return net

    def _check_input(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got shape {x.shape}")
        return x2, single

    def forward(self, x) -> np.ndarray:
        y, _ = self.forward_cache(x)
        return y

    __call__ = forward

    def forward_cache(self, x):
        """Forward pass that also returns the activations needed by :meth:`backward`."""
        h, single = self._check_input(x)
        acts = [h]
        last = len(self.weights) - 1
        z = h
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                h = np.maximum(z, 0.0)
            else:
                h = np.tanh(z) if self.output == "tanh" else z
            acts.append(h)
        y = h[0] if single else h
        return y, (acts, single, z)

    @staticmethod
    def preactivation(cache) -> np.ndarray:
        """Output-layer values before the output activation, batch-shaped."""
        return cache[2]

    def backward(self, cache, dy, dz=None) -> tuple[list[np.ndarray], np.ndarray]:
        """Reverse-mode gradients of ``sum(dy * y)``.

        ``dz`` is an optional extra gradient on the output pre-activation,
        added after the output activation's derivative (for penalties on
        the pre-activation). Returns parameter gradients ordered like
        :attr:`params` and the gradient with respect to the input.
        """
        acts, single, _ = cache
        dy = np.asarray(dy, dtype=float)
        g = dy[None, :] if single else dy
        if g.shape != acts[-1].shape:
            raise ValueError(f"output gradient shape {dy.shape} does not match output")
        if self.output == "tanh":
            g = g * (1.0 - acts[-1] ** 2)
        if dz is not None:
            dz = np.asarray(dz, dtype=float)
            g = g + (dz[None, :] if single else dz)
        grads: list[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = acts[i]
            grads.append(g.sum(axis=0))
            grads.append(h_in.T @ g)
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (acts[i] > 0)
        grads.reverse()  # now [W0, b0, W1, b1, ...]
        dx = g[0] if single else g
        return grads, dx

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = json.dumps({"sizes": self.sizes, "output": self.output, "dtype": "<f8"})
        flat = np.concatenate([p.ravel() for p in self.params]).astype("<f8")
        with path.open("wb") as fh:
            fh.write(MAGIC)
            fh.write(f"version {VERSION}\n".encode())
            fh.write(meta.encode() + b"\n")
            fh.write(flat.tobytes())

    @classmethod
    def load(cls, path) -> "Mlp":
        blob = Path(path).read_bytes()
        if not blob.startswith(MAGIC):
            raise ValueError(f"{path}: not an MLP checkpoint")
        rest = blob[len(MAGIC):]
        vline, rest = rest.split(b"\n", 1)
        if vline != f"version {VERSION}".encode():
            raise ValueError(f"{path}: unsupported checkpoint {vline!r}")
        mline, data = rest.split(b"\n", 1)
        meta = json.loads(mline)
        net = cls.__new__(cls)
        net.sizes = [int(s) for s in meta["sizes"]]
        net.output = meta["output"]
        flat = np.frombuffer(data, dtype="<f8")
        expected = sum(a * b + b for a, b in zip(net.sizes[:-1], net.sizes[1:]))
        if flat.size != expected:
            raise ValueError(f"{path}: expected {expected} parameters, found {flat.size}")
        net.weights, net.biases = [], []
        pos = 0
        for a, b in zip(net.sizes[:-1], net.sizes[1:]):
            net.weights.append(flat[pos:pos + a * b].reshape(a, b).astype(float))
            pos += a * b
            net.biases.append(flat[pos:pos + b].astype(float))
            pos += b
        return net


class Adam:
    """Adam with bias correction; updates the network's arrays in place."""

    def __init__(self, net: Mlp, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in net.params]
        self.v = [np.zeros_like(p) for p in net.params]
        self.t = 0

    def step(self, net: Mlp, grads: Sequence[np.ndarray]) -> Mlp:
        params = net.params
        if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
            raise ValueError("gradient shapes do not match parameters")
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise ValueError("non-finite gradient")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return net


def soft_update(target: Mlp, source: Mlp, polyak: float) -> None:
    """Move ``target`` towards ``source``: θ' ← polyak·θ + (1 − polyak)·θ'."""
    for t, s in zip(target.params, source.params):
        t *= 1.0 - polyak
        t += polyak * s
