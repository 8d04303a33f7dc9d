"""Fully connected networks over a flat parameter vector.

Parameter layout is layer by layer: the (fan_in, fan_out) weight matrix in
row-major order followed by that layer's bias.  The final layer is affine
with no activation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, NumericError

ACTIVATION_NAMES = ("tanh", "relu", "silu")


def _act_np(name: str, x: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "silu":
        return x * ad.sigmoid_np(x)
    raise ValueError(f"unknown activation {name!r}")


def param_count(layer_sizes: Sequence[int]) -> int:
    return int(sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:])))


@dataclass(frozen=True)
class Mlp:
    layer_sizes: tuple
    activation: str
    params: np.ndarray

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise DimensionError(f"invalid layer sizes {sizes}")
        if self.activation not in ACTIVATION_NAMES:
            raise ValueError(f"activation must be one of {ACTIVATION_NAMES}")
        params = np.array(self.params, dtype=float).ravel()
        if params.size != param_count(sizes):
            raise DimensionError(f"expected {param_count(sizes)} parameters, got {params.size}")
        params.setflags(write=False)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "params", params)

    @classmethod
    def init(cls, layer_sizes, activation="tanh", rng=None, zero_last=False) -> "Mlp":
        """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
        rng = np.random.default_rng(0) if rng is None else rng
        chunks = []
        sizes = list(layer_sizes)
        for li, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = np.sqrt(6.0 / (a + b))
            W = rng.uniform(-bound, bound, size=(a, b))
            if zero_last and li == len(sizes) - 2:
                W = np.zeros((a, b))
            chunks += [W.ravel(), np.zeros(b)]
        return cls(tuple(sizes), activation, np.concatenate(chunks))

    @classmethod
    def zeros(cls, layer_sizes, activation="tanh") -> "Mlp":
        return cls(tuple(layer_sizes), activation, np.zeros(param_count(layer_sizes)))

    @property
    def param_count(self) -> int:
        return self.params.size

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def to_dict(self, seed: int = 0) -> dict:
        """JSON checkpoint; ``repr``-exact floats survive a json round trip."""
        return {"format_version": 1, "layer_sizes": list(self.layer_sizes), "activation": self.activation,
                "params": [float(v) for v in self.params], "seed": int(seed)}

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        if d.get("format_version") != 1:
            raise ValueError(f"unsupported checkpoint version {d.get('format_version')!r}")
        return cls(tuple(d["layer_sizes"]), d["activation"], np.array(d["params"], dtype=float))

    def with_params(self, params) -> "Mlp":
        return replace(self, params=np.asarray(params, dtype=float))

    def slices(self):
        """(weight slice, bias slice, fan_in, fan_out) for each layer."""
        out, off = [], 0
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = slice(off, off + a * b)
            off += a * b
            bias = slice(off, off + b)
            off += b
            out.append((w, bias, a, b))
        return out

    def unpack(self, params=None):
        p = self.params if params is None else params
        return [(p[w].reshape(a, b), p[bs]) for w, bs, a, b in self.slices()]

    def __call__(self, x) -> np.ndarray:
        return mlp_forward(self, x)

    def forward_node(self, params: ad.Node, x) -> ad.Node:
        """Forward pass on a tape; ``params`` is a node holding this net's flat parameters."""
        tape = params.tape
        h = tape.lift(x)
        if h.value.ndim == 1:
            h = ad.reshape(h, (1, -1))
        if h.value.shape[-1] != self.in_dim:
            raise DimensionError(f"input has dimension {h.value.shape[-1]}, expected {self.in_dim}")
        act = ad.ACTIVATIONS[self.activation]
        layers = self.slices()
        for li, (w, bs, a, b) in enumerate(layers):
            W = ad.reshape(params[w], (a, b))
            h = h @ W + params[bs]
            if li < len(layers) - 1:
                h = act(h)
            ad.check_finite(h, layer=li, where="mlp forward")
        return h


def mlp_forward(model: Mlp, x) -> np.ndarray:
    """Evaluate the network on a vector or an (n, in_dim) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[-1] != model.in_dim:
        raise DimensionError(f"input has dimension {h.shape[-1]}, expected {model.in_dim}")
    layers = model.unpack()
    for li, (W, b) in enumerate(layers):
        h = h @ W + b
        if li < len(layers) - 1:
            h = _act_np(model.activation, h)
        if not np.all(np.isfinite(h)):
            raise NumericError("non-finite activation", layer=li, where="mlp forward")
    return h[0] if single else h


def grad(model: Mlp, x, loss: Callable[[ad.Node], ad.Node]) -> np.ndarray:
    """d loss(model(x)) / d params by reverse accumulation."""
    return value_and_grad(model, x, loss)[1]


def value_and_grad(model: Mlp, x, loss: Callable[[ad.Node], ad.Node]) -> tuple[float, np.ndarray]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1

    def fn(p):
        out = model.forward_node(p, x)
        if single:
            out = ad.reshape(out, (model.out_dim,))
        return loss(out)

    return ad.value_and_grad(fn, model.params)
