"""Invertible preconditioners applied to target data before flow matching.

Four kinds share one interface (``forward``, ``inverse``, ``log_det``):

* ``identity``
* ``whitening``: x -> (Sigma_hat + ridge I)^{-1/2} (x - mu)
* ``normalizing_flow``: an affine-coupling flow trained by maximum likelihood
* ``flow_pushforward``: backward integration of a low-capacity CFM field
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .data import LabeledPoints
from .errors import DimensionError, NumericError, SampleSizeError
from .flowmatch import TrainedField, as_sampler, integrate_backward, integrate_forward
from .linalg import inv_sqrt, sample_covariance, sqrtm, sym_eig
from .mlp import Mlp, param_count
from .optim import OptimizerState, optimizer_step

LOG_2PI = float(np.log(2.0 * np.pi))


class Preconditioner:
    kind = "base"

    def forward(self, x) -> np.ndarray:
        raise NotImplementedError

    def inverse(self, y) -> np.ndarray:
        raise NotImplementedError

    def log_det(self, x):
        """log |det D forward(x)|, or None when not available."""
        return None

    def to_dict(self) -> dict:
        raise NotImplementedError


class IdentityPreconditioner(Preconditioner):
    kind = "identity"

    def forward(self, x):
        return np.array(x, dtype=float)

    def inverse(self, y):
        return np.array(y, dtype=float)

    def log_det(self, x):
        x = np.asarray(x)
        return 0.0 if x.ndim == 1 else np.zeros(x.shape[0])

    def to_dict(self):
        return {"format_version": 1, "kind": self.kind}


@dataclass
class WhiteningPreconditioner(Preconditioner):
    matrix: np.ndarray
    inverse_matrix: np.ndarray
    mean: np.ndarray
    log_abs_det: float
    kind = "whitening"

    def forward(self, x):
        return (np.asarray(x, dtype=float) - self.mean) @ self.matrix.T

    def inverse(self, y):
        return np.asarray(y, dtype=float) @ self.inverse_matrix.T + self.mean

    def log_det(self, x):
        x = np.asarray(x)
        return self.log_abs_det if x.ndim == 1 else np.full(x.shape[0], self.log_abs_det)

    def to_dict(self):
        return {
            "format_version": 1,
            "kind": self.kind,
            "matrix": self.matrix.tolist(),
            "inverse_matrix": self.inverse_matrix.tolist(),
            "mean": self.mean.tolist(),
            "log_abs_det": self.log_abs_det,
        }


def whitening_from_data(points, ridge: float = 0.0, centered: bool = False) -> WhiteningPreconditioner:
    """Whitening by the inverse square root of the sample second moment.

    ``centered=True`` subtracts the sample mean first (for data with nonzero
    mean, such as the Swiss roll).  log |det| = -1/2 sum log(sigma_i + ridge).
    """
    X = points.points if isinstance(points, LabeledPoints) else np.asarray(points, dtype=float)
    n, d = X.shape
    if n < d + 1:
        raise SampleSizeError(f"need at least {d + 1} points for whitening in dimension {d}")
    mu = X.mean(axis=0) if centered else np.zeros(d)
    S = sym_eig(sample_covariance(X, centered=centered))
    M = inv_sqrt(S, ridge)
    Minv = S.apply_function(lambda w: np.sqrt(w + ridge))
    logdet = -0.5 * float(np.sum(np.log(S.eigvals + ridge)))
    return WhiteningPreconditioner(M, Minv, mu, logdet)


# --------------------------------------------------------------------------
# affine coupling flow


def _coupling_partitions(dim: int, n_layers: int, seed: int):
    """(conditioning indices, transformed indices) for each layer.

    d = 2 alternates which coordinate is transformed.  For d > 2 each layer
    splits a seeded random permutation into halves, alternating which half is
    transformed.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xF10]))
    parts = []
    for layer in range(n_layers):
        order = np.arange(dim) if dim == 2 else rng.permutation(dim)
        half = dim // 2
        a, b = order[:half], order[half:]
        cond, trans = (a, b) if layer % 2 == 0 else (b, a)
        if dim == 2:
            cond, trans = (np.array([0]), np.array([1])) if layer % 2 == 0 else (np.array([1]), np.array([0]))
        parts.append((np.sort(cond), np.sort(trans)))
    return parts


@dataclass
class CouplingFlow(Preconditioner):
    """Stack of affine coupling layers.

    Layer l keeps x[cond] and maps x[trans] -> x[trans] * exp(s) + b where
    s = clamp * tanh(raw / clamp), (raw, b) computed from x[cond] by the
    layer's scale and shift networks.  log |det| is the sum of s.
    """

    dim: int
    partitions: list
    scale_nets: list
    shift_nets: list
    scale_clamp: float = 3.0
    perm_seed: int = 0
    train_log: list = field(default_factory=list)
    kind = "normalizing_flow"

    @property
    def n_layers(self) -> int:
        return len(self.partitions)

    @classmethod
    def init(cls, dim: int, n_layers: int = 6, hidden=(32, 32), activation: str = "tanh",
             scale_clamp: float = 3.0, seed: int = 0, zero_init: bool = True) -> "CouplingFlow":
        """``zero_init`` zeroes each net's last layer so the flow starts as the identity."""
        if n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        parts = _coupling_partitions(dim, n_layers, seed)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC0F]))
        scale, shift = [], []
        for cond, trans in parts:
            sizes = (len(cond), *hidden, len(trans))
            scale.append(Mlp.init(sizes, activation, rng, zero_last=zero_init))
            shift.append(Mlp.init(sizes, activation, rng, zero_last=zero_init))
        return cls(dim, parts, scale, shift, scale_clamp, seed)

    # flat parameter vector: layer by layer, scale net then shift net
    @property
    def params(self) -> np.ndarray:
        return np.concatenate([p for s, b in zip(self.scale_nets, self.shift_nets) for p in (s.params, b.params)])

    def _offsets(self):
        off, out = 0, []
        for s, b in zip(self.scale_nets, self.shift_nets):
            out.append((slice(off, off + s.param_count), slice(off + s.param_count, off + s.param_count + b.param_count)))
            off += s.param_count + b.param_count
        return out

    def with_params(self, params) -> "CouplingFlow":
        params = np.asarray(params, dtype=float)
        scale, shift = [], []
        for (ss, bs), s, b in zip(self._offsets(), self.scale_nets, self.shift_nets):
            scale.append(s.with_params(params[ss]))
            shift.append(b.with_params(params[bs]))
        return CouplingFlow(self.dim, self.partitions, scale, shift, self.scale_clamp, self.perm_seed, self.train_log)

    def _clamp(self, raw):
        return self.scale_clamp * np.tanh(raw / self.scale_clamp)

    def forward_with_logdet(self, x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        if X.shape[1] != self.dim:
            raise DimensionError(f"expected dimension {self.dim}, got {X.shape[1]}")
        y = X.copy()
        logdet = np.zeros(X.shape[0])
        for li, ((cond, trans), sn, bn) in enumerate(zip(self.partitions, self.scale_nets, self.shift_nets)):
            h = y[:, cond]
            s = self._clamp(sn(h))
            y[:, trans] = y[:, trans] * np.exp(s) + bn(h)
            logdet += s.sum(axis=1)
            if not np.all(np.isfinite(y)):
                raise NumericError("non-finite output", layer=li, where="coupling forward")
        if np.ndim(x) == 1:
            return y[0], float(logdet[0])
        return y, logdet

    def forward(self, x):
        return self.forward_with_logdet(x)[0]

    def log_det(self, x):
        return self.forward_with_logdet(x)[1]

    def inverse(self, y):
        Y = np.atleast_2d(np.asarray(y, dtype=float))
        x = Y.copy()
        for li in reversed(range(self.n_layers)):
            cond, trans = self.partitions[li]
            h = x[:, cond]
            s = self._clamp(self.scale_nets[li](h))
            x[:, trans] = (x[:, trans] - self.shift_nets[li](h)) * np.exp(-s)
            if not np.all(np.isfinite(x)):
                raise NumericError("non-finite output", layer=li, where="coupling inverse")
        return x[0] if np.ndim(y) == 1 else x

    def forward_node(self, params: ad.Node, X: np.ndarray):
        """Tape version of the forward pass: returns (y, per-sample log det) nodes."""
        tape = params.tape
        y = tape.constant(X)
        logdet = None
        order = None
        for li, ((ss, bs), (cond, trans)) in enumerate(zip(self._offsets(), self.partitions)):
            h = y[:, cond]
            raw = self.scale_nets[li].forward_node(params[ss], h)
            s = ad.tanh(raw * (1.0 / self.scale_clamp)) * self.scale_clamp
            shift = self.shift_nets[li].forward_node(params[bs], h)
            new_trans = y[:, trans] * ad.exp(s) + shift
            order = np.argsort(np.concatenate([cond, trans]))
            y = ad.concatenate([h, new_trans], axis=1)[:, order]
            ls = ad.sum_(s, axis=1)
            logdet = ls if logdet is None else logdet + ls
        return y, logdet

    def nll_node(self, params: ad.Node, X: np.ndarray) -> ad.Node:
        y, logdet = self.forward_node(params, X)
        quad = ad.sum_(ad.square(y), axis=1) * 0.5
        return ad.mean(quad - logdet) + 0.5 * self.dim * LOG_2PI

    def nll(self, X) -> float:
        """Mean negative log-likelihood under the standard-normal base, in nats."""
        y, logdet = self.forward_with_logdet(np.atleast_2d(X))
        return float(np.mean(0.5 * np.sum(y**2, axis=1) - logdet) + 0.5 * self.dim * LOG_2PI)

    def to_dict(self):
        return {
            "format_version": 1,
            "kind": self.kind,
            "dim": self.dim,
            "scale_clamp": self.scale_clamp,
            "seed": self.perm_seed,
            "partitions": [[c.tolist(), t.tolist()] for c, t in self.partitions],
            "nets": [
                {"layer_sizes": list(n.layer_sizes), "activation": n.activation, "params": n.params.tolist()}
                for pair in zip(self.scale_nets, self.shift_nets) for n in pair
            ],
        }

    @classmethod
    def from_dict(cls, d):
        nets = [Mlp(tuple(n["layer_sizes"]), n["activation"], np.array(n["params"])) for n in d["nets"]]
        parts = [(np.array(c, dtype=int), np.array(t, dtype=int)) for c, t in d["partitions"]]
        return cls(int(d["dim"]), parts, nets[0::2], nets[1::2], float(d["scale_clamp"]), int(d["seed"]))


def coupling_forward(flow: CouplingFlow, x):
    """(y, log |det D flow(x)|)."""
    return flow.forward_with_logdet(x)


def coupling_inverse(flow: CouplingFlow, y):
    return flow.inverse(y)


@dataclass(frozen=True)
class NFConfig:
    n_layers: int = 6
    hidden: tuple = (32, 32)
    activation: str = "tanh"
    scale_clamp: float = 3.0
    lr: float = 2e-3
    batch: int = 256
    steps: int = 2000
    seed: int = 0


def nf_train(points, config: NFConfig = NFConfig(), init: CouplingFlow | None = None) -> CouplingFlow:
    """Maximum-likelihood fit with Adam; ``train_log`` holds (step, mean NLL in nats)."""
    draw = as_sampler(points)
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 0x4E5]))
    dim = draw(1, np.random.default_rng(0)).shape[1]
    flow = init or CouplingFlow.init(dim, config.n_layers, config.hidden, config.activation,
                                     config.scale_clamp, config.seed)
    params = flow.params.copy()
    opt = OptimizerState.create("adam", params.size, config.lr)
    log = []
    for step in range(1, config.steps + 1):
        X = draw(config.batch, rng)
        try:
            loss, g = ad.value_and_grad(lambda p: flow.nll_node(p, X), params)
            params, opt = optimizer_step(opt, params, g)
        except NumericError as exc:
            raise NumericError("normalizing flow training diverged", step=step, where="nf_train") from exc
        log.append((step, loss))
    out = flow.with_params(params)
    out.train_log = log
    return out


# --------------------------------------------------------------------------
# low-capacity flow pushforward


@dataclass
class FlowPushforward(Preconditioner):
    velocity_field: TrainedField
    n_steps: int = 100
    method: str = "rk4"
    kind = "flow_pushforward"

    def forward(self, x):
        return integrate_backward(self.velocity_field, x, self.n_steps, self.method)

    def inverse(self, y):
        return integrate_forward(self.velocity_field, y, self.n_steps, self.method).x_end

    def to_dict(self):
        return {"format_version": 1, "kind": self.kind, "n_steps": self.n_steps, "method": self.method,
                "seed": self.velocity_field.seed, "checkpoint": self.velocity_field.to_dict()}


def flow_pushforward_precond(low_capacity_field: TrainedField, n_steps: int = 100,
                             method: str = "rk4") -> FlowPushforward:
    return FlowPushforward(low_capacity_field, n_steps, method)


def low_capacity_hidden(dim: int, budget: int = 200, depth: int = 2) -> tuple:
    """Widest equal-width hidden stack (input dim + 1, output dim) within ``budget`` parameters."""
    width = 1
    while param_count((dim + 1, *([width + 1] * depth), dim)) <= budget:
        width += 1
    return tuple([width] * depth)


def precondition_dataset(p: Preconditioner, points: LabeledPoints) -> LabeledPoints:
    """Apply ``p.forward`` row-wise; labels and order are preserved.

    Rows that come out non-finite are reported together with their indices.
    """
    if not isinstance(points, LabeledPoints):
        points = LabeledPoints(points)
    with np.errstate(all="ignore"):
        try:
            Y = np.atleast_2d(p.forward(points.points))
        except NumericError:
            Y = np.vstack([_row_or_nan(p, row) for row in points.points])
    bad = np.flatnonzero(~np.all(np.isfinite(Y), axis=1))
    if bad.size:
        raise NumericError("preconditioner produced non-finite rows", indices=bad.tolist(), where="precondition_dataset")
    out = points.with_points(Y)
    out.meta["preconditioner"] = p.kind
    return out


def _row_or_nan(p, row):
    try:
        return np.atleast_2d(p.forward(row[None, :]))
    except NumericError:
        return np.full((1, row.size), np.nan)


def load_preconditioner(d: dict) -> Preconditioner:
    kind = d["kind"]
    if kind == "identity":
        return IdentityPreconditioner()
    if kind == "whitening":
        return WhiteningPreconditioner(np.array(d["matrix"]), np.array(d["inverse_matrix"]),
                                       np.array(d["mean"]), float(d["log_abs_det"]))
    if kind == "normalizing_flow":
        return CouplingFlow.from_dict(d)
    if kind == "flow_pushforward":
        return FlowPushforward(TrainedField.from_dict(d["checkpoint"]), int(d["n_steps"]), d["method"])
    raise ValueError(f"unknown preconditioner kind {kind!r}")
