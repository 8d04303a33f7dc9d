"""Conditional flow matching: interpolation paths, training, and ODE integration."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .data import LabeledPoints
from .errors import DimensionError, DomainError, NumericError
from .mlp import Mlp
from .optim import OptimizerState, optimizer_step

SCHEDULE_KINDS = ("linear", "sine_cosine")


@dataclass(frozen=True)
class Schedule:
    """x_t = s(t) x1 + c(t) x0 with s(0) = 0, s(1) = 1, c(0) = 1, c(1) = 0."""

    kind: str = "linear"

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"schedule kind must be one of {SCHEDULE_KINDS}")

    def s(self, t):
        t = np.asarray(t, dtype=float)
        return t if self.kind == "linear" else np.sin(0.5 * np.pi * t)

    def c(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "linear":
            return 1.0 - t
        # cos(pi/2) is 6e-17 in floating point; pin the endpoint.
        return np.where(t == 1.0, 0.0, np.cos(0.5 * np.pi * t))

    def ds(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "linear":
            return np.ones_like(t)
        return 0.5 * np.pi * np.cos(0.5 * np.pi * t)

    def dc(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "linear":
            return -np.ones_like(t)
        return -0.5 * np.pi * np.sin(0.5 * np.pi * t)


@dataclass
class Interpolant:
    x_t: np.ndarray
    v_star: np.ndarray


def interpolate(schedule: Schedule, x0, x1, t) -> Interpolant:
    """Point on the path and its conditional velocity s'(t) x1 + c'(t) x0.

    ``t`` may be a scalar or one time per row of a batch.
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if x0.shape != x1.shape:
        raise DimensionError(f"x0 {x0.shape} and x1 {x1.shape} disagree")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError("t must lie in [0, 1]")
    tt = t[..., None] if (t.ndim == 1 and x0.ndim == 2) else t
    x_t = schedule.s(tt) * x1 + schedule.c(tt) * x0
    v = schedule.ds(tt) * x1 + schedule.dc(tt) * x0
    return Interpolant(x_t, v)


@dataclass
class TrainedField:
    """An MLP velocity field v(x, t) on inputs [x, t]."""

    model: Mlp
    schedule: Schedule = field(default_factory=Schedule)
    train_log: list = field(default_factory=list)
    seed: int = 0

    @property
    def data_dim(self) -> int:
        return self.model.out_dim

    def __call__(self, x, t) -> np.ndarray:
        X = np.atleast_2d(np.asarray(x, dtype=float))
        tcol = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1, 1), (X.shape[0], 1))
        out = self.model(np.hstack([X, tcol]))
        return out[0] if np.ndim(x) == 1 else out

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "layer_sizes": list(self.model.layer_sizes),
            "activation": self.model.activation,
            "params": [float(v) for v in self.model.params],
            "seed": int(self.seed),
            "schedule_kind": self.schedule.kind,
            "data_dim": self.data_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedField":
        model = Mlp(tuple(d["layer_sizes"]), d["activation"], np.array(d["params"], dtype=float))
        return cls(model, Schedule(d.get("schedule_kind", "linear")), [], int(d.get("seed", 0)))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch: int = 256
    steps: int = 2000
    optimizer: str = "adam"
    seed: int = 0


@dataclass(frozen=True)
class Arch:
    hidden: tuple = (64, 64)
    activation: str = "silu"

    def layer_sizes(self, dim: int) -> tuple:
        return (dim + 1, *self.hidden, dim)


Sampler = Callable[[int, np.random.Generator], np.ndarray]


def as_sampler(source) -> Sampler:
    """Turn a point set (drawn with replacement) or a callable into a sampler."""
    if source is None:
        return None
    if callable(source):
        return source
    P = source.points if isinstance(source, LabeledPoints) else np.asarray(source, dtype=float)

    def draw(n, rng):
        return P[rng.integers(0, P.shape[0], size=n)]

    draw.dim = P.shape[1]
    return draw


def gaussian_source(n: int, rng: np.random.Generator, dim: int) -> np.ndarray:
    return rng.standard_normal((n, dim))


def cfm_loss_node(model: Mlp, params: ad.Node, x_t, t, v_star) -> ad.Node:
    inp = np.hstack([x_t, np.asarray(t).reshape(-1, 1)])
    pred = model.forward_node(params, inp)
    return ad.mean(ad.square(pred - v_star))


def cfm_loss(field_: TrainedField, x_t, t, v_star) -> float:
    """Mean over batch and dimensions of ||v(x_t, t) - v*||^2 / d."""
    pred = field_(x_t, t)
    return float(np.mean((pred - v_star) ** 2))


def cfm_train(
    target,
    schedule: Schedule = Schedule(),
    arch: Arch = Arch(),
    hyper: TrainConfig = TrainConfig(),
    source=None,
    init: Mlp | None = None,
    callback: Callable[[int, TrainedField], None] | None = None,
    callback_every: int = 0,
) -> TrainedField:
    """Fit v(x_t, t) to s'(t) x1 + c'(t) x0 by minibatch gradient steps.

    ``target`` (and optional ``source``, default N(0, I)) is a point set or a
    sampler ``f(n, rng) -> (n, d)``.  t ~ U[0, 1] independently per pair.
    ``callback(step, field)`` runs at step 0 and every ``callback_every`` steps.
    """
    if hyper.steps < 0 or hyper.batch < 1:
        raise ValueError("need steps >= 0 and batch >= 1")
    draw_target = as_sampler(target)
    rng = np.random.default_rng(np.random.SeedSequence([int(hyper.seed), 0xCF3]))
    probe = draw_target(1, np.random.default_rng(0))
    dim = probe.shape[1]
    draw_source = as_sampler(source) or (lambda n, r: gaussian_source(n, r, dim))
    model = init if init is not None else Mlp.init(arch.layer_sizes(dim), arch.activation, rng)
    if model.layer_sizes[0] != dim + 1 or model.layer_sizes[-1] != dim:
        raise DimensionError("model must map dim + 1 inputs to dim outputs")
    params = model.params.copy()
    opt = OptimizerState.create(hyper.optimizer, params.size, hyper.lr)
    log = []
    field_ = TrainedField(model, schedule, log, hyper.seed)
    if callback is not None:
        callback(0, field_)
    for step in range(1, hyper.steps + 1):
        x1 = draw_target(hyper.batch, rng)
        x0 = draw_source(hyper.batch, rng)
        t = rng.random(hyper.batch)
        it = interpolate(schedule, x0, x1, t)
        try:
            loss, g = ad.value_and_grad(lambda p: cfm_loss_node(model, p, it.x_t, t, it.v_star), params)
            params, opt = optimizer_step(opt, params, g)
        except NumericError as exc:
            raise NumericError("cfm training diverged", step=step, where="cfm_train") from exc
        log.append((step, loss))
        if callback is not None and callback_every and step % callback_every == 0:
            field_ = TrainedField(model.with_params(params), schedule, log, hyper.seed)
            callback(step, field_)
    return TrainedField(model.with_params(params), schedule, log, hyper.seed)


@dataclass
class IntegrationResult:
    x_end: np.ndarray
    trajectory: list | None = None


def _integrate(field_, x, grid, method):
    if method not in ("euler", "rk4"):
        raise ValueError("method must be 'euler' or 'rk4'")
    traj = [x.copy()]
    for k in range(len(grid) - 1):
        t, h = grid[k], grid[k + 1] - grid[k]
        if method == "euler":
            x = x + h * field_(x, t)
        else:
            k1 = field_(x, t)
            k2 = field_(x + 0.5 * h * k1, t + 0.5 * h)
            k3 = field_(x + 0.5 * h * k2, t + 0.5 * h)
            k4 = field_(x + h * k3, t + h)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite state", step=k + 1, where="integrate")
        traj.append(x)
    return x, traj


def integrate_forward(field_, x_start, n_steps: int = 100, method: str = "rk4",
                      keep_trajectory: bool = False) -> IntegrationResult:
    """Fixed-step integration of dx/dt = v(x, t) from t = 0 to t = 1.

    ``field_(x, t)`` takes an (n, d) batch and a scalar time.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = np.atleast_2d(np.asarray(x_start, dtype=float)).copy()
    grid = np.linspace(0.0, 1.0, n_steps + 1)
    x_end, traj = _integrate(field_, x, grid, method)
    if np.ndim(x_start) == 1:
        x_end = x_end[0]
        traj = [p[0] for p in traj]
    return IntegrationResult(x_end, traj if keep_trajectory else None)


def integrate_backward(field_, x_data, n_steps: int = 100, method: str = "rk4") -> np.ndarray:
    """Transport data back to the reference end: integrate the negated field in reversed time.

    Solves dx/ds = -v(x, 1 - s) for s in [0, 1], i.e. runs the forward ODE from
    t = 1 down to t = 0 on the same grid, so it inverts ``integrate_forward``
    up to discretization error.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = np.atleast_2d(np.asarray(x_data, dtype=float)).copy()
    grid = np.linspace(1.0, 0.0, n_steps + 1)
    x_end, _ = _integrate(field_, x, grid, method)
    return x_end[0] if np.ndim(x_data) == 1 else x_end


def constant_field(c) -> Callable:
    c = np.asarray(c, dtype=float)
    return lambda x, t: np.broadcast_to(c, np.shape(x)).copy()


def linear_field(A_of_t: Callable[[float], np.ndarray]) -> Callable:
    """v(x, t) = A(t) x for a matrix-valued function of time."""
    return lambda x, t: np.asarray(x) @ A_of_t(float(t)).T
