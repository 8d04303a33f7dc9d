"""First-order optimizers over flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, NumericError


@dataclass(frozen=True)
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8
    step_count: int = 0
    first_moment: np.ndarray | None = None
    second_moment: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")

    @classmethod
    def create(cls, kind: str, n_params: int, lr: float, **hyper) -> "OptimizerState":
        if kind == "adam":
            return cls(kind, lr, first_moment=np.zeros(n_params), second_moment=np.zeros(n_params), **hyper)
        return cls(kind, lr, **hyper)


def optimizer_step(state: OptimizerState, params, grads) -> tuple[np.ndarray, OptimizerState]:
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape:
        raise DimensionError(f"params {params.shape} and grads {grads.shape} disagree")
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradient", step=state.step_count, where="optimizer_step")
    step = state.step_count + 1
    if state.kind == "sgd":
        return params - state.lr * grads, replace(state, step_count=step)
    m = state.first_moment if state.first_moment is not None else np.zeros_like(params)
    v = state.second_moment if state.second_moment is not None else np.zeros_like(params)
    if m.shape != params.shape:
        raise DimensionError("moment vectors do not match the parameter count")
    m = state.beta1 * m + (1.0 - state.beta1) * grads
    v = state.beta2 * v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps_stab)
    return new, replace(state, step_count=step, first_moment=m, second_moment=v)
