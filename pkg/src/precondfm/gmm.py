"""Zero-mean Gaussian mixture targets.

The marginal of x_t is a mixture of N(0, Sigma_{t,k}) with
Sigma_{t,k} = (1 - t)^2 I + t^2 H_k.  Score and velocity are posterior-weighted
mixtures of the per-component linear maps.  Under perfect gating the
regression splits into K independent subproblems, one per component.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .analytic import GaussianTransport, GdTrace, check_time, gd_simulate
from .errors import DefinitenessError, DimensionError, DomainError
from .linalg import SpectralMatrix, as_spectral


@dataclass(frozen=True)
class ZeroMeanGmm:
    weights: np.ndarray
    components: tuple

    def __init__(self, weights, components, means=None):
        weights = np.asarray(weights, dtype=float)
        comps = tuple(as_spectral(H) for H in components)
        if weights.ndim != 1 or weights.size != len(comps) or not comps:
            raise DimensionError("need one weight per component and at least one component")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise DomainError("mixture weights must be positive and sum to 1")
        dims = {H.dim for H in comps}
        if len(dims) != 1:
            raise DimensionError(f"components disagree on dimension: {sorted(dims)}")
        for k, H in enumerate(comps):
            if not H.is_positive_definite:
                raise DefinitenessError(f"component {k} covariance is not positive definite")
        if means is not None and np.any(np.asarray(means, dtype=float) != 0.0):
            raise DomainError("only zero-mean mixtures are supported")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def n_components(self) -> int:
        return len(self.components)

    def transport(self, k: int) -> GaussianTransport:
        return GaussianTransport(self.components[self._index(k)])

    def _index(self, k: int) -> int:
        if not 0 <= k < self.n_components:
            raise IndexError(f"component index {k} out of range [0, {self.n_components})")
        return int(k)


def component_sigma_t(gmm: ZeroMeanGmm, k: int, t: float) -> SpectralMatrix:
    H = gmm.components[gmm._index(k)]
    t = check_time(t)
    entries = (1.0 - t) ** 2 * np.eye(gmm.dim) + t**2 * H.entries
    return SpectralMatrix(entries, (1.0 - t) ** 2 + t**2 * H.eigvals, H.eigvecs)


def _as_batch(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[-1] != dim:
        raise DimensionError(f"x has dimension {X.shape[-1]}, mixture has {dim}")
    return X, single


def _component_log_joint(gmm: ZeroMeanGmm, t: float, X: np.ndarray) -> np.ndarray:
    """log pi_k + log N(x; 0, Sigma_{t,k}), shape (n, K)."""
    t = check_time(t)
    d = gmm.dim
    out = np.empty((X.shape[0], gmm.n_components))
    for k, H in enumerate(gmm.components):
        sig = (1.0 - t) ** 2 + t**2 * H.eigvals
        proj = X @ H.eigvecs
        maha = np.sum(proj**2 / sig, axis=1)
        out[:, k] = np.log(gmm.weights[k]) - 0.5 * (maha + np.sum(np.log(sig)) + d * np.log(2 * np.pi))
    return out


def mixture_log_density(gmm: ZeroMeanGmm, t: float, x) -> np.ndarray | float:
    X, single = _as_batch(x, gmm.dim)
    lp = logsumexp(_component_log_joint(gmm, t, X), axis=1)
    return float(lp[0]) if single else lp


def posterior_weights(gmm: ZeroMeanGmm, t: float, x) -> np.ndarray:
    """w_k(x) proportional to pi_k N(x; 0, Sigma_{t,k}), normalized in log space."""
    X, single = _as_batch(x, gmm.dim)
    lj = _component_log_joint(gmm, t, X)
    w = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    return w[0] if single else w


def _component_maps(gmm: ZeroMeanGmm, t: float, gain_fn):
    mats = []
    for H in gmm.components:
        sig = (1.0 - t) ** 2 + t**2 * H.eigvals
        U = H.eigvecs
        mats.append((U * gain_fn(H.eigvals, sig)) @ U.T)
    return mats


def mixture_score(gmm: ZeroMeanGmm, t: float, x) -> np.ndarray:
    """-sum_k w_k(x) Sigma_{t,k}^{-1} x."""
    X, single = _as_batch(x, gmm.dim)
    t = check_time(t)
    W = posterior_weights(gmm, t, X)
    precs = _component_maps(gmm, t, lambda lam, sig: 1.0 / sig)
    out = -sum(W[:, [k]] * (X @ P.T) for k, P in enumerate(precs))
    return out[0] if single else out


def component_optimal_matrices(gmm: ZeroMeanGmm, t: float) -> list:
    """A*_k(t) = (t H_k - (1 - t) I) Sigma_{t,k}^{-1} for every component."""
    t = check_time(t)
    return _component_maps(gmm, t, lambda lam, sig: (t * lam - (1.0 - t)) / sig)


def mixture_velocity(gmm: ZeroMeanGmm, t: float, x) -> np.ndarray:
    """sum_k w_k(x) A*_k(t) x."""
    X, single = _as_batch(x, gmm.dim)
    W = posterior_weights(gmm, t, X)
    mats = component_optimal_matrices(gmm, t)
    out = sum(W[:, [k]] * (X @ A.T) for k, A in enumerate(mats))
    return out[0] if single else out


@dataclass(frozen=True)
class WhitenedGmm:
    """Per-component whitening maps T_k = Lambda_k^{-1/2} U_k^T and their inverses."""

    transforms: tuple
    inverse_transforms: tuple

    def transform(self, x, labels) -> np.ndarray:
        """Apply T_{label} to each row of ``x``."""
        X = np.atleast_2d(np.asarray(x, dtype=float))
        labels = np.asarray(labels)
        out = np.empty_like(X)
        for k, T in enumerate(self.transforms):
            sel = labels == k
            out[sel] = X[sel] @ T.T
        return out

    def inverse(self, x, labels) -> np.ndarray:
        X = np.atleast_2d(np.asarray(x, dtype=float))
        labels = np.asarray(labels)
        out = np.empty_like(X)
        for k, Ti in enumerate(self.inverse_transforms):
            sel = labels == k
            out[sel] = X[sel] @ Ti.T
        return out


def whitening_transforms(gmm: ZeroMeanGmm) -> WhitenedGmm:
    Ts, Tinvs = [], []
    for H in gmm.components:
        H.require_positive_definite()
        Ts.append((H.eigvecs / np.sqrt(H.eigvals)).T)
        Tinvs.append(H.eigvecs * np.sqrt(H.eigvals))
    return WhitenedGmm(tuple(Ts), tuple(Tinvs))


def whitened_optimal_gain(t: float) -> float:
    t = check_time(t)
    return (2.0 * t - 1.0) / ((1.0 - t) ** 2 + t**2)


def whitened_optimal_matrix(t: float, dim: int = 2) -> np.ndarray:
    """((2t - 1) / ((1 - t)^2 + t^2)) I, the optimum for every whitened component."""
    return whitened_optimal_gain(t) * np.eye(dim)


def recovered_velocity(whitened: WhitenedGmm, weights, matrices: Sequence, x) -> np.ndarray:
    """sum_k w_k(x) T_k^{-1} A~_k T_k x: a whitened-space mixture model read in original coordinates.

    With A~_k = whitened optimum this is ((2t - 1)/((1 - t)^2 + t^2)) x, which
    equals the original-space optimum only where the two gains agree (t = 0,
    t = 1, or H_k = I); see tests/test_gmm.py.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    out = np.zeros_like(X)
    for k, (T, Ti, A) in enumerate(zip(whitened.transforms, whitened.inverse_transforms, matrices)):
        out += W[:, [k]] * (X @ (Ti @ A @ T).T)
    return out[0] if np.asarray(x).ndim == 1 else out


def gated_gd_simulate(
    gmm: ZeroMeanGmm, t: float, eta: float, steps: int, whitened: bool = False, A0s=None
) -> list[GdTrace]:
    """K independent population-gradient recursions under perfect gating.

    When ``whitened`` each component's input covariance becomes
    ((1 - t)^2 + t^2) I, i.e. the whitened component has H~_k = I.
    """
    traces = []
    for k in range(gmm.n_components):
        model = GaussianTransport.diagonal(np.ones(gmm.dim)) if whitened else gmm.transport(k)
        A0 = None if A0s is None else A0s[k]
        traces.append(gd_simulate(model, t, eta, steps, A0=A0))
    return traces


def slowest_mode(traces: Sequence[GdTrace]) -> tuple[int, int]:
    """(k, i) of the mode with the largest |contraction factor|."""
    factors = np.array([np.abs(tr.contraction_factors) for tr in traces])
    k, i = np.unravel_index(np.argmax(factors), factors.shape)
    return int(k), int(i)


def smallest_sigma(gmm: ZeroMeanGmm, t: float) -> tuple[int, int, float]:
    """(k, i, sigma) minimizing sigma_{k,i}(t) over all components and modes."""
    t = check_time(t)
    sig = np.array([(1.0 - t) ** 2 + t**2 * H.eigvals for H in gmm.components])
    k, i = np.unravel_index(np.argmin(sig), sig.shape)
    return int(k), int(i), float(sig[k, i])
