"""Exactly solvable Gaussian transport model.

Base x0 ~ N(0, I), target x1 ~ N(0, H), linear path x_t = (1 - t) x0 + t x1.
The marginal covariance is Sigma_t = (1 - t)^2 I + t^2 H, which shares the
eigenvectors of H; the optimal linear velocity is
A*(t) = (tH - (1 - t) I) Sigma_t^{-1}.  The GD and SGD simulators run the
regression dynamics for A(t) at a frozen t.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DefinitenessError, DimensionError, DomainError, StabilityError
from .linalg import SpectralMatrix, as_spectral, inv_sqrt


def check_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    return t


@dataclass(frozen=True)
class GaussianTransport:
    H: SpectralMatrix

    def __post_init__(self):
        H = as_spectral(self.H)
        if not H.is_positive_definite:
            raise DefinitenessError("target covariance H must be positive definite")
        object.__setattr__(self, "H", H)

    @property
    def dim(self) -> int:
        return self.H.dim

    @classmethod
    def diagonal(cls, eigenvalues) -> "GaussianTransport":
        return cls(SpectralMatrix.diagonal(eigenvalues))

    def sigma_eigvals(self, t: float) -> np.ndarray:
        """sigma_i(t) = (1 - t)^2 + t^2 lambda_i, ascending."""
        t = check_time(t)
        return (1.0 - t) ** 2 + t**2 * self.H.eigvals

    def cross_covariance(self, t: float) -> np.ndarray:
        """C = E[(x1 - x0) x_t^T] = tH - (1 - t) I."""
        t = check_time(t)
        return t * self.H.entries - (1.0 - t) * np.eye(self.dim)


def sigma_t(model: GaussianTransport, t: float) -> SpectralMatrix:
    t = check_time(t)
    entries = (1.0 - t) ** 2 * np.eye(model.dim) + t**2 * model.H.entries
    return SpectralMatrix(entries, model.sigma_eigvals(t), model.H.eigvecs)


def analytic_score(model: GaussianTransport, t: float, x) -> np.ndarray:
    """-Sigma_t^{-1} x; ``x`` may be a single vector or an (n, d) batch."""
    S = sigma_t(model, t)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.dim:
        raise DimensionError(f"x has dimension {x.shape[-1]}, model has {model.dim}")
    prec = S.apply_function(lambda w: 1.0 / w)
    return -(x @ prec.T)


def optimal_velocity_matrix(model: GaussianTransport, t: float) -> np.ndarray:
    t = check_time(t)
    sig = model.sigma_eigvals(t)
    gain = (t * model.H.eigvals - (1.0 - t)) / sig
    U = model.H.eigvecs
    return (U * gain) @ U.T


def condition_trajectory(model: GaussianTransport, ts: Sequence[float]) -> np.ndarray:
    """Rows of (t, kappa(Sigma_t)), from the eigenvalue formula."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if ts.size == 0:
        raise DomainError("time grid is empty")
    if np.any(ts < 0.0) or np.any(ts > 1.0):
        raise DomainError("all grid times must lie in [0, 1]")
    lmin, lmax = model.H.eigvals[0], model.H.eigvals[-1]
    a = (1.0 - ts) ** 2
    b = ts**2
    kappa = (a + b * lmax) / (a + b * lmin)
    return np.column_stack([ts, kappa])


def predicted_gd_iterations(
    model: GaussianTransport, t: float, eta: float, eps: float, approx: bool = False
) -> float:
    """Iterations for the slowest GD mode to shrink by a factor ``eps``.

    Exact form ``log(1/eps) / -log|rho|`` with ``rho = 1 - 2 eta sigma_min``;
    ``approx=True`` gives ``log(1/eps) / (2 eta sigma_min)``.  A contraction
    factor of exactly zero converges in one step.
    """
    sig = model.sigma_eigvals(t)
    if not 0.0 < eps < 1.0:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    if not 0.0 < eta < 1.0 / sig[-1]:
        raise StabilityError(f"eta={eta} outside the stable range (0, {1.0 / sig[-1]:.6g})")
    if approx:
        return float(np.log(1.0 / eps) / (2.0 * eta * sig[0]))
    rho = abs(1.0 - 2.0 * eta * sig[0])
    if rho == 0.0:
        return 1.0
    return float(np.log(1.0 / eps) / -np.log(rho))


@dataclass
class GdTrace:
    """Full-batch GD trace at fixed t.

    ``per_mode_errors[i, k]`` is the signed amplitude of the error along
    eigen-direction i after k steps: column i of ``E_k U`` projected on the
    direction of column i of ``E_0 U``.  Column i evolves by the scalar factor
    ``1 - 2 eta sigma_i``, so this amplitude obeys the same recursion.
    """

    eta: float
    t: float
    per_mode_errors: np.ndarray
    frobenius_errors: np.ndarray
    sigmas: np.ndarray
    contraction_factors: np.ndarray = field(init=False)

    def __post_init__(self):
        self.contraction_factors = 1.0 - 2.0 * self.eta * self.sigmas

    @property
    def steps(self) -> int:
        return self.frobenius_errors.size - 1

    def predicted_errors(self) -> np.ndarray:
        """Closed-form decay ``rho_i^k e_{i,0}`` for comparison."""
        k = np.arange(self.steps + 1)
        with np.errstate(over="ignore", invalid="ignore"):
            return self.per_mode_errors[:, :1] * self.contraction_factors[:, None] ** k


def _gd_run(Sigma: np.ndarray, C: np.ndarray, A0: np.ndarray, A_star: np.ndarray,
            U: np.ndarray, eta: float, steps: int):
    A = np.array(A0, dtype=float)
    d = U.shape[0]
    cols0 = (A - A_star) @ U
    norms0 = np.linalg.norm(cols0, axis=0)
    dirs = np.divide(cols0, norms0, out=np.zeros_like(cols0), where=norms0 > 0)
    modes = np.empty((d, steps + 1))
    frob = np.empty(steps + 1)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps + 1):
            if k:
                A = A - 2.0 * eta * (A @ Sigma - C)
            E = A - A_star
            modes[:, k] = np.sum((E @ U) * dirs, axis=0)
            frob[k] = np.linalg.norm(E)
    modes[~np.isfinite(modes)] = np.inf
    frob[~np.isfinite(frob)] = np.inf
    return modes, frob


def gd_simulate(model: GaussianTransport, t: float, eta: float, steps: int, A0=None) -> GdTrace:
    """Full-batch GD on the population loss, A <- A - 2 eta (A Sigma_t - C).

    Divergent runs are recorded (errors become ``inf``) rather than raised.
    """
    t = check_time(t)
    if eta <= 0:
        raise StabilityError("eta must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    S = sigma_t(model, t)
    A_star = optimal_velocity_matrix(model, t)
    A0 = np.zeros((model.dim, model.dim)) if A0 is None else np.asarray(A0, dtype=float)
    if A0.shape != (model.dim, model.dim):
        raise DimensionError(f"A0 must be {model.dim}x{model.dim}")
    modes, frob = _gd_run(S.entries, model.cross_covariance(t), A0, A_star, S.eigvecs, eta, steps)
    return GdTrace(eta=eta, t=t, per_mode_errors=modes, frobenius_errors=frob, sigmas=S.eigvals.copy())


@dataclass
class SgdTrace:
    """Single-sample SGD trace at fixed t.

    ``per_mode_variance[i, w]`` is the mean square of the eigenbasis error
    ``e_i = u_i^T E u_i`` over window w of the trailing half of the run (the
    stationary mean is zero, so this is the steady-state variance).
    ``noise_scale_estimates[i]`` estimates ``c_i = Var(zeta_i) / eta^2`` from
    the one-step innovations ``zeta_i = e_{i,m+1} - (1 - 2 eta sigma_i) e_{i,m}``.
    """

    eta: float
    t: float
    sigmas: np.ndarray
    per_mode_variance: np.ndarray
    noise_scale_estimates: np.ndarray
    initial_errors: np.ndarray
    history: np.ndarray | None = None

    @property
    def steady_variance(self) -> np.ndarray:
        return self.per_mode_variance.mean(axis=1)

    def scaled_variance(self) -> np.ndarray:
        """Var(e_i) * sigma_i / eta."""
        return self.steady_variance * self.sigmas / self.eta

    def noise_normalized_variance(self) -> np.ndarray:
        """4 Var(e_i) sigma_i / (c_i eta); ~1 per mode in the small-step regime."""
        return 4.0 * self.steady_variance * self.sigmas / (self.noise_scale_estimates * self.eta)


def sgd_simulate(
    model: GaussianTransport,
    t: float,
    eta: float,
    steps: int,
    seed: int,
    A0=None,
    n_windows: int = 10,
    keep_history: bool = False,
    chunk: int = 8192,
) -> SgdTrace:
    """Single-sample SGD, A <- A - 2 eta (A x_t - y) x_t^T with fresh draws each step."""
    t = check_time(t)
    sig = model.sigma_eigvals(t)
    if not 0.0 < eta < 1.0 / sig[-1]:
        raise StabilityError(f"eta={eta} outside (0, {1.0 / sig[-1]:.6g})")
    if steps < 1000:
        raise ValueError("sgd_simulate needs steps >= 1000")
    d = model.dim
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5D6]))
    # Run in the eigenbasis of H (an orthogonal change of variables), where
    # e_i is simply the i-th diagonal entry of B - B*.
    U = model.H.eigvecs
    root_lam = np.sqrt(model.H.eigvals)
    A_star = optimal_velocity_matrix(model, t)
    A = np.zeros((d, d)) if A0 is None else np.array(A0, dtype=float)
    B = U.T @ A @ U
    b_star = np.diag(U.T @ A_star @ U).copy()
    e = np.empty((steps + 1, d))
    e[0] = np.diag(B) - b_star
    m = 0
    while m < steps:
        n = min(chunk, steps - m)
        z0 = rng.standard_normal((n, d))
        z1 = rng.standard_normal((n, d)) * root_lam
        xt = (1.0 - t) * z0 + t * z1
        y = z1 - z0
        for j in range(n):
            x = xt[j]
            B -= (2.0 * eta) * np.outer(B @ x - y[j], x)
            e[m + j + 1] = B.diagonal()
        m += n
    e[1:] -= b_star
    tail = e[steps // 2:]
    blocks = np.array_split(tail, n_windows)
    var = np.stack([np.mean(b**2, axis=0) for b in blocks], axis=1)
    a = 1.0 - 2.0 * eta * sig
    zeta = tail[1:] - a * tail[:-1]
    c = np.mean(zeta**2, axis=0) / eta**2
    return SgdTrace(
        eta=eta, t=t, sigmas=sig.copy(), per_mode_variance=var, noise_scale_estimates=c,
        initial_errors=e[0].copy(), history=e if keep_history else None,
    )


EtaRule = Callable[[float], float]


def half_inverse_lmax(lmax: float) -> float:
    """eta = 1 / (2 lambda_max): zeroes the fastest mode in one step."""
    return 0.5 / lmax


def inverse_lmax(lmax: float) -> float:
    """eta = 1 / lambda_max: the stability boundary (top mode factor -1)."""
    return 1.0 / lmax


@dataclass
class Theorem1Result:
    k_plain: int
    k_whitened: int
    eta_plain: float
    eta_whitened: float
    kappa: float
    converged_plain: bool
    converged_whitened: bool


def _iterations_to_eps(Sigma, C, A0, eta, eps, max_iter):
    A_star = np.linalg.solve(Sigma.T, C.T).T
    A = np.array(A0, dtype=float)
    e0 = np.linalg.norm(A - A_star)
    if e0 == 0.0:
        return 0, True
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, max_iter + 1):
            A = A - 2.0 * eta * (A @ Sigma - C)
            err = np.linalg.norm(A - A_star) / e0
            if err <= eps:
                return k, True
            if not np.isfinite(err):
                return k, False
    return max_iter, False


def theorem1_experiment(
    Sigma,
    eta_rule: EtaRule = half_inverse_lmax,
    eps: float = 1e-6,
    C=None,
    A0=None,
    max_iter: int = 1_000_000,
) -> Theorem1Result:
    """GD iterations to relative Frobenius error ``eps``, raw vs whitened inputs.

    Population least squares ``E||A x - y||^2`` with ``E[x x^T] = Sigma`` and
    ``E[y x^T] = C`` (default ``I``).  The whitened problem uses
    ``x~ = Sigma^{-1/2} x``, so its input covariance is the identity and its
    cross-covariance is ``C Sigma^{-1/2}``.  ``eta_rule`` maps each problem's
    largest input eigenvalue to a step size.
    """
    S = as_spectral(Sigma)
    S.require_positive_definite()
    if not 0.0 < eps < 1.0:
        raise DomainError("eps must lie in (0, 1)")
    d = S.dim
    C = np.eye(d) if C is None else np.asarray(C, dtype=float)
    A0 = np.zeros((d, d)) if A0 is None else np.asarray(A0, dtype=float)
    M = inv_sqrt(S)
    Sigma_w = M @ S.entries @ M
    Sigma_w = 0.5 * (Sigma_w + Sigma_w.T)
    C_w = C @ M
    eta_p = eta_rule(float(S.eigvals[-1]))
    eta_w = eta_rule(1.0)
    k_p, ok_p = _iterations_to_eps(S.entries, C, A0, eta_p, eps, max_iter)
    k_w, ok_w = _iterations_to_eps(Sigma_w, C_w, A0, eta_w, eps, max_iter)
    return Theorem1Result(
        k_plain=k_p, k_whitened=k_w, eta_plain=eta_p, eta_whitened=eta_w,
        kappa=float(S.eigvals[-1] / S.eigvals[0]), converged_plain=ok_p, converged_whitened=ok_w,
    )
