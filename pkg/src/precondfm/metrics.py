"""Distribution distances and conditioning diagnostics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .data import LabeledPoints
from .errors import DimensionError, DomainError, SampleSizeError
from .flowmatch import Schedule
from .linalg import cond_number, sample_covariance, sym_eig

DEFAULT_BANDWIDTH_MULTIPLIERS = (0.5, 1.0, 2.0)
MEDIAN_MAX_POINTS = 4000
DEFAULT_PROJECTIONS = 128


@dataclass
class MetricReport:
    name: str
    value: float
    params: dict = field(default_factory=dict)
    n_x: int = 0
    n_y: int = 0

    def csv_row(self) -> list:
        return [self.name, f"{self.value:.17g}", self.n_x, self.n_y, self.params.get("seed", ""),
                json.dumps(self.params, sort_keys=True)]


METRIC_CSV_HEADER = ["metric", "value", "n_x", "n_y", "seed", "params_json"]


def write_reports(path, reports: Sequence[MetricReport]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_CSV_HEADER)
        for r in reports:
            w.writerow(r.csv_row())
    return path


def _pair(X, Y):
    X = np.atleast_2d(np.asarray(X.points if isinstance(X, LabeledPoints) else X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y.points if isinstance(Y, LabeledPoints) else Y, dtype=float))
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise SampleSizeError("point sets must be nonempty")
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    return X, Y


def median_distance(X, Y) -> float:
    """Median pairwise distance of the pooled sample.

    Pools larger than ``MEDIAN_MAX_POINTS`` are thinned with a fixed stride.
    """
    Z = np.vstack([X, Y])
    if Z.shape[0] > MEDIAN_MAX_POINTS:
        stride = int(np.ceil(Z.shape[0] / MEDIAN_MAX_POINTS))
        Z = Z[::stride]
    if Z.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(Z)))
    return med if med > 0 else 1.0


def mmd_rbf(X, Y, bandwidths="default") -> MetricReport:
    """Biased (V-statistic) squared MMD with a sum of RBF kernels.

    ``bandwidths`` is a list of floats, ``"median"`` for the single median
    heuristic bandwidth, or ``"default"`` for 0.5x, 1x and 2x the median.
    Kernel: exp(-||x - y||^2 / (2 h^2)).
    """
    X, Y = _pair(X, Y)
    if (Y.shape[0], Y.tobytes()) < (X.shape[0], X.tobytes()):
        X, Y = Y, X  # fixed summation order makes the value exactly symmetric
    if isinstance(bandwidths, str):
        med = median_distance(X, Y)
        if bandwidths == "median":
            hs = [med]
        elif bandwidths == "default":
            hs = [m * med for m in DEFAULT_BANDWIDTH_MULTIPLIERS]
        else:
            raise ValueError(f"unknown bandwidth rule {bandwidths!r}")
    else:
        hs = [float(h) for h in np.atleast_1d(bandwidths)]
    dxx = cdist(X, X, "sqeuclidean")
    dyy = cdist(Y, Y, "sqeuclidean")
    dxy = cdist(X, Y, "sqeuclidean")
    value = 0.0
    for h in hs:
        g = 1.0 / (2.0 * h * h)
        value += np.exp(-g * dxx).mean() + np.exp(-g * dyy).mean() - 2.0 * np.exp(-g * dxy).mean()
    return MetricReport("mmd_rbf", float(value), {"bandwidths": hs}, X.shape[0], Y.shape[0])


def wasserstein2_1d(a: np.ndarray, b: np.ndarray) -> float:
    """Exact W2 between two 1D empirical measures with uniform weights.

    Integrates (F_a^{-1}(u) - F_b^{-1}(u))^2 over the merged quantile breakpoints.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    n, m = a.size, b.size
    if n == m:
        return float(np.sqrt(np.mean((a - b) ** 2)))
    levels = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    widths = np.diff(np.concatenate([[0.0], levels]))
    mids = levels - 0.5 * widths
    ia = np.minimum((mids * n).astype(int), n - 1)
    ib = np.minimum((mids * m).astype(int), m - 1)
    return float(np.sqrt(np.sum(widths * (a[ia] - b[ib]) ** 2)))


def random_directions(dim: int, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x511CE]))
    V = rng.standard_normal((n, dim))
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def sliced_distance(X, Y, n_projections: int = DEFAULT_PROJECTIONS, seed: int = 0) -> MetricReport:
    """Mean over random unit directions of the 1D W2 between the projected samples."""
    X, Y = _pair(X, Y)
    if n_projections < 1:
        raise ValueError("n_projections must be >= 1")
    V = random_directions(X.shape[1], n_projections, seed)
    PX, PY = X @ V.T, Y @ V.T
    dists = np.array([wasserstein2_1d(PX[:, j], PY[:, j]) for j in range(n_projections)])
    return MetricReport("sliced_w2", float(dists.mean()), {"n_projections": n_projections, "seed": int(seed)},
                        X.shape[0], Y.shape[0])


def empirical_condition_trajectory(points, schedule: Schedule, ts, n_pairs: int, seed: int) -> np.ndarray:
    """Rows of (t, kappa of the uncentered covariance of sampled x_t).

    x1 is drawn from ``points`` with replacement and x0 ~ N(0, I).  Each t
    uses fresh draws from one seeded stream.
    """
    P = points.points if isinstance(points, LabeledPoints) else np.asarray(points, dtype=float)
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if np.any(ts <= 0.0) or np.any(ts >= 1.0):
        raise DomainError("diagnostic times must lie in the open interval (0, 1)")
    d = P.shape[1]
    if n_pairs < d + 1:
        raise SampleSizeError(f"n_pairs must be >= {d + 1}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4A99A]))
    out = np.empty((ts.size, 2))
    for j, t in enumerate(ts):
        x1 = P[rng.integers(0, P.shape[0], size=n_pairs)]
        x0 = rng.standard_normal((n_pairs, d))
        xt = schedule.s(t) * x1 + schedule.c(t) * x0
        out[j] = t, cond_number(sym_eig(sample_covariance(xt)))
    return out
