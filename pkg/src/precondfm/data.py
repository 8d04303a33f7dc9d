"""Seeded 2D toy datasets and Gaussian / GMM samplers.

Every generator draws from Philox streams keyed by (seed, generator_id, purpose),
one stream per random quantity, and consumes them row by row.  Generating n
points therefore yields exactly the first n rows of generating 2n points.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .linalg import SpectralMatrix, as_spectral

SWISS_ROLL_VERSION = "swiss_roll/v1"
SWISS_ROLL_U_RANGE = (1.5 * np.pi, 4.5 * np.pi)
SWISS_ROLL_EXTENT = 2.5
SWISS_ROLL_SCALE = SWISS_ROLL_U_RANGE[1] / SWISS_ROLL_EXTENT
SWISS_ROLL_NOISE = 0.05

CHECKERBOARD_HALF_WIDTH = 4.0
CHECKERBOARD_CELLS = 4


def stream(seed: int, generator_id: str, purpose: str = "") -> np.random.Generator:
    """Independent Philox stream for (seed, generator_id, purpose)."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(generator_id.encode()), zlib.crc32(purpose.encode())]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


@dataclass
class LabeledPoints:
    points: np.ndarray
    labels: np.ndarray | None = None
    seed: int = 0
    generator_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.shape[0] != self.points.shape[0]:
                raise DimensionError("points and labels differ in length")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def with_points(self, points) -> "LabeledPoints":
        return LabeledPoints(points, self.labels, self.seed, self.generator_id, dict(self.meta))

    def to_csv(self, path) -> Path:
        """Header ``x0,x1,...,label``; 17 significant digits; empty label when absent."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{i}" for i in range(self.dim)] + ["label"])
            for i, row in enumerate(self.points):
                label = "" if self.labels is None else str(int(self.labels[i]))
                w.writerow([f"{v:.17g}" for v in row] + [label])
        return path

    @classmethod
    def from_csv(cls, path, seed: int = 0, generator_id: str = "csv") -> "LabeledPoints":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        d = sum(1 for h in header if h.startswith("x"))
        pts = np.array([[float(v) for v in r[:d]] for r in body]).reshape(len(body), d)
        labels = [r[d] for r in body]
        lab = None if all(v == "" for v in labels) else np.array([int(v) for v in labels])
        return cls(pts, lab, seed, generator_id)


def _check_n(n: int) -> int:
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    return n


def gaussian_sample(H, n: int, seed: int, generator_id: str = "gaussian") -> LabeledPoints:
    """x = U Lambda^{1/2} z with z standard normal."""
    H = as_spectral(H)
    H.require_positive_definite()
    n = _check_n(n)
    z = stream(seed, generator_id, "z").standard_normal((n, H.dim))
    x = (z * np.sqrt(H.eigvals)) @ H.eigvecs.T
    return LabeledPoints(x, None, seed, generator_id)


def gmm_sample(gmm, n: int, seed: int, generator_id: str = "gmm") -> LabeledPoints:
    """Component index from the mixture weights, then a draw from that component."""
    n = _check_n(n)
    u = stream(seed, generator_id, "component").random(n)
    cdf = np.cumsum(gmm.weights)
    cdf[-1] = 1.0
    labels = np.searchsorted(cdf, u, side="right")
    z = stream(seed, generator_id, "z").standard_normal((n, gmm.dim))
    x = np.empty_like(z)
    for k, H in enumerate(gmm.components):
        sel = labels == k
        x[sel] = (z[sel] * np.sqrt(H.eigvals)) @ H.eigvecs.T
    return LabeledPoints(x, labels, seed, generator_id)


def swiss_roll(n: int, noise: float = SWISS_ROLL_NOISE, seed: int = 0,
               generator_id: str = SWISS_ROLL_VERSION) -> LabeledPoints:
    """2D Swiss roll: (u cos u, u sin u) / scale with u ~ U[1.5 pi, 4.5 pi], plus isotropic noise.

    ``scale`` maps the outermost turn onto radius 2.5.
    """
    n = _check_n(n)
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    lo, hi = SWISS_ROLL_U_RANGE
    u = lo + (hi - lo) * stream(seed, generator_id, "u").random(n)
    pts = np.column_stack([u * np.cos(u), u * np.sin(u)]) / SWISS_ROLL_SCALE
    if noise > 0:
        pts = pts + noise * stream(seed, generator_id, "noise").standard_normal((n, 2))
    out = LabeledPoints(pts, None, seed, generator_id)
    out.meta["u"] = u
    return out


def checkerboard(n: int, seed: int = 0, generator_id: str = "checkerboard/v1") -> LabeledPoints:
    """Uniform over the black cells of a 4x4 checkerboard on [-4, 4]^2.

    Cell (i, j) is black when i + j is even; labels index the 8 black cells.
    """
    n = _check_n(n)
    cell = 2.0 * CHECKERBOARD_HALF_WIDTH / CHECKERBOARD_CELLS
    black = [(i, j) for i in range(CHECKERBOARD_CELLS) for j in range(CHECKERBOARD_CELLS) if (i + j) % 2 == 0]
    black = np.array(black)
    labels = np.minimum((stream(seed, generator_id, "cell").random(n) * len(black)).astype(int), len(black) - 1)
    offsets = stream(seed, generator_id, "offset").random((n, 2)) * cell
    pts = -CHECKERBOARD_HALF_WIDTH + black[labels] * cell + offsets
    return LabeledPoints(pts, labels, seed, generator_id)


def elongated_gaussian(kappa: float = 100.0) -> SpectralMatrix:
    """diag(1, kappa): the anisotropic 2D target used in the preconditioning comparisons."""
    return SpectralMatrix.diagonal([1.0, float(kappa)])


def resample(points: LabeledPoints | np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` rows with replacement."""
    P = points.points if isinstance(points, LabeledPoints) else np.asarray(points, dtype=float)
    return P[rng.integers(0, P.shape[0], size=n)]
