import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from precondfm import data
from precondfm.errors import DefinitenessError, DimensionError
from precondfm.gmm import ZeroMeanGmm
from precondfm.linalg import SpectralMatrix, sample_covariance, sym_eig

from conftest import random_spd


def _mixture(kappa=10.0):
    return ZeroMeanGmm([0.5, 0.5], [SpectralMatrix.diagonal([1.0, kappa]), SpectralMatrix.diagonal([kappa, 1.0])])


GENERATORS = {
    "gaussian": lambda n, s: data.gaussian_sample(SpectralMatrix.diagonal([1.0, 4.0]), n, s),
    "gmm": lambda n, s: data.gmm_sample(_mixture(), n, s),
    "swiss_roll": lambda n, s: data.swiss_roll(n, seed=s),
    "checkerboard": lambda n, s: data.checkerboard(n, seed=s),
}


@pytest.mark.parametrize("name", sorted(GENERATORS))
def test_seed_determinism(name):
    a, b = GENERATORS[name](257, 3), GENERATORS[name](257, 3)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, GENERATORS[name](257, 4).points)


@pytest.mark.parametrize("name", sorted(GENERATORS))
@given(n=st.integers(1, 300), seed=st.integers(0, 2**32))
def test_streaming_prefix(name, n, seed):
    small, big = GENERATORS[name](n, seed), GENERATORS[name](2 * n, seed)
    assert np.array_equal(small.points, big.points[:n])
    if small.labels is not None:
        assert np.array_equal(small.labels, big.labels[:n])


def test_streams_independent():
    a = data.stream(0, "x", "a").random(4)
    assert not np.array_equal(a, data.stream(0, "x", "b").random(4))
    assert not np.array_equal(a, data.stream(0, "y", "a").random(4))


class TestGaussian:
    def test_identity_covariance(self):
        x = data.gaussian_sample(SpectralMatrix.diagonal([1.0, 1.0]), 100_000, 0).points
        assert np.allclose(sample_covariance(x), np.eye(2), atol=0.05)

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_second_moment(self, d, rng):
        H = sym_eig(random_spd(rng, d, kappa=20.0))
        x = data.gaussian_sample(H, 100_000, 1).points
        S = x.T @ x / x.shape[0]
        assert np.linalg.norm(S - H.reconstruct()) / np.linalg.norm(H.reconstruct()) < 0.05

    def test_single_point(self):
        p = data.gaussian_sample(SpectralMatrix.diagonal([1.0, 2.0]), 1, 0)
        assert p.points.shape == (1, 2) and np.all(np.isfinite(p.points))

    def test_indefinite(self):
        with pytest.raises(DefinitenessError):
            data.gaussian_sample(SpectralMatrix.diagonal([1.0, 0.0]), 5, 0)

    def test_bad_n(self):
        with pytest.raises(ValueError):
            data.gaussian_sample(SpectralMatrix.diagonal([1.0]), 0, 0)


class TestGmm:
    def test_label_frequencies(self):
        p = data.gmm_sample(_mixture(), 100_000, 0)
        assert abs(np.mean(p.labels == 0) - 0.5) < 0.01
        assert set(np.unique(p.labels)) <= {0, 1}

    def test_single_component_matches_gaussian(self):
        H = SpectralMatrix.diagonal([1.0, 9.0])
        g = data.gmm_sample(ZeroMeanGmm([1.0], [H]), 100_000, 2).points
        assert np.allclose(sample_covariance(g), H.reconstruct(), rtol=0.05, atol=0.05)

    def test_labels_follow_components(self):
        p = data.gmm_sample(_mixture(100.0), 20_000, 0)
        var0 = p.points[p.labels == 0].var(axis=0)
        assert var0[1] > 50 * var0[0]


class TestSwissRoll:
    def test_on_manifold_without_noise(self):
        p = data.swiss_roll(5000, noise=0.0, seed=1)
        r = np.linalg.norm(p.points, axis=1) * data.SWISS_ROLL_SCALE
        lo, hi = data.SWISS_ROLL_U_RANGE
        assert np.allclose(r, p.meta["u"], atol=1e-9)
        assert np.all((r >= lo - 1e-9) & (r <= hi + 1e-9))
        ang = np.arctan2(p.points[:, 1], p.points[:, 0])
        assert np.allclose(np.cos(ang - p.meta["u"]), 1.0, atol=1e-9)

    @pytest.mark.parametrize("noise", [0.0, 0.05, 0.2])
    def test_bounding_box(self, noise):
        p = data.swiss_roll(20_000, noise=noise, seed=0)
        assert np.max(np.abs(p.points)) <= 2.5 + 4 * noise + 1e-12
        assert p.labels is None

    def test_negative_noise(self):
        with pytest.raises(ValueError):
            data.swiss_roll(10, noise=-0.1)


class TestCheckerboard:
    def test_black_cells(self):
        p = data.checkerboard(20_000, seed=0).points
        idx = np.floor((p + 4.0) / 2.0).astype(int)
        assert np.all((idx >= 0) & (idx < 4))
        assert np.all(idx.sum(axis=1) % 2 == 0)

    def test_uniform_over_cells(self):
        p = data.checkerboard(100_000, seed=0)
        freq = np.bincount(p.labels, minlength=8) / len(p)
        assert np.all(np.abs(freq * 8 - 1) < 0.03)
        # uniform inside a cell too
        local = np.mod(p.points + 4.0, 2.0)
        h = np.histogram(local[:, 0], bins=4, range=(0, 2))[0] / len(p)
        assert np.all(np.abs(h * 4 - 1) < 0.03)


class TestLabeledPoints:
    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            data.LabeledPoints(np.zeros((3, 2)), np.zeros(2))

    def test_csv_round_trip(self, tmp_path):
        p = data.gmm_sample(_mixture(), 50, 0)
        path = p.to_csv(tmp_path / "pts.csv")
        text = path.read_bytes()
        assert text.startswith(b"x0,x1,label\n") and b"\r" not in text
        back = data.LabeledPoints.from_csv(path)
        assert np.array_equal(back.points, p.points) and np.array_equal(back.labels, p.labels)

    def test_csv_round_trip_unlabeled(self, tmp_path):
        p = data.swiss_roll(20, seed=3)
        back = data.LabeledPoints.from_csv(p.to_csv(tmp_path / "s.csv"))
        assert back.labels is None and np.array_equal(back.points, p.points)

    def test_resample(self):
        pts = np.arange(10.0).reshape(5, 2)
        r = data.resample(pts, 100, np.random.default_rng(0))
        assert r.shape == (100, 2) and set(r[:, 0]) <= set(pts[:, 0])
