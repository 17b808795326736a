import numpy as np
import pytest
from conftest import plant

from nrsfm.core import NRSfMError, rotation
from nrsfm.homography import (
    DegeneracyGate,
    homography_from_jet,
    is_degenerate,
    normalize_homography,
    perspective_term,
)
from nrsfm.warp import HomographyWarp, WarpJet


def up_to_scale(A, B):
    A = A / np.linalg.norm(A)
    B = B / np.linalg.norm(B)
    if np.sum(A * B) < 0:
        B = -B
    return np.abs(A - B).max()


def identity_jet(x):
    x = np.asarray(x, dtype=float)
    z = np.zeros(2)
    return WarpJet(x, np.eye(2), z, z, z)


class TestFromJet:
    def test_identity(self):
        h = homography_from_jet(identity_jet([0.1, 0.2]), [0.1, 0.2], [0.1, 0.2])
        assert np.allclose(h.H, np.eye(3), atol=1e-15)
        assert h.cond == pytest.approx(1.0)

    def test_pure_translation(self):
        t = np.array([0.05, -0.02])
        xb = np.array([0.1, 0.2])
        z = np.zeros(2)
        h = homography_from_jet(WarpJet(xb + t, np.eye(2), z, z, z), xb + t, xb)
        expected = np.array([[1.0, 0.0, t[0]], [0.0, 1.0, t[1]], [0.0, 0.0, 1.0]])
        assert up_to_scale(h.H, expected) <= 1e-15
        assert h.H[2, 0] == 0 and h.H[2, 1] == 0

    def test_round_trip_planted(self, planted_set):
        worst = 0.0
        for p in planted_set:
            jet = HomographyWarp(p.H).jet(p.x_bar)
            h = homography_from_jet(jet, jet.eta, p.x_bar)
            scaled = p.H / np.abs(p.H).max()
            worst = max(worst, np.abs(h.H / np.abs(h.H).max() * np.sign(h.H[2, 2] * scaled[2, 2]) - scaled).max())
        assert worst <= 1e-8

    def test_batched_matches_single(self, planted_set):
        p = planted_set[0]
        xb = np.array([p.x_bar, p.x_bar + 0.01, p.x_bar - 0.02])
        jet = HomographyWarp(p.H).jet(xb)
        batch = homography_from_jet(jet, jet.eta, xb)
        for i in range(3):
            single = homography_from_jet(jet[i], jet.eta[i], xb[i])
            assert np.allclose(batch.H[i], single.H, atol=1e-14)

    def test_perspective_term_equals_h3(self, planted_set):
        for p in planted_set[:50]:
            jet = HomographyWarp(p.H).jet(p.x_bar)
            h = normalize_homography(p.H, p.x_bar)
            assert np.allclose(perspective_term(jet), h.m, atol=1e-10)

    def test_singular_jacobian(self):
        z = np.zeros(2)
        jet = WarpJet(z, np.array([[1.0, 2.0], [2.0, 4.0]]), z, z, z)
        with pytest.raises(NRSfMError):
            homography_from_jet(jet, z, z)

    def test_non_finite_jet(self):
        z = np.zeros(2)
        jet = WarpJet(z, np.array([[np.nan, 0.0], [0.0, 1.0]]), z, z, z)
        with pytest.raises(NRSfMError):
            homography_from_jet(jet, z, z)


class TestNormalize:
    def test_second_singular_value_is_one(self, rng):
        H = rng.normal(size=(100, 3, 3))
        h = normalize_homography(H)
        assert np.allclose(h.sigma[:, 1], 1.0, atol=1e-12)
        sv = np.linalg.svd(h.H, compute_uv=False)
        assert np.allclose(sv[:, 1], 1.0, atol=1e-9)
        assert np.all(h.cond >= 1.0)

    def test_idempotent(self, rng):
        H = rng.normal(size=(3, 3))
        x = rng.uniform(-0.3, 0.3, 2)
        once = normalize_homography(H, x)
        twice = normalize_homography(once.H, x)
        assert np.allclose(once.H, twice.H, atol=1e-14)

    def test_sign_makes_s_bar_positive(self):
        h = normalize_homography(-np.eye(3), np.array([0.2, 0.1]))
        assert h.s_bar > 0
        assert np.allclose(h.H, np.eye(3))

    def test_singular(self):
        with pytest.raises(NRSfMError):
            normalize_homography(np.diag([1.0, 1.0, 0.0]))


class TestDegeneracy:
    def test_rotation(self):
        h = normalize_homography(rotation([0.3, 1.0, -0.2], 0.4))
        assert h.cond - 1.0 <= 1e-9
        assert is_degenerate(h, DegeneracyGate(1.05))

    def test_straddle(self):
        assert not is_degenerate(normalize_homography(np.diag([1.2, 1.0, 1.0])), DegeneracyGate(1.05))
        assert is_degenerate(normalize_homography(np.diag([1.04, 1.0, 1.0])), DegeneracyGate(1.05))

    def test_affine_is_not_degenerate(self):
        A = np.array([[1.1, 0.2, 0.03], [0.05, 0.95, -0.02], [0.0, 0.0, 1.0]])
        assert not is_degenerate(normalize_homography(A))

    def test_upper_bound(self):
        h = normalize_homography(np.diag([8.0, 1.0, 1.0]))
        assert not is_degenerate(h)
        assert is_degenerate(h, DegeneracyGate(1.05, upper=5.0))

    def test_batch(self):
        h = normalize_homography(np.stack([np.eye(3), np.diag([2.0, 1.0, 1.0])]))
        assert list(is_degenerate(h)) == [True, False]

    @pytest.mark.parametrize("tau, upper", [(0.9, None), (1.5, 1.2)])
    def test_invalid_gate(self, tau, upper):
        with pytest.raises(ValueError):
            DegeneracyGate(tau, upper)


def test_planted_plane_homography_is_textbook():
    p = plant(rotation([0, 1, 0], np.radians(10)), [0.1, 0.0, 0.05], [0.3, 0.2, 0.93], 1.0)
    n = p.n
    assert np.allclose(p.G, p.R + np.outer(p.t, n))
