import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nrsfm.core import (
    DepthJet,
    ImagePoint,
    MetricTensor2,
    UnitNormal,
    angle_between,
    cross_matrix,
    homogeneous,
    rotation,
    svd3,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


class TestImagePoint:
    def test_valid(self):
        p = ImagePoint(0.2, -0.3)
        assert np.allclose(p.homogeneous(), [0.2, -0.3, 1.0])

    @pytest.mark.parametrize("u, v", [(np.nan, 0.0), (0.0, np.inf), (10.0, 0.0), (0.0, -12.0)])
    def test_rejects_bad_coordinates(self, u, v):
        with pytest.raises(ValueError):
            ImagePoint(u, v)


class TestUnitNormal:
    def test_from_vector_normalizes(self):
        n = UnitNormal.from_vector([0.0, 3.0, 4.0])
        assert np.allclose(n.to_array(), [0.0, 0.6, 0.8])

    def test_rejects_non_unit(self):
        with pytest.raises(ValueError):
            UnitNormal(0.0, 0.0, 1.0 + 1e-9)


class TestSvd3:
    def test_identity(self):
        sigma, U, Vt = svd3(np.eye(3))
        assert np.allclose(sigma, [1, 1, 1])

    def test_diagonal(self):
        sigma, _, _ = svd3(np.diag([1.0, 3.0, 2.0]))
        assert np.allclose(sigma, [3, 2, 1])

    def test_matches_eigenvalues_of_gram(self, rng):
        m = rng.normal(size=(3, 3))
        sigma, _, _ = svd3(m)
        ev = np.sort(np.linalg.eigvalsh(m.T @ m))[::-1]
        assert np.allclose(sigma, np.sqrt(ev), rtol=1e-10)

    def test_reconstruction_batch(self, rng):
        m = rng.normal(size=(10000, 3, 3)) * rng.uniform(0.01, 100, size=(10000, 1, 1))
        sigma, U, Vt = svd3(m)
        rec = U @ (sigma[..., None] * Vt)
        err = np.linalg.norm(rec - m, axis=(1, 2)) / np.linalg.norm(m, axis=(1, 2))
        assert err.max() <= 1e-10
        assert np.all(np.diff(sigma, axis=-1) <= 0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            svd3(np.array([[np.nan, 0, 0], [0, 1, 0], [0, 0, 1]]))


class TestCrossMatrix:
    def test_canonical_axis(self):
        assert np.array_equal(cross_matrix([0.0, 0.0, 1.0]), [[0, -1, 0], [1, 0, 0], [0, 0, 0]])

    @given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite))
    def test_matches_component_formula(self, n, a):
        n1, n2, n3 = n
        a1, a2, a3 = a
        expected = [n2 * a3 - n3 * a2, n3 * a1 - n1 * a3, n1 * a2 - n2 * a1]
        assert np.allclose(cross_matrix(n) @ a, expected, atol=1e-9, rtol=1e-12)

    @given(arrays(float, 3, elements=finite))
    def test_skew(self, n):
        C = cross_matrix(n)
        assert np.array_equal(C.T, -C)

    def test_annihilates_unit_normal(self, rng):
        n = rng.normal(size=(1000, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        out = np.einsum("nij,nj->ni", cross_matrix(n), n)
        assert np.abs(out).max() <= 1e-15


class TestDepthJet:
    def test_fronto_parallel(self):
        jet = DepthJet(0.5, 0.0, 0.0)
        x = ImagePoint(0.1, -0.2)
        assert angle_between(jet.normal(x).to_array(), [0, 0, 1]) < 1e-15
        # zero depth derivatives: the surface Jacobian is [I; 0] / beta
        assert np.allclose(jet.metric(x).to_array(), 4 * np.eye(2))

    def test_normal_from_depth_derivatives(self):
        # the plane n . X = d has k_i = n_i / (n . x_hat), so n is proportional to (k1, k2, 1 - u k1 - v k2)
        jet = DepthJet(1.3, 0.4, -0.25)
        x = ImagePoint(0.2, 0.1)
        expected = np.array([0.4, -0.25, 1 - 0.2 * 0.4 + 0.1 * 0.25])
        assert angle_between(jet.normal(x).to_array(), expected) < 1e-12

    def test_metric_is_psd(self):
        g = DepthJet(2.0, 0.3, 0.7).metric(ImagePoint(0.3, -0.4))
        assert g.det >= 0 and g.g11 > 0
        assert np.allclose(g.to_array(), g.to_array().T)


def test_metric_from_jacobian():
    J = np.array([[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]])
    g = MetricTensor2.from_jacobian(J)
    assert (g.g11, g.g12, g.g22) == (1.0, 0.0, 4.0)
    assert g.det == 4.0


def test_rotation_is_orthonormal(rng):
    R = rotation(rng.normal(size=3), 0.7)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-14)
    assert np.isclose(np.linalg.det(R), 1.0)


def test_angle_between_ignores_orientation():
    assert angle_between([0, 0, 1], [0, 0, -1]) == 0.0
    assert np.isclose(angle_between([1, 0, 0], [0, 1, 0]), np.pi / 2)


def test_homogeneous_batch():
    assert homogeneous(np.zeros((4, 5, 2))).shape == (4, 5, 3)
