"""Shared geometric value types and small-matrix helpers.

Conventions used across the package:

* Image points are retina-normalized (intrinsics already removed), so a pixel
  ``(px, py)`` becomes ``((px - cx) / fx, (py - cy) / fy)``.
* ``x_hat`` denotes the homogeneous lift ``(u, v, 1)``.
* Surface normals are oriented away from the camera, ``n . x_hat > 0``. This is
  the orientation of ``(k1, k2, 1 - u k1 - v k2)``, the normal written in terms
  of the logarithmic depth derivatives.

Every helper accepts arrays with leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TypeAlias

import numpy as np

Mat3: TypeAlias = np.ndarray
"""Shape (..., 3, 3), float64."""

COORD_BOUND = 10.0
"""Sanity bound on normalized image coordinates."""


class NRSfMError(Exception):
    """Base class for all library errors."""


class DegenerateError(NRSfMError):
    """The local homography is (numerically) orthogonal."""


class NoRealSolutionError(NRSfMError):
    """The normal quadratics have no real roots beyond the clamping tolerance."""


class NotVisibleError(NRSfMError):
    """A candidate plane passes through the optical center."""


class PointRejectedError(NRSfMError):
    """No candidate normal survived the visibility test."""


@dataclass(frozen=True)
class ImagePoint:
    u: float
    v: float

    def __post_init__(self):
        if not (np.isfinite(self.u) and np.isfinite(self.v)):
            raise ValueError(f"non-finite image point ({self.u}, {self.v})")
        if abs(self.u) >= COORD_BOUND or abs(self.v) >= COORD_BOUND:
            raise ValueError(
                f"image point ({self.u}, {self.v}) is not retina-normalized "
                f"(|u|, |v| must be below {COORD_BOUND})"
            )

    def to_array(self) -> np.ndarray:
        return np.array([self.u, self.v])

    def homogeneous(self) -> np.ndarray:
        return np.array([self.u, self.v, 1.0])


@dataclass(frozen=True)
class UnitNormal:
    n1: float
    n2: float
    n3: float

    def __post_init__(self):
        norm = np.sqrt(self.n1**2 + self.n2**2 + self.n3**2)
        if not abs(norm - 1.0) <= 1e-12:
            raise ValueError(f"normal is not unit length (norm = {norm!r})")

    @classmethod
    def from_vector(cls, n) -> "UnitNormal":
        n = np.asarray(n, dtype=float)
        n = n / np.linalg.norm(n)
        return cls(float(n[0]), float(n[1]), float(n[2]))

    def to_array(self) -> np.ndarray:
        return np.array([self.n1, self.n2, self.n3])


@dataclass(frozen=True)
class DepthJet:
    """Inverse depth ``beta`` and its logarithmic derivatives at one point."""

    beta: float
    k1: float
    k2: float

    def surface_jacobian(self, x: ImagePoint) -> np.ndarray:
        """Jacobian of ``phi(u, v) = (u, v, 1) / beta(u, v)``, shape (3, 2)."""
        u, v, k1, k2 = x.u, x.v, self.k1, self.k2
        return np.array([[1 - u * k1, -u * k2], [-v * k1, 1 - v * k2], [-k1, -k2]]) / self.beta

    def metric(self, x: ImagePoint) -> "MetricTensor2":
        return MetricTensor2.from_jacobian(self.surface_jacobian(x))

    def normal(self, x: ImagePoint) -> UnitNormal:
        """Unit normal as the cross product of the surface Jacobian columns."""
        J = self.surface_jacobian(x)
        return UnitNormal.from_vector(np.cross(J[:, 0], J[:, 1]))


@dataclass(frozen=True)
class MetricTensor2:
    g11: float
    g12: float
    g22: float

    @classmethod
    def from_jacobian(cls, J) -> "MetricTensor2":
        g = np.asarray(J).T @ np.asarray(J)
        return cls(float(g[0, 0]), float(0.5 * (g[0, 1] + g[1, 0])), float(g[1, 1]))

    def to_array(self) -> np.ndarray:
        return np.array([[self.g11, self.g12], [self.g12, self.g22]])

    @property
    def det(self) -> float:
        return self.g11 * self.g22 - self.g12**2


def homogeneous(x) -> np.ndarray:
    """Append a trailing 1 to points of shape (..., 2)."""
    x = np.asarray(x, dtype=float)
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def normalize(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def svd3(m: Mat3) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD of one or many 3x3 matrices.

    Returns ``(sigma, U, Vt)`` with ``m = U @ diag(sigma) @ Vt`` and ``sigma``
    sorted in descending order.
    """
    m = np.asarray(m, dtype=float)
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3) matrices, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("svd3 received non-finite entries")
    U, sigma, Vt = np.linalg.svd(m)
    return sigma, U, Vt


def cross_matrix(n) -> Mat3:
    """Skew-symmetric matrix ``[n]_x`` such that ``[n]_x @ a == cross(n, a)``."""
    if isinstance(n, UnitNormal):
        n = n.to_array()
    n = np.asarray(n, dtype=float)
    out = np.zeros(n.shape[:-1] + (3, 3))
    out[..., 0, 1] = -n[..., 2]
    out[..., 0, 2] = n[..., 1]
    out[..., 1, 0] = n[..., 2]
    out[..., 1, 2] = -n[..., 0]
    out[..., 2, 0] = -n[..., 1]
    out[..., 2, 1] = n[..., 0]
    return out


def rotation(axis, angle: float) -> Mat3:
    """Rodrigues rotation about ``axis`` by ``angle`` radians."""
    a = normalize(axis)
    K = cross_matrix(a)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def angle_between(a, b) -> np.ndarray:
    """Unsigned angle in radians between vectors, ignoring orientation."""
    a = normalize(a)
    b = normalize(b)
    c = np.abs(np.sum(a * b, axis=-1))
    # arccos is ill-conditioned near 1; the cross-product form is not
    s = np.linalg.norm(np.cross(a, b), axis=-1)
    return np.arctan2(s, c)
