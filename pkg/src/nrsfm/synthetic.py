"""Synthetic deforming-sheet scenes with analytic ground truth.

A flat square template with coordinates ``(a, b)`` is mapped into each frame by

    p_f(a, b) = scale_f * roll(stretch_f * a, b; curvature_f)
    X_f       = R_f p_f + t_f

where ``roll`` wraps the sheet around a cylinder whose axis is parallel to the
``b`` direction. Rolling is developable, so a cylinder sequence is exactly
isometric to the template; ``scale_f`` makes it conformal and ``stretch_f``
makes it generic.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .core import NRSfMError, rotation
from .warp import Correspondences


class SurfaceKind(str, enum.Enum):
    PLANE = "plane"
    CYLINDER = "cylinder"
    STRETCHED = "stretched"


class Deformation(str, enum.Enum):
    ISOMETRIC = "isometric"
    CONFORMAL = "conformal"
    GENERIC = "generic"


class Motion(str, enum.Enum):
    DEFAULT = "default"
    ROTATION = "rotation"
    STATIC = "static"


# per-frame defaults, cycled when more frames are requested
DEFAULT_CURVATURES = (0.09, 0.13, 0.165, 0.11, 0.145)
DEFAULT_SCALES = (1.0, 1.3, 1.15, 0.9, 1.2)
DEFAULT_STRETCHES = (1.0, 1.15, 0.9, 1.1, 0.95)
_ROT_AXES = ((0.2, 1.0, 0.1), (1.0, 0.4, 0.0), (0.5, -1.0, 0.3), (-0.8, 0.3, 0.4))
_ROT_ANGLES = (0.15, -0.12, 0.1, -0.14)
_OFFSETS = ((0.5, 0.1, 0.9), (-0.4, 0.3, -0.6), (0.2, -0.4, 1.2), (-0.3, -0.2, 0.4))


@dataclass
class SceneSpec:
    """Parameters of a synthetic scene.

    Lengths are in arbitrary world units; the sheet center sits ``depth``
    units in front of the first camera.
    """

    surface_kind: SurfaceKind = SurfaceKind.CYLINDER
    deformation: Deformation = Deformation.ISOMETRIC
    n_points: int = 400
    n_frames: int = 3
    focal: float = 500.0
    image_size: tuple[int, int] = (640, 480)
    motion: Motion = Motion.DEFAULT
    noise_sigma_px: float = 0.0
    rng_seed: int = 0
    sheet_size: float = 4.0
    depth: float = 6.0
    curvatures: tuple[float, ...] = DEFAULT_CURVATURES
    scales: tuple[float, ...] = DEFAULT_SCALES
    stretches: tuple[float, ...] = DEFAULT_STRETCHES
    poses: list[tuple[np.ndarray, np.ndarray]] | None = None

    def __post_init__(self):
        self.surface_kind = SurfaceKind(self.surface_kind)
        self.deformation = Deformation(self.deformation)
        self.motion = Motion(self.motion)
        if self.surface_kind is SurfaceKind.STRETCHED:
            self.deformation = Deformation.GENERIC
        if self.n_points < 4:
            raise ValueError(f"n_points must be at least 4, got {self.n_points}")
        if self.n_frames < 1:
            raise ValueError("n_frames must be positive")
        if self.focal <= 0 or self.noise_sigma_px < 0:
            raise ValueError("focal must be positive and noise non-negative")
        if self.poses is not None and len(self.poses) != self.n_frames:
            raise ValueError("one pose per frame is required")

    @property
    def intrinsics(self) -> tuple[float, float, float, float]:
        """``(fx, fy, cx, cy)``."""
        w, h = self.image_size
        return (self.focal, self.focal, w / 2.0, h / 2.0)

    def frame_pose(self, f: int) -> tuple[np.ndarray, np.ndarray]:
        if self.poses is not None:
            R, t = self.poses[f]
            return np.asarray(R, dtype=float), np.asarray(t, dtype=float)
        base = np.array([0.0, 0.0, self.depth])
        if f == 0 or self.motion is Motion.STATIC:
            return np.eye(3), base
        j = (f - 1) % len(_ROT_AXES)
        R = rotation(_ROT_AXES[j], _ROT_ANGLES[j])
        if self.motion is Motion.ROTATION:
            # camera rotating about its center: points move as R @ X_0
            return R, R @ base
        return R, base + np.array(_OFFSETS[j])

    def frame_shape(self, f: int) -> tuple[float, float, float]:
        """``(curvature, scale, stretch)`` of frame ``f``."""
        if self.motion is not Motion.DEFAULT:
            f = 0
        kappa = 0.0
        if self.surface_kind is not SurfaceKind.PLANE:
            kappa = self.curvatures[f % len(self.curvatures)]
        scale = self.scales[f % len(self.scales)] if self.deformation is Deformation.CONFORMAL else 1.0
        stretch = self.stretches[f % len(self.stretches)] if self.deformation is Deformation.GENERIC else 1.0
        return kappa, scale, stretch


@dataclass
class GroundTruth:
    """Analytic scene data, arrays indexed ``[frame, point]``.

    Attributes:
        positions: Camera-frame 3D points, (F, N, 3).
        normals: Unit normals oriented away from the camera, (F, N, 3).
        retina: Noise-free normalized projections, (F, N, 2).
        pixels: Noise-free pixel projections, (F, N, 2).
        observed_pixels: Pixel observations with noise, (F, N, 2).
        tangents: Surface Jacobian w.r.t. template coordinates, (F, N, 3, 2).
        template: Template coordinates, (N, 2).
    """

    spec: SceneSpec
    positions: np.ndarray
    normals: np.ndarray
    retina: np.ndarray
    pixels: np.ndarray
    observed_pixels: np.ndarray
    tangents: np.ndarray
    template: np.ndarray
    point_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.point_ids is None:
            self.point_ids = np.arange(self.positions.shape[1])

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def image_ids(self) -> list[int]:
        return list(range(self.n_frames))

    def correspondences(self, noisy: bool = True) -> Correspondences:
        fx, fy, cx, cy = self.spec.intrinsics
        px = self.observed_pixels if noisy else self.pixels
        xy = np.stack([(px[..., 0] - cx) / fx, (px[..., 1] - cy) / fy], axis=-1)
        return Correspondences(self.image_ids, self.point_ids.copy(), xy)


def template_points(spec: SceneSpec) -> np.ndarray:
    """Low-discrepancy samples covering the template square."""
    pts = qmc.Halton(d=2, scramble=False).random(spec.n_points + 1)[1:]
    return (pts - 0.5) * spec.sheet_size


def _shape(ab: np.ndarray, kappa: float, scale: float, stretch: float):
    """Sheet points and tangents before the rigid pose."""
    a = stretch * ab[:, 0]
    b = ab[:, 1]
    n = len(ab)
    if kappa == 0.0:
        p = np.stack([a, b, np.zeros(n)], axis=-1)
        da = np.tile([1.0, 0.0, 0.0], (n, 1))
    else:
        th = kappa * a
        p = np.stack([np.sin(th) / kappa, b, (1.0 - np.cos(th)) / kappa], axis=-1)
        da = np.stack([np.cos(th), np.zeros(n), np.sin(th)], axis=-1)
    db = np.tile([0.0, 1.0, 0.0], (n, 1))
    T = scale * np.stack([stretch * da, db], axis=-1)
    return scale * p, T


def generate(spec: SceneSpec) -> GroundTruth:
    """Build the scene described by ``spec``.

    Raises:
        NRSfMError: a point lies behind the camera.
    """
    ab = template_points(spec)
    fx, fy, cx, cy = spec.intrinsics
    F, N = spec.n_frames, spec.n_points
    positions = np.zeros((F, N, 3))
    tangents = np.zeros((F, N, 3, 2))
    for f in range(F):
        p, T = _shape(ab, *spec.frame_shape(f))
        R, t = spec.frame_pose(f)
        positions[f] = p @ R.T + t
        tangents[f] = np.einsum("ij,njk->nik", R, T)
        behind = np.nonzero(positions[f, :, 2] <= 0)[0]
        if len(behind):
            raise NRSfMError(f"frame {f}, point {behind[0]} is behind the camera")
    normals = np.cross(tangents[..., 0], tangents[..., 1])
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    facing = np.sum(normals * positions, axis=-1)
    normals *= np.where(facing < 0, -1.0, 1.0)[..., None]
    retina = positions[..., :2] / positions[..., 2:]
    pixels = np.stack([fx * retina[..., 0] + cx, fy * retina[..., 1] + cy], axis=-1)
    rng = np.random.default_rng(spec.rng_seed)
    observed = pixels + rng.normal(scale=spec.noise_sigma_px, size=pixels.shape) if spec.noise_sigma_px > 0 else pixels.copy()
    return GroundTruth(spec, positions, normals, retina, pixels, observed, tangents, ab)


def planted_pair_homography(gt: GroundTruth, ref: int, other: int, point: int) -> np.ndarray:
    """Exact homography between the tangent planes at ``point``.

    The returned matrix sends homogeneous points of image ``other`` to image
    ``ref`` (up to scale), so decomposing it yields the ``ref`` normal.

    Raises:
        NRSfMError: the tangent plane of ``ref`` contains the optical center.
    """
    basis_ref = np.column_stack([gt.tangents[ref, point], gt.positions[ref, point]])
    basis_oth = np.column_stack([gt.tangents[other, point], gt.positions[other, point]])
    if abs(np.linalg.det(basis_ref)) < 1e-12 * np.linalg.norm(basis_ref) ** 3:
        raise NRSfMError(f"undefined tangent plane at point {point} in frame {ref}")
    # G maps ref-frame tangent-plane points to the other frame; H is its inverse
    G = basis_oth @ np.linalg.inv(basis_ref)
    return np.linalg.inv(G)
