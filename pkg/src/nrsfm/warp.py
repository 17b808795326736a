"""Image-to-image warps as uniform cubic tensor-product B-splines.

A warp maps points of one image (``x_bar``) to the corresponding points of
another (``x``). Fitting is a regularized linear least-squares problem; the
regularizer is the thin-plate bending energy of the spline, integrated exactly
over the spline domain. The weight is either given or picked per fit by
generalized cross-validation (GCV).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import NRSfMError

DEFAULT_GRID = (8, 8)
AUTO = "auto"
DEFAULT_LAMBDA = AUTO
# candidate weights for GCV; 0 is skipped when the unregularized system is singular
GCV_LAMBDAS = (0.0,) + tuple(float(x) for x in np.logspace(-12, -1, 23))
DOMAIN_PADDING = 0.05
MIN_CORRESPONDENCES = 6
SPLINE_DEGREE = 3


class WarpFitError(NRSfMError):
    """The least-squares problem for the warp cannot be solved."""


class DomainError(NRSfMError, ValueError):
    """A query point lies outside the spline domain."""


@dataclass
class Correspondences:
    """Point tracks across images.

    Attributes:
        image_ids: Image identifiers, length M.
        point_ids: Point identifiers, length N. Unique.
        xy: Retina-normalized observations, shape (M, N, 2). Missing
            observations are NaN.
    """

    image_ids: list[int]
    point_ids: np.ndarray
    xy: np.ndarray

    def __post_init__(self):
        self.point_ids = np.asarray(self.point_ids, dtype=int)
        self.xy = np.asarray(self.xy, dtype=float)
        M, N = len(self.image_ids), len(self.point_ids)
        if self.xy.shape != (M, N, 2):
            raise ValueError(f"xy must have shape ({M}, {N}, 2), got {self.xy.shape}")
        if len(set(self.image_ids)) != M:
            raise ValueError("duplicate image ids")
        if len(np.unique(self.point_ids)) != N:
            raise ValueError("duplicate point ids")

    @property
    def n_images(self) -> int:
        return len(self.image_ids)

    @property
    def n_points(self) -> int:
        return len(self.point_ids)

    def observed(self, i: int) -> np.ndarray:
        """Boolean mask of points seen in image index ``i``."""
        return np.all(np.isfinite(self.xy[i]), axis=-1)

    def shared(self, i: int, k: int) -> np.ndarray:
        return self.observed(i) & self.observed(k)


@dataclass(frozen=True)
class WarpJet:
    """Value, Jacobian and second derivatives of a warp.

    All fields may carry leading batch dimensions.

    Attributes:
        eta: Warped position, shape (..., 2).
        J: Jacobian ``d eta / d x_bar``, shape (..., 2, 2).
        d2_uu, d2_uv, d2_vv: Second-derivative 2-vectors, shape (..., 2).
    """

    eta: np.ndarray
    J: np.ndarray
    d2_uu: np.ndarray
    d2_uv: np.ndarray
    d2_vv: np.ndarray

    def __getitem__(self, idx) -> "WarpJet":
        return WarpJet(self.eta[idx], self.J[idx], self.d2_uu[idx], self.d2_uv[idx], self.d2_vv[idx])


# --- uniform cubic B-spline basis -------------------------------------------


def _basis(t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Four active basis functions and their t-derivatives, each (..., 4)."""
    t2 = t * t
    t3 = t2 * t
    s = 1.0 - t
    b0 = np.stack([s**3, 3 * t3 - 6 * t2 + 4, -3 * t3 + 3 * t2 + 3 * t + 1, t3], axis=-1) / 6.0
    b1 = np.stack([-(s**2), 3 * t2 - 4 * t, -3 * t2 + 2 * t + 1, t2], axis=-1) / 2.0
    b2 = np.stack([s, 3 * t - 2, 1 - 3 * t, t], axis=-1)
    return b0, b1, b2


def _locate(x: np.ndarray, lo: float, hi: float, n_ctrl: int):
    """Interval index and local parameter for uniform knots on [lo, hi]."""
    n_int = n_ctrl - SPLINE_DEGREE
    h = (hi - lo) / n_int
    s = (x - lo) / h
    idx = np.clip(np.floor(s).astype(int), 0, n_int - 1)
    return idx, s - idx, h


def _gram_1d(n_ctrl: int, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact integrals of products of basis functions (orders 0, 1, 2)."""
    nodes, weights = np.polynomial.legendre.leggauss(4)
    t = 0.5 * (nodes + 1.0)
    w = 0.5 * weights * h
    b0, b1, b2 = _basis(t)
    b1 = b1 / h
    b2 = b2 / h**2
    grams = [np.zeros((n_ctrl, n_ctrl)) for _ in range(3)]
    for i in range(n_ctrl - SPLINE_DEGREE):
        sl = slice(i, i + 4)
        for G, b in zip(grams, (b0, b1, b2)):
            G[sl, sl] += (b * w[:, None]).T @ b
    return tuple(grams)


@dataclass(frozen=True)
class WarpModel:
    """A fitted tensor-product cubic B-spline warp.

    Attributes:
        grid: Control-point counts ``(nu, nv)``.
        domain: ``(u_min, u_max, v_min, v_max)`` of the source image.
        coeffs: Control values, shape (nu, nv, 2).
        lambda_reg: Bending-energy weight used at fit time.
        rms_residual: Root-mean-square fitting residual.
        max_residual: Largest fitting residual.
    """

    grid: tuple[int, int]
    domain: tuple[float, float, float, float]
    coeffs: np.ndarray
    lambda_reg: float = 0.0
    rms_residual: float = float("nan")
    max_residual: float = float("nan")
    degree: int = field(default=SPLINE_DEGREE)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u0, u1, v0, v1 = self.domain
        return (x[..., 0] >= u0) & (x[..., 0] <= u1) & (x[..., 1] >= v0) & (x[..., 1] <= v1)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != 2:
            raise ValueError(f"query points must have shape (..., 2), got {x.shape}")
        if not np.all(self.contains(x)):
            raise DomainError(f"query outside warp domain {self.domain}")
        return x

    def _eval(self, x: np.ndarray, order: int):
        nu, nv = self.grid
        u0, u1, v0, v1 = self.domain
        iu, tu, hu = _locate(x[..., 0], u0, u1, nu)
        iv, tv, hv = _locate(x[..., 1], v0, v1, nv)
        bu = _basis(tu)
        bv = _basis(tv)
        pu = iu[..., None] + np.arange(4)
        pv = iv[..., None] + np.arange(4)
        C = self.coeffs[pu[..., :, None], pv[..., None, :]]  # (..., 4, 4, 2)

        def comb(a, b):
            return np.einsum("...i,...j,...ijc->...c", a, b, C)

        if order == 0:
            return comb(bu[0], bv[0])
        return {
            "eta": comb(bu[0], bv[0]),
            "du": comb(bu[1], bv[0]) / hu,
            "dv": comb(bu[0], bv[1]) / hv,
            "duu": comb(bu[2], bv[0]) / hu**2,
            "duv": comb(bu[1], bv[1]) / (hu * hv),
            "dvv": comb(bu[0], bv[2]) / hv**2,
        }

    def __call__(self, x) -> np.ndarray:
        return self._eval(self._check(x), 0)

    def jet(self, x) -> "WarpJet":
        return eval_jet(self, x)

    def bending_energy(self) -> float:
        nu, nv = self.grid
        u0, u1, v0, v1 = self.domain
        E = _bending_matrix(self.grid, ((u1 - u0) / (nu - 3), (v1 - v0) / (nv - 3)))
        c = self.coeffs.reshape(nu * nv, 2)
        return float(np.einsum("ic,ij,jc->", c, E, c))


def _bending_matrix(grid, spacing) -> np.ndarray:
    (nu, nv), (hu, hv) = grid, spacing
    Mu, Ku1, Ku2 = _gram_1d(nu, hu)
    Mv, Kv1, Kv2 = _gram_1d(nv, hv)
    return np.kron(Ku2, Mv) + 2.0 * np.kron(Ku1, Kv1) + np.kron(Mu, Kv2)


def _design_matrix(x: np.ndarray, grid, domain) -> np.ndarray:
    nu, nv = grid
    u0, u1, v0, v1 = domain
    iu, tu, _ = _locate(x[:, 0], u0, u1, nu)
    iv, tv, _ = _locate(x[:, 1], v0, v1, nv)
    bu = _basis(tu)[0]
    bv = _basis(tv)[0]
    A = np.zeros((len(x), nu * nv))
    rows = np.arange(len(x))[:, None, None]
    cols = (iu[:, None, None] + np.arange(4)[None, :, None]) * nv + (iv[:, None, None] + np.arange(4)[None, None, :])
    np.add.at(A, (np.broadcast_to(rows, cols.shape), cols), bu[:, :, None] * bv[:, None, :])
    return A


class HomographyWarp:
    """Exact warp induced by a global homography, ``x ~ H @ (x_bar, 1)``."""

    def __init__(self, H):
        self.H = np.asarray(H, dtype=float)

    def __call__(self, x) -> np.ndarray:
        xh = np.einsum("ij,...j->...i", self.H, np.concatenate([x, np.ones(np.shape(x)[:-1] + (1,))], axis=-1))
        return xh[..., :2] / xh[..., 2:]

    def jet(self, x) -> WarpJet:
        """Closed-form first and second derivatives."""
        x = np.asarray(x, dtype=float)
        H = self.H
        s = H[2, 0] * x[..., 0] + H[2, 1] * x[..., 1] + H[2, 2]
        eta = self(x)
        J = (H[:2, :2] - eta[..., :, None] * H[2, :2]) / s[..., None, None]
        coef = np.array([[2 * H[2, 0], H[2, 1], 0.0], [0.0, H[2, 0], 2 * H[2, 1]]])
        D = -(J @ coef) / s[..., None, None]
        return WarpJet(eta, J, D[..., 0], D[..., 1], D[..., 2])


def padded_domain(points, padding: float = DOMAIN_PADDING) -> tuple[float, float, float, float]:
    """Bounding box of ``points`` grown by ``padding`` of its extent per side."""
    points = np.asarray(points, dtype=float)
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    ext = np.maximum(hi - lo, 1e-6)
    lo = lo - padding * ext
    hi = hi + padding * ext
    return (float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))


def _system(src, dst, grid, domain):
    A = _design_matrix(src, grid, domain)
    N = len(src)
    nu, nv = grid
    u0, u1, v0, v1 = domain
    R = _bending_matrix(grid, ((u1 - u0) / (nu - 3), (v1 - v0) / (nv - 3)))
    return A, A.T @ A / N, A.T @ dst / N, R


def _full_rank(lhs: np.ndarray) -> bool:
    w = np.linalg.eigvalsh(lhs)
    return bool(w[0] > 1e-12 * w[-1])


def gcv_score(A, G, rhs, R, dst, lambda_reg: float) -> float:
    """Generalized cross-validation score of one weight (lower is better).

    ``N |r|^2 / (N - tr(influence))^2`` with both output coordinates sharing
    the influence matrix. Returns ``inf`` for singular systems.
    """
    lhs = G + lambda_reg * R
    if not _full_rank(lhs):
        return float("inf")
    c = np.linalg.solve(lhs, rhs)
    N = len(dst)
    dof = N - np.trace(np.linalg.solve(lhs, G))
    if dof <= 0:
        return float("inf")
    return float(N * np.sum((A @ c - dst) ** 2) / dof**2)


def _best_lambda(A, G, rhs, R, dst, grid, candidates) -> float:
    scores = [gcv_score(A, G, rhs, R, dst, lam) for lam in candidates]
    best = int(np.argmin(scores))
    if not np.isfinite(scores[best]):
        raise WarpFitError(f"no regularization weight gives a solvable system for grid {grid}")
    return float(candidates[best])


def select_lambda(src, dst, grid=DEFAULT_GRID, domain=None, candidates=GCV_LAMBDAS) -> float:
    """Bending weight minimizing the GCV score over ``candidates``.

    Raises:
        WarpFitError: every candidate gives a singular system.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if domain is None:
        domain = padded_domain(src)
    return _best_lambda(*_system(src, dst, grid, domain), dst, grid, candidates)


def fit_warp(
    src,
    dst,
    grid: tuple[int, int] = DEFAULT_GRID,
    lambda_reg: float | str = DEFAULT_LAMBDA,
    domain: tuple[float, float, float, float] | None = None,
) -> WarpModel:
    """Fit a spline warp sending ``src`` points onto ``dst`` points.

    Minimizes ``mean |eta(src) - dst|^2 + lambda_reg * bending_energy``.

    Args:
        src: Source points, shape (N, 2).
        dst: Target points, shape (N, 2).
        grid: Control points per axis, each at least 4.
        lambda_reg: Non-negative regularization weight, or ``"auto"`` to
            choose it by GCV. The weight used is stored on the model.
        domain: Spline domain; defaults to the padded bounding box of ``src``.

    Raises:
        WarpFitError: Too few points, or a singular system without
            regularization.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValueError(f"src and dst must both be (N, 2); got {src.shape} and {dst.shape}")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise ValueError("correspondences contain non-finite values")
    if len(src) < MIN_CORRESPONDENCES:
        raise WarpFitError(f"need at least {MIN_CORRESPONDENCES} correspondences, got {len(src)}")
    auto = isinstance(lambda_reg, str)
    if auto and lambda_reg != AUTO:
        raise ValueError(f"lambda_reg must be a number or {AUTO!r}, got {lambda_reg!r}")
    if not auto and not lambda_reg >= 0:
        raise ValueError("lambda_reg must be non-negative")
    grid = (int(grid[0]), int(grid[1]))
    if min(grid) < SPLINE_DEGREE + 1:
        raise ValueError(f"grid must be at least 4x4, got {grid}")
    if domain is None:
        domain = padded_domain(src)
    model = WarpModel(grid, domain, np.zeros(grid + (2,)))
    model._check(src)

    A, G, rhs, R = _system(src, dst, grid, domain)
    if auto:
        lambda_reg = _best_lambda(A, G, rhs, R, dst, grid, GCV_LAMBDAS)
    lhs = G + lambda_reg * R if lambda_reg > 0 else G
    if lambda_reg == 0 and not _full_rank(lhs):
        raise WarpFitError(
            f"normal equations are rank deficient for grid {grid} with {len(src)} points; "
            "use lambda_reg > 0 or a coarser grid"
        )
    coeffs = np.linalg.solve(lhs, rhs).reshape(grid[0], grid[1], 2)
    res = np.linalg.norm(A @ coeffs.reshape(-1, 2) - dst, axis=1)
    return WarpModel(
        grid,
        domain,
        coeffs,
        lambda_reg=float(lambda_reg),
        rms_residual=float(np.sqrt(np.mean(res**2))),
        max_residual=float(res.max()),
    )


def eval_jet(model: WarpModel, x) -> WarpJet:
    """Analytic value, Jacobian and second derivatives at ``x`` (shape (..., 2))."""
    d = model._eval(model._check(x), 2)
    J = np.stack([d["du"], d["dv"]], axis=-1)
    return WarpJet(d["eta"], J, d["duu"], d["duv"], d["dvv"])


def jet_fd(f: Callable[[np.ndarray], np.ndarray], x, h: float = 1e-4) -> WarpJet:
    """Central-difference jet of an arbitrary vectorized map ``f``."""
    x = np.asarray(x, dtype=float)
    eu = np.array([h, 0.0])
    ev = np.array([0.0, h])
    f0 = f(x)
    fpu, fmu = f(x + eu), f(x - eu)
    fpv, fmv = f(x + ev), f(x - ev)
    fpp, fpm = f(x + eu + ev), f(x + eu - ev)
    fmp, fmm = f(x - eu + ev), f(x - eu - ev)
    J = np.stack([(fpu - fmu) / (2 * h), (fpv - fmv) / (2 * h)], axis=-1)
    d2_uu = (fpu - 2 * f0 + fmu) / h**2
    d2_vv = (fpv - 2 * f0 + fmv) / h**2
    d2_uv = (fpp - fpm - fmp + fmm) / (4 * h**2)
    jet = WarpJet(f0, J, d2_uu, d2_uv, d2_vv)
    if not all(np.all(np.isfinite(a)) for a in (J, d2_uu, d2_uv, d2_vv)):
        raise ValueError(f"finite-difference step {h} produced non-finite derivatives")
    return jet


def eval_jet_fd(model: WarpModel, x, h: float = 1e-4) -> WarpJet:
    """Finite-difference counterpart of :func:`eval_jet`.

    The stencil must stay inside the domain, so ``x`` has to be at least ``h``
    away from the domain boundary.
    """
    if h <= 0 or not np.isfinite(h):
        raise ValueError(f"invalid finite-difference step {h}")
    x = model._check(x)
    if h < 1e-12:
        raise ValueError(f"finite-difference step {h} is below the cancellation limit")
    return jet_fd(model, x, h)
