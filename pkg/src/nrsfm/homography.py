"""Local plane-induced homographies built from warp jets, and degeneracy gating."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Mat3, NRSfMError, homogeneous, svd3
from .warp import WarpJet

DEFAULT_TAU = 1.05

_SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


@dataclass(frozen=True)
class LocalHomography:
    """Normalized local homography sending ``x_bar`` to ``x``.

    Fields may be batched along leading dimensions.

    Attributes:
        H: Homography with second singular value 1, shape (..., 3, 3).
        sigma: Singular values, descending, shape (..., 3).
        cond: Conditioning ratio ``sigma1 / sigma3``.
        m: Perspective part ``(h31, h32) / s_bar``, shape (..., 2).
        s_bar: ``h31 u_bar + h32 v_bar + h33`` at the correspondence (> 0).
    """

    H: Mat3
    sigma: np.ndarray
    cond: np.ndarray
    m: np.ndarray
    s_bar: np.ndarray

    def __getitem__(self, idx) -> "LocalHomography":
        return LocalHomography(self.H[idx], self.sigma[idx], self.cond[idx], self.m[idx], self.s_bar[idx])


@dataclass(frozen=True)
class DegeneracyGate:
    """Accept a homography only when ``tau < cond`` (and ``cond <= upper`` if set)."""

    tau: float = DEFAULT_TAU
    upper: float | None = None

    def __post_init__(self):
        if not self.tau >= 1.0:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if self.upper is not None and self.upper <= self.tau:
            raise ValueError("upper bound must exceed tau")


def normalize_homography(H, x_bar=None) -> LocalHomography:
    """Scale ``H`` so its second singular value is 1.

    The sign is chosen so that ``s_bar`` is positive at ``x_bar`` (the origin
    when ``x_bar`` is omitted).
    """
    H = np.asarray(H, dtype=float)
    sigma, _, _ = svd3(H)
    if np.any(sigma[..., 2] <= 0):
        raise NRSfMError("singular homography")
    H = H / sigma[..., 1, None, None]
    sigma = sigma / sigma[..., 1, None]
    xb = np.zeros(H.shape[:-2] + (2,)) if x_bar is None else np.asarray(x_bar, dtype=float)
    s_bar = np.einsum("...i,...i->...", H[..., 2, :], homogeneous(xb))
    sign = np.where(s_bar < 0, -1.0, 1.0)
    H = H * sign[..., None, None]
    s_bar = s_bar * sign
    m = H[..., 2, :2] / s_bar[..., None]
    return LocalHomography(H, sigma, sigma[..., 0] / sigma[..., 2], m, s_bar)


def perspective_term(jet: WarpJet) -> np.ndarray:
    """``m = -swap @ inv(J) @ d2eta/du dv``, shape (..., 2)."""
    Jinv_mixed = np.linalg.solve(jet.J, jet.d2_uv[..., None])[..., 0]
    return -Jinv_mixed @ _SWAP.T


def homography_from_jet(jet: WarpJet, x, x_bar) -> LocalHomography:
    """Assemble the local homography at a correspondence from the warp jet.

    ``jet`` is evaluated at ``x_bar`` and ``x`` is the corresponding point in
    the other image. Works on single points or batches.

    Raises:
        NRSfMError: Non-finite jet or singular warp Jacobian.
    """
    x = np.asarray(x, dtype=float)
    x_bar = np.asarray(x_bar, dtype=float)
    J = np.asarray(jet.J, dtype=float)
    if not (np.all(np.isfinite(J)) and np.all(np.isfinite(jet.d2_uv))):
        raise NRSfMError("warp jet has non-finite entries")
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(np.abs(det) <= 1e-12 * np.maximum(1.0, np.abs(J).max())):
        raise NRSfMError("singular warp Jacobian")
    m = perspective_term(jet)
    batch = J.shape[:-2]
    # H^T = [[I, 0], [-x_bar^T, 1]] [[J^T, m], [0, 1]] [[I, 0], [x^T, 1]]
    A = np.zeros(batch + (3, 3))
    A[..., :2, :2] = np.swapaxes(J, -1, -2)
    A[..., :2, 2] = m
    A[..., 2, 2] = 1.0
    left = np.broadcast_to(np.eye(3), batch + (3, 3)).copy()
    left[..., 2, :2] = -x_bar
    right = np.broadcast_to(np.eye(3), batch + (3, 3)).copy()
    right[..., 2, :2] = x
    Ht = left @ A @ right
    return normalize_homography(np.swapaxes(Ht, -1, -2), x_bar)


def is_degenerate(h: LocalHomography, gate: DegeneracyGate = DegeneracyGate()) -> np.ndarray | bool:
    """True where ``cond <= tau`` (or above the optional upper bound)."""
    cond = np.asarray(h.cond)
    bad = cond <= gate.tau
    if gate.upper is not None:
        bad = bad | (cond > gate.upper)
    return bool(bad) if bad.ndim == 0 else bad
