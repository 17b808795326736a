"""Closed-form surface normals from a normalized local homography.

With ``H_bar = inv(H)`` and ``S = H_bar^T H_bar - I`` the reference-image normal
``n`` satisfies ``[n]_x^T S [n]_x = 0``. Writing ``y1 = n1/n3`` and
``y2 = n2/n3`` this reduces to two independent quadratics plus a third relation
that pairs their roots, which gives two candidate normals.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import (
    DegenerateError,
    ImagePoint,
    NoRealSolutionError,
    NotVisibleError,
    PointRejectedError,
    UnitNormal,
    homogeneous,
    normalize,
)
from .homography import LocalHomography

S_NORM_MIN = 1e-10
DISC_REL_TOL = 1e-9
PIVOT_REL_TOL = 1e-8


class Rejection(enum.IntEnum):
    """Why a pair estimate produced no normal. ``NONE`` means accepted."""

    NONE = 0
    DEGENERATE = 1
    NO_REAL_SOLUTION = 2
    NOT_VISIBLE = 3
    MISSING_CORRESPONDENCE = 4
    WARP_FAILURE = 5

    @property
    def label(self) -> str:
        return "" if self is Rejection.NONE else self.name.lower()


@dataclass(frozen=True)
class SMatrix:
    """``S = H_bar^T H_bar - I``, shape (..., 3, 3), exactly symmetric."""

    S: np.ndarray

    @property
    def norm(self) -> np.ndarray:
        return np.linalg.norm(self.S, axis=(-2, -1))

    def entry(self, i: int, j: int) -> np.ndarray:
        """One-based accessor, ``entry(1, 3)`` is ``s13``."""
        return self.S[..., i - 1, j - 1]


@dataclass(frozen=True)
class NormalCandidates:
    """The two closed-form normals for one (or a batch of) S matrices.

    Attributes:
        n_a, n_b: Unit candidates, shape (..., 3).
        s_sign: Root-pairing sign.
        discriminant_1, discriminant_2: Root discriminants before clamping.
        residuals: Residuals of the three quadratic relations evaluated at each
            unit candidate, shape (..., 2, 3).
        s33: The ``s33`` entry, needed by the visibility test.
        visible_a, visible_b: Visibility flags, filled by :func:`with_visibility`.
    """

    n_a: np.ndarray
    n_b: np.ndarray
    s_sign: np.ndarray
    discriminant_1: np.ndarray
    discriminant_2: np.ndarray
    residuals: np.ndarray
    s33: np.ndarray
    visible_a: np.ndarray | None = None
    visible_b: np.ndarray | None = None

    @property
    def normals(self) -> np.ndarray:
        return np.stack([self.n_a, self.n_b], axis=-2)


def build_s_matrix(h: LocalHomography | np.ndarray) -> SMatrix:
    """``S`` from a normalized homography (object or raw matrix)."""
    H = h.H if isinstance(h, LocalHomography) else np.asarray(h, dtype=float)
    try:
        H_bar = np.linalg.inv(H)
    except np.linalg.LinAlgError as exc:
        raise DegenerateError("singular homography") from exc
    S = np.swapaxes(H_bar, -1, -2) @ H_bar - np.eye(3)
    return SMatrix(0.5 * (S + np.swapaxes(S, -1, -2)))


def quadratic_residuals(S: np.ndarray, n: np.ndarray) -> np.ndarray:
    """The three relations multiplied through by ``n3^2``, shape (..., 3)."""
    n1, n2, n3 = n[..., 0], n[..., 1], n[..., 2]
    s = lambda i, j: S[..., i - 1, j - 1]  # noqa: E731
    return np.stack(
        [
            s(3, 3) * n2**2 - 2 * s(2, 3) * n2 * n3 + s(2, 2) * n3**2,
            s(3, 3) * n1**2 - 2 * s(1, 3) * n1 * n3 + s(1, 1) * n3**2,
            s(2, 2) * n1**2 - 2 * s(1, 2) * n1 * n2 + s(1, 1) * n2**2,
        ],
        axis=-1,
    )


# index triples (a, b, pivot): roots are taken along a and b, pivot carries s_pp
_PIVOTS = np.array([[1, 2, 0], [2, 0, 1], [0, 1, 2]])


def _solve(S: np.ndarray):
    """Vectorized closed-form roots. Returns candidates and a status array."""
    S = np.asarray(S, dtype=float)
    batch = S.shape[:-2]
    norm = np.linalg.norm(S, axis=(-2, -1))
    diag = np.abs(np.diagonal(S, axis1=-2, axis2=-1))
    # the s33 form is used unless s33 vanishes, then the largest diagonal pivots
    pivot = np.where(diag[..., 2] >= PIVOT_REL_TOL * norm, 2, np.argmax(diag, axis=-1))
    a, b, p = (np.take(_PIVOTS[:, c], pivot) for c in range(3))

    def s(i, j):
        return np.take_along_axis(
            np.take_along_axis(S, i[..., None, None], axis=-2)[..., 0, :], j[..., None], axis=-1
        )[..., 0]

    s_pp, s_ap, s_bp = s(p, p), s(a, p), s(b, p)
    disc1 = s_ap**2 - s_pp * s(a, a)
    disc2 = s_bp**2 - s_pp * s(b, b)
    eps = DISC_REL_TOL * norm**2
    status = np.full(batch, Rejection.NONE, dtype=int)
    status[(disc1 < -eps) | (disc2 < -eps)] = Rejection.NO_REAL_SOLUTION
    status[norm <= S_NORM_MIN] = Rejection.DEGENERATE
    r1 = np.sqrt(np.clip(disc1, 0.0, None))
    r2 = np.sqrt(np.clip(disc2, 0.0, None))
    sign = np.sign(s_bp * s_ap - s(a, b) * s_pp)

    def assemble(sg):
        na = np.zeros(batch + (3,))
        nb = np.zeros(batch + (3,))
        for arr, e in ((na, 1.0), (nb, -1.0)):
            np.put_along_axis(arr, a[..., None], (s_ap + e * sg * r1)[..., None], axis=-1)
            np.put_along_axis(arr, b[..., None], (s_bp + e * r2)[..., None], axis=-1)
            np.put_along_axis(arr, p[..., None], s_pp[..., None], axis=-1)
        return na, nb

    na, nb = assemble(np.where(sign == 0, 1.0, sign))
    tie = sign == 0
    if np.any(tie):
        # a zero pairing sign implies a double root for an exact S; with noise
        # keep whichever pairing better satisfies the third relation
        qa, qb = assemble(-np.ones(batch))
        with np.errstate(divide="ignore", invalid="ignore"):
            res_p = np.abs(quadratic_residuals(S, normalize(na))[..., 2])
            res_m = np.abs(quadratic_residuals(S, normalize(qa))[..., 2])
        use_m = tie & (res_m < res_p)
        na = np.where(use_m[..., None], qa, na)
        nb = np.where(use_m[..., None], qb, nb)
        sign = np.where(tie, np.where(use_m, -1.0, 1.0), sign)
    ok = status == Rejection.NONE
    safe = lambda n: np.where(ok[..., None], n, np.array([0.0, 0.0, 1.0]))  # noqa: E731
    na = normalize(safe(na))
    nb = normalize(safe(nb))
    residuals = np.stack([quadratic_residuals(S, na), quadratic_residuals(S, nb)], axis=-2)
    cands = NormalCandidates(na, nb, sign, disc1, disc2, residuals, S[..., 2, 2])
    return cands, status


def solve_normals(s: SMatrix) -> NormalCandidates:
    """Closed-form candidate normals for a single S matrix.

    Raises:
        DegenerateError: ``|S|`` is numerically zero.
        NoRealSolutionError: a discriminant is negative beyond tolerance.
    """
    cands, status = _solve(s.S)
    status = np.asarray(status)
    if np.any(status == Rejection.DEGENERATE):
        raise DegenerateError("S vanishes: the homography is orthogonal")
    if np.any(status == Rejection.NO_REAL_SOLUTION):
        raise NoRealSolutionError(
            f"negative discriminant ({float(np.min(cands.discriminant_1))}, "
            f"{float(np.min(cands.discriminant_2))}); data is noisy or not isometric"
        )
    return cands


def visibility_value(n, x, s33) -> np.ndarray:
    """``s33 / (1 - u k1 - v k2)`` with ``k_i = n_i / (u n1 + v n2 + n3)``."""
    n = np.asarray(n, dtype=float)
    depth_dir = np.einsum("...i,...i->...", n, homogeneous(x))
    with np.errstate(divide="ignore", invalid="ignore"):
        k = n[..., :2] / depth_dir[..., None]
        denom = 1.0 - np.einsum("...i,...i->...", np.asarray(x, dtype=float), k)
        return np.asarray(s33) / denom


def check_visibility(n, x, s33: float) -> bool:
    """Visibility of a candidate normal at image point ``x``.

    Raises:
        NotVisibleError: the candidate plane contains the optical center.
    """
    if isinstance(n, UnitNormal):
        n = n.to_array()
    if isinstance(x, ImagePoint):
        x = x.to_array()
    xh = homogeneous(x)
    if np.dot(n, xh) == 0.0:
        raise NotVisibleError("candidate plane passes through the optical center")
    val = visibility_value(n, x, s33)
    return bool(np.isfinite(val) and val > 0)


def depth_derivatives(n, x) -> np.ndarray:
    """``(k1, k2)`` of the plane with normal ``n`` at ``x``."""
    n = np.asarray(n, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return n[..., :2] / np.einsum("...i,...i->...", n, homogeneous(x))[..., None]


def with_visibility(c: NormalCandidates, x) -> NormalCandidates:
    def vis(n):
        val = visibility_value(n, x, c.s33)
        return np.isfinite(val) & (val > 0)

    return NormalCandidates(
        c.n_a, c.n_b, c.s_sign, c.discriminant_1, c.discriminant_2, c.residuals, c.s33, vis(c.n_a), vis(c.n_b)
    )


def orient(n, x) -> np.ndarray:
    """Flip normals so that ``n . x_hat > 0``."""
    n = np.asarray(n, dtype=float)
    d = np.einsum("...i,...i->...", n, homogeneous(x))
    return n * np.where(d < 0, -1.0, 1.0)[..., None]


def _select(c: NormalCandidates, x):
    ka = np.sum(depth_derivatives(c.n_a, x) ** 2, axis=-1)
    kb = np.sum(depth_derivatives(c.n_b, x) ** 2, axis=-1)
    va, vb = c.visible_a, c.visible_b
    take_a = va & (~vb | (ka <= kb))
    chosen = np.where(take_a[..., None], c.n_a, c.n_b)
    return orient(chosen, x), va | vb


def select_normal(c: NormalCandidates, x) -> UnitNormal:
    """Visible candidate with the smallest ``k1^2 + k2^2`` at ``x``.

    Raises:
        PointRejectedError: neither candidate is visible.
    """
    if isinstance(x, ImagePoint):
        x = x.to_array()
    if c.visible_a is None:
        c = with_visibility(c, x)
    n, ok = _select(c, x)
    if not bool(ok):
        raise PointRejectedError("no visible candidate normal")
    return UnitNormal.from_vector(n)


def transfer_normal(n, h: LocalHomography) -> UnitNormal | np.ndarray:
    """Normal in the other image, ``normalize(H^T n)``."""
    single = isinstance(n, UnitNormal)
    arr = n.to_array() if single else np.asarray(n, dtype=float)
    out = np.einsum("...ji,...j->...i", h.H, arr)
    norm = np.linalg.norm(out, axis=-1)
    assert np.all(norm > 0), "H^T n vanished for an invertible H"
    out = out / norm[..., None]
    return UnitNormal.from_vector(out) if single else out


def estimate_normals(h: LocalHomography, x):
    """Batched decomposition, validation and selection.

    Args:
        h: Local homographies, batch shape B.
        x: Reference-image points, shape B + (2,).

    Returns:
        ``(n_ref, n_other, status)`` where rejected entries carry NaN normals
        and a non-zero :class:`Rejection` code.
    """
    cands, status = _solve(build_s_matrix(h).S)
    cands = with_visibility(cands, x)
    n_ref, ok = _select(cands, x)
    status = np.where((status == Rejection.NONE) & ~ok, int(Rejection.NOT_VISIBLE), status)
    n_other = transfer_normal(n_ref, h)
    bad = status != Rejection.NONE
    n_ref = np.where(bad[..., None], np.nan, n_ref)
    n_other = np.where(bad[..., None], np.nan, n_other)
    return n_ref, n_other, status
