"""Pairwise normal estimation over all reference images and median aggregation."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import NRSfMError
from .homography import DegeneracyGate, homography_from_jet, is_degenerate
from .normals import Rejection, estimate_normals
from .warp import DEFAULT_GRID, DEFAULT_LAMBDA, Correspondences, WarpFitError, fit_warp


@dataclass(frozen=True)
class PairEstimate:
    """Normals for one point from one (reference, other) image pair.

    ``ref_image`` and ``other_image`` are image ids. Normals are ``None`` when
    the estimate was rejected; ``cond`` is NaN only for missing data.
    """

    ref_image: int
    other_image: int
    point_id: int
    normal_on_ref: np.ndarray | None
    normal_on_other: np.ndarray | None
    cond: float
    rejection: Rejection = Rejection.NONE

    @property
    def accepted(self) -> bool:
        return self.rejection is Rejection.NONE


@dataclass
class PairBatch:
    """Array form of all estimates of one (reference, other) pair."""

    ref: int
    other: int
    point_index: np.ndarray
    n_ref: np.ndarray
    n_other: np.ndarray
    cond: np.ndarray
    status: np.ndarray
    h: object = None


@dataclass
class NormalField:
    """Aggregated per-image normals.

    Attributes:
        image_ids: length M.
        point_ids: length N.
        normals: (M, N, 3); NaN marks unreconstructed entries.
        support: (M, N) number of contributing estimates.
        reasons: (M, N) dominant :class:`Rejection` code of unreconstructed
            entries, ``NONE`` for reconstructed ones.
    """

    image_ids: list[int]
    point_ids: np.ndarray
    normals: np.ndarray
    support: np.ndarray
    reasons: np.ndarray

    @property
    def reconstructed(self) -> np.ndarray:
        return self.support > 0

    def image_index(self, image_id: int) -> int:
        return self.image_ids.index(image_id)


def default_threads() -> int:
    env = os.environ.get("NRSFM_THREADS", "")
    n = int(env) if env.strip() else 0
    return n if n > 0 else (os.cpu_count() or 1)


def fit_pair_warps(
    corr: Correspondences,
    references=None,
    grid=DEFAULT_GRID,
    lambda_reg: float | str = DEFAULT_LAMBDA,
    threads: int = 1,
    skip_failures: bool = False,
) -> dict:
    """Warps from every other image onto each reference image.

    Keys are ``(ref_index, other_index)``; values map points of the other image
    onto the reference image, fit on the points seen in both. Pairs without
    shared points are left out.

    Raises:
        WarpFitError: a fit failed and ``skip_failures`` is False; otherwise
            the failed pair maps to ``None``.
    """
    refs = range(corr.n_images) if references is None else references
    pairs = [(k, i) for k in refs for i in range(corr.n_images) if i != k]

    def fit(pair):
        k, i = pair
        mask = corr.shared(i, k)
        if mask.sum() == 0:
            return pair, False
        try:
            return pair, fit_warp(corr.xy[i, mask], corr.xy[k, mask], grid=grid, lambda_reg=lambda_reg)
        except WarpFitError:
            if not skip_failures:
                raise
            return pair, None

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        models = list(pool.map(fit, pairs))
    return {p: m for p, m in models if m is not False}


def _pair_batch(corr: Correspondences, warp, k: int, i: int, gate: DegeneracyGate) -> PairBatch:
    idx = np.nonzero(corr.shared(i, k))[0]
    P = len(idx)
    n_ref = np.full((P, 3), np.nan)
    n_other = np.full((P, 3), np.nan)
    cond = np.full(P, np.nan)
    status = np.full(P, int(Rejection.NONE))
    if P == 0:
        return PairBatch(k, i, idx, n_ref, n_other, cond, status)
    if warp is None:
        status[:] = Rejection.WARP_FAILURE
        return PairBatch(k, i, idx, n_ref, n_other, cond, status)
    x_bar = corr.xy[i, idx]
    jet = warp.jet(x_bar)
    J = jet.J
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    good = np.isfinite(det) & (np.abs(det) > 1e-12)
    status[~good] = Rejection.NO_REAL_SOLUTION
    g = np.nonzero(good)[0]
    if len(g) == 0:
        return PairBatch(k, i, idx, n_ref, n_other, cond, status)
    jet_g = jet[g]
    # the reference point is taken on the fitted warp so that x and the jet agree
    h = homography_from_jet(jet_g, jet_g.eta, x_bar[g])
    cond[g] = h.cond
    degenerate = np.asarray(is_degenerate(h, gate), dtype=bool).reshape(-1)
    status[g[degenerate]] = Rejection.DEGENERATE
    live = ~degenerate
    if np.any(live):
        nr, no, st = estimate_normals(h[live], jet_g.eta[live])
        sel = g[live]
        n_ref[sel] = nr
        n_other[sel] = no
        status[sel] = st
    return PairBatch(k, i, idx, n_ref, n_other, cond, status, h)


def run_pairwise_batches(corr: Correspondences, warps: dict, gate: DegeneracyGate = DegeneracyGate(),
                         references=None, threads: int = 1) -> list[PairBatch]:
    """Array-valued core of :func:`run_pairwise`; output order is fixed."""
    if corr.n_images < 2:
        raise NRSfMError(f"need at least 2 images, got {corr.n_images}")
    refs = range(corr.n_images) if references is None else references
    pairs = [(k, i) for k in refs for i in range(corr.n_images) if i != k]
    for p in pairs:
        if p not in warps and corr.shared(p[1], p[0]).any():
            raise NRSfMError(f"no warp for reference {p[0]} and image {p[1]}")
    # a pair mapped to None had its fit fail; its points are marked WARP_FAILURE

    def work(pair):
        k, i = pair
        return _pair_batch(corr, warps.get(pair), k, i, gate)

    if threads <= 1:
        return [work(p) for p in pairs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, pairs))


def run_pairwise(corr: Correspondences, warps: dict, gate: DegeneracyGate = DegeneracyGate(),
                 references=None, threads: int = 1) -> list[PairEstimate]:
    """Estimate normals for every (reference, point, other image) triple.

    Args:
        corr: Point tracks over at least two images.
        warps: ``{(ref_index, other_index): warp}`` where each warp exposes
            ``jet(x_bar)`` and maps the other image onto the reference, or is
            ``None`` when fitting failed.
        gate: Degeneracy threshold.
        references: Reference image indices; all images by default.
        threads: Worker threads; results do not depend on it.

    Returns:
        Estimates ordered by reference, other image, then point. Points seen in
        only one image of a pair yield ``MISSING_CORRESPONDENCE`` entries.
    """
    batches = run_pairwise_batches(corr, warps, gate, references, threads)
    out: list[PairEstimate] = []
    for b in batches:
        ref_id, oth_id = corr.image_ids[b.ref], corr.image_ids[b.other]
        shared = {int(j): r for r, j in enumerate(b.point_index)}
        either = corr.observed(b.ref) | corr.observed(b.other)
        for j in np.nonzero(either)[0]:
            pid = int(corr.point_ids[j])
            r = shared.get(int(j))
            if r is None:
                out.append(PairEstimate(ref_id, oth_id, pid, None, None, float("nan"), Rejection.MISSING_CORRESPONDENCE))
                continue
            st = Rejection(int(b.status[r]))
            ok = st is Rejection.NONE
            out.append(
                PairEstimate(
                    ref_id,
                    oth_id,
                    pid,
                    b.n_ref[r].copy() if ok else None,
                    b.n_other[r].copy() if ok else None,
                    float(b.cond[r]),
                    st,
                )
            )
    return out


def _median_field(image_ids, point_ids, contributions, reasons_seen) -> NormalField:
    M, N = len(image_ids), len(point_ids)
    counts = np.zeros((M, N), dtype=int)
    for (m, n), _ in contributions:
        counts[m, n] += 1
    K = max(1, counts.max(initial=0))
    stack = np.full((M, N, K, 3), np.nan)
    fill = np.zeros((M, N), dtype=int)
    for (m, n), vec in contributions:
        stack[m, n, fill[m, n]] = vec
        fill[m, n] += 1
    normals = np.full((M, N, 3), np.nan)
    has = counts > 0
    if np.any(has):
        med = np.nanmedian(stack[has], axis=1)
        normals[has] = med / np.linalg.norm(med, axis=-1, keepdims=True)
    reasons = np.full((M, N), int(Rejection.MISSING_CORRESPONDENCE))
    reasons[has] = Rejection.NONE
    for (m, n), codes in reasons_seen.items():
        if not has[m, n] and codes:
            vals, cnt = np.unique(codes, return_counts=True)
            reasons[m, n] = vals[np.argmax(cnt)]
    return NormalField(list(image_ids), np.asarray(point_ids), normals, counts, reasons)


def aggregate(estimates: list[PairEstimate], image_ids=None, point_ids=None) -> NormalField:
    """Component-wise median of all accepted estimates per (image, point).

    Even counts average the two middle values; the result is renormalized.
    Cells without accepted estimates stay NaN.
    """
    if image_ids is None:
        image_ids = sorted({e.ref_image for e in estimates} | {e.other_image for e in estimates})
    if point_ids is None:
        point_ids = sorted({e.point_id for e in estimates})
    im = {v: i for i, v in enumerate(image_ids)}
    pt = {int(v): i for i, v in enumerate(point_ids)}
    contributions = []
    reasons_seen: dict = {}
    for e in estimates:
        cells = ((im[e.ref_image], pt[e.point_id], e.normal_on_ref), (im[e.other_image], pt[e.point_id], e.normal_on_other))
        for m, n, vec in cells:
            if e.accepted:
                contributions.append(((m, n), vec))
            elif e.rejection is not Rejection.MISSING_CORRESPONDENCE:
                reasons_seen.setdefault((m, n), []).append(int(e.rejection))
    return _median_field(image_ids, point_ids, contributions, reasons_seen)


def aggregate_batches(corr: Correspondences, batches: list[PairBatch]) -> NormalField:
    """Vectorized :func:`aggregate` over :func:`run_pairwise_batches` output."""
    M, N = corr.n_images, corr.n_points
    per_cell = np.zeros((M, N), dtype=int)
    for b in batches:
        ok = b.status == Rejection.NONE
        np.add.at(per_cell, (np.full(ok.sum(), b.ref), b.point_index[ok]), 1)
        np.add.at(per_cell, (np.full(ok.sum(), b.other), b.point_index[ok]), 1)
    K = max(1, per_cell.max(initial=0))
    stack = np.full((M, N, K, 3), np.nan)
    fill = np.zeros((M, N), dtype=int)
    reject_counts = np.zeros((M, N, len(Rejection)), dtype=int)
    for b in batches:
        ok = b.status == Rejection.NONE
        for img, vecs in ((b.ref, b.n_ref), (b.other, b.n_other)):
            j = b.point_index[ok]
            stack[img, j, fill[img, j]] = vecs[ok]
            fill[img, j] += 1
            np.add.at(reject_counts, (np.full((~ok).sum(), img), b.point_index[~ok], b.status[~ok]), 1)
    normals = np.full((M, N, 3), np.nan)
    has = per_cell > 0
    if np.any(has):
        med = np.nanmedian(stack[has], axis=1)
        normals[has] = med / np.linalg.norm(med, axis=-1, keepdims=True)
    reasons = np.where(reject_counts.sum(-1) > 0, np.argmax(reject_counts, axis=-1), int(Rejection.MISSING_CORRESPONDENCE))
    reasons[has] = Rejection.NONE
    return NormalField(list(corr.image_ids), corr.point_ids.copy(), normals, per_cell, reasons)
