"""Normal and depth errors against ground truth, with scale alignment."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .core import NRSfMError


@dataclass
class FrameReport:
    image_id: int
    En: float
    En_angular_deg: float
    Ed_rmse: float
    Ed_rel: float
    scale: float
    n_normals: int
    n_points: int


@dataclass
class EvalReport:
    """Evaluation summary; En uses absolute dot products.

    Attributes:
        En: Mean ``|n_pred . n_gt|`` over reconstructed normals.
        En_angular_deg: Mean angle between the normal lines, in degrees.
        Ed_rmse: RMSE of scale-aligned 3D points over all frames.
        Ed_rel: Mean over frames of ``|c P - G|_F / |G|_F``.
        per_frame: One :class:`FrameReport` per evaluated image.
        rejected_fraction: Share of observed (image, point) cells without a normal.
    """

    En: float
    En_angular_deg: float
    Ed_rmse: float
    Ed_rel: float
    per_frame: list[FrameReport] = field(default_factory=list)
    rejected_fraction: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        lines = [
            f"En              {self.En:.6f}",
            f"En_angular_deg  {self.En_angular_deg:.6f}",
            f"Ed_rmse         {self.Ed_rmse:.6g}",
            f"Ed_rel          {self.Ed_rel:.6g}",
            f"rejected        {self.rejected_fraction:.4f}",
            "image  En        angle_deg  Ed_rel     normals  points",
        ]
        for f in self.per_frame:
            lines.append(
                f"{f.image_id:<6d} {f.En:.6f}  {f.En_angular_deg:9.4f}  {f.Ed_rel:.3e}  {f.n_normals:7d}  {f.n_points:6d}"
            )
        return "\n".join(lines)


def normal_agreement(pred, gt) -> tuple[float, float]:
    """``(mean |dot|, mean angle in degrees)`` over rows finite in both.

    Raises:
        NRSfMError: no overlapping rows.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    ok = np.all(np.isfinite(pred), 1) & np.all(np.isfinite(gt), 1)
    if not ok.any():
        raise NRSfMError("no overlapping normals to evaluate")
    a = pred[ok] / np.linalg.norm(pred[ok], axis=1, keepdims=True)
    b = gt[ok] / np.linalg.norm(gt[ok], axis=1, keepdims=True)
    dot = np.clip(np.abs(np.sum(a * b, axis=1)), 0.0, 1.0)
    return float(dot.mean()), float(np.degrees(np.arccos(dot)).mean())


def align_scale(pred, gt) -> float:
    """Least-squares ``c`` minimizing ``|c pred - gt|`` over finite rows."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    den = np.sum(pred * pred)
    if den <= 0:
        raise NRSfMError("cannot align an all-zero reconstruction")
    return float(np.sum(pred * gt) / den)


def depth_agreement(pred, gt) -> tuple[float, float, float, int]:
    """``(rmse, rel, scale, count)`` for one frame after scale alignment.

    Raises:
        NRSfMError: no overlapping rows.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    ok = np.all(np.isfinite(pred), 1) & np.all(np.isfinite(gt), 1)
    if not ok.any():
        raise NRSfMError("no overlapping points to evaluate")
    P, G = pred[ok], gt[ok]
    c = align_scale(P, G)
    diff = c * P - G
    rmse = float(np.sqrt(np.mean(np.sum(diff**2, axis=1))))
    rel = float(np.linalg.norm(diff) / np.linalg.norm(G))
    return rmse, rel, c, int(ok.sum())


def _rows(values, ids, wanted) -> np.ndarray:
    pos = {int(p): i for i, p in enumerate(ids)}
    out = np.full((len(wanted), 3), np.nan)
    for r, p in enumerate(wanted):
        i = pos.get(int(p))
        if i is not None:
            out[r] = values[i]
    return out


def evaluate(
    normals: dict,
    points: dict,
    gt_normals: dict,
    gt_points: dict,
    rejected_fraction: float = 0.0,
) -> EvalReport:
    """Evaluate per-image predictions against ground truth.

    All dict arguments map an image id to an ``(N, 3)`` array; prediction and
    ground truth rows of an image refer to the same points. NaN rows are absent values. ``points`` may be empty when
    only normals are evaluated, in which case depth errors are NaN.

    Raises:
        NRSfMError: nothing overlaps.
    """
    frames = []
    dots, angles, sq, cnt = [], [], 0.0, 0
    images = sorted((set(normals) & set(gt_normals)) | (set(points) & set(gt_points)))
    if not images:
        raise NRSfMError("no common images between prediction and ground truth")
    for im in images:
        pn = np.asarray(normals.get(im, np.full((0, 3), np.nan)))
        gn = np.asarray(gt_normals.get(im, np.full((0, 3), np.nan)))
        ok = np.all(np.isfinite(pn), 1) & np.all(np.isfinite(gn), 1) if len(pn) == len(gn) else np.zeros(0, bool)
        en, ang = normal_agreement(pn, gn) if ok.any() else (np.nan, np.nan)
        rmse = rel = scale = np.nan
        npts = 0
        if im in points and im in gt_points:
            rmse, rel, scale, npts = depth_agreement(points[im], gt_points[im])
            sq += rmse**2 * npts
            cnt += npts
        if ok.any():
            dots.append(en * ok.sum())
            angles.append(ang * ok.sum())
        frames.append(FrameReport(int(im), en, ang, rmse, rel, scale, int(ok.sum()), npts))
    n_norm = sum(f.n_normals for f in frames)
    if n_norm == 0 and cnt == 0:
        raise NRSfMError("no overlapping normals or points to evaluate")
    rels = [f.Ed_rel for f in frames if f.n_points]
    return EvalReport(
        En=float(sum(dots) / n_norm) if n_norm else float("nan"),
        En_angular_deg=float(sum(angles) / n_norm) if n_norm else float("nan"),
        Ed_rmse=float(np.sqrt(sq / cnt)) if cnt else float("nan"),
        Ed_rel=float(np.mean(rels)) if rels else float("nan"),
        per_frame=frames,
        rejected_fraction=float(rejected_fraction),
    )


def normal_error(pred, gt) -> tuple[float, float]:
    """``(En, En_angular_deg)`` of a :class:`~nrsfm.multiview.NormalField`.

    ``gt`` is a :class:`~nrsfm.synthetic.GroundTruth` whose frames are matched
    to the field by image id.
    """
    sel = [gt.image_ids.index(i) for i in pred.image_ids]
    gn = gt.normals[sel][:, [list(gt.point_ids).index(int(p)) for p in pred.point_ids]]
    return normal_agreement(pred.normals, gn)


def depth_error(surfaces: dict, gt) -> tuple[float, float]:
    """``(Ed_rmse, Ed_rel)`` of per-image surfaces ``{image_id: ReconstructedSurface}``.

    Only points whose depth came from a normal are compared.

    Raises:
        NRSfMError: no surfaces, or a surface with no overlap.
    """
    if not surfaces:
        raise NRSfMError("no surfaces to evaluate")
    sq, cnt, rels = 0.0, 0, []
    for im in sorted(surfaces):
        s = surfaces[im]
        p = np.where(s.reconstructed[:, None], s.points, np.nan)
        rmse, rel, _, n = depth_agreement(_rows(p, s.point_ids, gt.point_ids), gt.positions[gt.image_ids.index(im)])
        sq += rmse**2 * n
        cnt += n
        rels.append(rel)
    return float(np.sqrt(sq / cnt)), float(np.mean(rels))
