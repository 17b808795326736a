"""Readers and writers for the CSV, PLY and JSON exchange files.

Floats are written with 17 significant digits, so files round-trip exactly and
identical inputs give byte-identical outputs.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core import NRSfMError
from .normals import Rejection
from .warp import Correspondences

CORRESPONDENCE_HEADER = ["image_id", "point_id", "x_px", "y_px"]
INTRINSICS_HEADER = ["fx", "fy", "cx", "cy"]
NORMALS_HEADER = ["image_id", "point_id", "nx", "ny", "nz", "support", "rejected_reason"]
GT_POINTS_HEADER = ["image_id", "point_id", "X", "Y", "Z"]
GT_NORMALS_HEADER = ["image_id", "point_id", "nx", "ny", "nz"]


class InputError(NRSfMError, ValueError):
    """An input file is missing, malformed or inconsistent."""


def fmt(x: float) -> str:
    return "nan" if not np.isfinite(x) else format(float(x), ".17g")


def read_rows(path, header: list[str], optional_first: str | None = None) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InputError(f"{path} is empty")
    got = [c.strip() for c in rows[0]]
    allowed = [header] + ([[optional_first] + header] if optional_first else [])
    if got not in allowed:
        raise InputError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
    for n, r in enumerate(rows[1:], start=2):
        if len(r) != len(got):
            raise InputError(f"{path}:{n}: expected {len(got)} fields, got {len(r)}")
    return got, rows[1:]


def _num(path, line: int, text: str, kind=float):
    try:
        v = kind(text)
    except ValueError as exc:
        raise InputError(f"{path}:{line}: bad value {text!r}") from exc
    if kind is float and not np.isfinite(v):
        raise InputError(f"{path}:{line}: non-finite value {text!r}")
    return v


def write_csv(path, header: list[str], rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_correspondences(path) -> tuple[list[int], np.ndarray, np.ndarray]:
    """``(image_ids, point_ids, pixels)`` with ``pixels`` shaped (M, N, 2), NaN if absent.

    Image and point ids come out sorted.

    Raises:
        InputError: malformed file or a repeated (image, point) observation.
    """
    _, rows = read_rows(path, CORRESPONDENCE_HEADER)
    obs = {}
    for n, r in enumerate(rows, start=2):
        key = (_num(path, n, r[0], int), _num(path, n, r[1], int))
        if key in obs:
            raise InputError(f"{path}:{n}: point {key[1]} observed twice in image {key[0]}")
        obs[key] = (_num(path, n, r[2]), _num(path, n, r[3]))
    if not obs:
        raise InputError(f"{path} has no observations")
    image_ids = sorted({k[0] for k in obs})
    point_ids = np.array(sorted({k[1] for k in obs}))
    im = {v: i for i, v in enumerate(image_ids)}
    pt = {int(v): i for i, v in enumerate(point_ids)}
    px = np.full((len(image_ids), len(point_ids), 2), np.nan)
    for (i, j), xy in obs.items():
        px[im[i], pt[j]] = xy
    return image_ids, point_ids, px


def write_correspondences(path, image_ids, point_ids, pixels) -> None:
    rows = []
    for m, im in enumerate(image_ids):
        for n, pid in enumerate(point_ids):
            if np.all(np.isfinite(pixels[m, n])):
                rows.append([int(im), int(pid), fmt(pixels[m, n, 0]), fmt(pixels[m, n, 1])])
    write_csv(path, CORRESPONDENCE_HEADER, rows)


def read_intrinsics(path) -> dict:
    """``{image_id: (fx, fy, cx, cy)}``; a shared single row is stored under ``None``.

    Raises:
        InputError: malformed file or non-positive focal length.
    """
    header, rows = read_rows(path, INTRINSICS_HEADER, optional_first="image_id")
    if not rows:
        raise InputError(f"{path} has no intrinsics")
    out = {}
    per_image = header[0] == "image_id"
    if not per_image and len(rows) != 1:
        raise InputError(f"{path}: several rows need an image_id column")
    for n, r in enumerate(rows, start=2):
        key = _num(path, n, r[0], int) if per_image else None
        vals = tuple(_num(path, n, c) for c in r[1 if per_image else 0 :])
        if vals[0] <= 0 or vals[1] <= 0:
            raise InputError(f"{path}:{n}: focal lengths must be positive")
        out[key] = vals
    return out


def write_intrinsics(path, intrinsics: tuple[float, float, float, float]) -> None:
    write_csv(path, INTRINSICS_HEADER, [[fmt(v) for v in intrinsics]])


def to_retina(image_ids, pixels: np.ndarray, intrinsics: dict) -> np.ndarray:
    """Pixel observations to normalized retina coordinates."""
    out = np.empty_like(pixels)
    for m, im in enumerate(image_ids):
        k = intrinsics.get(im, intrinsics.get(None))
        if k is None:
            raise InputError(f"no intrinsics for image {im}")
        fx, fy, cx, cy = k
        out[m, :, 0] = (pixels[m, :, 0] - cx) / fx
        out[m, :, 1] = (pixels[m, :, 1] - cy) / fy
    return out


def load_correspondences(corr_path, intrinsics_path) -> Correspondences:
    image_ids, point_ids, px = read_correspondences(corr_path)
    return Correspondences(image_ids, point_ids, to_retina(image_ids, px, read_intrinsics(intrinsics_path)))


def write_vectors(path, header, image_ids, point_ids, values) -> None:
    """One row per finite ``values[m, n]``, shape (M, N, 3)."""
    rows = []
    for m, im in enumerate(image_ids):
        for n, pid in enumerate(point_ids):
            v = values[m, n]
            if np.all(np.isfinite(v)):
                rows.append([int(im), int(pid)] + [fmt(c) for c in v])
    write_csv(path, header, rows)


def read_vectors(path, header) -> dict:
    """``{image_id: {point_id: vector}}`` for rows with finite vectors."""
    _, rows = read_rows(path, header)
    out: dict = {}
    for n, r in enumerate(rows, start=2):
        im, pid = _num(path, n, r[0], int), _num(path, n, r[1], int)
        try:
            v = np.array([float(c) for c in r[2:5]])
        except ValueError as exc:
            raise InputError(f"{path}:{n}: bad vector") from exc
        if np.all(np.isfinite(v)):
            out.setdefault(im, {})[pid] = v
    return out


def write_normals(path, field, observed: np.ndarray | None = None) -> None:
    """Write a :class:`~nrsfm.multiview.NormalField`.

    Every observed cell gets a row; unreconstructed ones have ``nan``
    components and a ``rejected_reason`` label.
    """
    obs = np.ones(field.normals.shape[:2], dtype=bool) if observed is None else observed
    rows = []
    for m, im in enumerate(field.image_ids):
        for n, pid in enumerate(field.point_ids):
            if not obs[m, n]:
                continue
            v = field.normals[m, n]
            rows.append(
                [int(im), int(pid)] + [fmt(c) for c in v] + [int(field.support[m, n]), Rejection(int(field.reasons[m, n])).label]
            )
    write_csv(path, NORMALS_HEADER, rows)


def read_normals(path) -> dict:
    return read_vectors(path, NORMALS_HEADER)


def write_ply(path, points: np.ndarray, point_ids) -> None:
    """ASCII PLY with float ``x y z`` and an int ``point_id`` per vertex."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property double x",
        "property double y",
        "property double z",
        "property int point_id",
        "end_header",
    ]
    for p, pid in zip(points, point_ids):
        lines.append(f"{fmt(p[0])} {fmt(p[1])} {fmt(p[2])} {int(pid)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_ply(path) -> tuple[np.ndarray, np.ndarray]:
    """``(points (K, 3), point_ids (K,))`` from a file written by :func:`write_ply`."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0].strip() != "ply" or "end_header" not in lines:
        raise InputError(f"{path} is not an ASCII PLY file")
    end = lines.index("end_header")
    count = next((int(l.split()[2]) for l in lines[:end] if l.startswith("element vertex")), None)
    if count is None:
        raise InputError(f"{path} has no vertex element")
    body = [l.split() for l in lines[end + 1 : end + 1 + count]]
    if len(body) != count or any(len(b) != 4 for b in body):
        raise InputError(f"{path}: vertex list does not match header")
    try:
        pts = np.array([[float(b[0]), float(b[1]), float(b[2])] for b in body]).reshape(-1, 3)
        ids = np.array([int(b[3]) for b in body], dtype=int)
    except ValueError as exc:
        raise InputError(f"{path}: bad vertex") from exc
    return pts, ids


def write_json(path, data: dict) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
