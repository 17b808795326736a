"""Command-line interface: ``synth``, ``reconstruct``, ``eval`` and ``decompose``.

Exit codes: 0 success (including fully degenerate input), 2 invalid input,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .core import NRSfMError
from .homography import DegeneracyGate, is_degenerate, normalize_homography
from .metrics import evaluate
from .normals import build_s_matrix, select_normal, solve_normals, with_visibility
from .pipeline import Reconstruction, RunConfig, reconstruct
from .synthetic import Deformation, Motion, SceneSpec, SurfaceKind, generate

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

CORRESPONDENCES = "correspondences.csv"
INTRINSICS = "intrinsics.csv"
GT_POINTS = "gt_points.csv"
GT_NORMALS = "gt_normals.csv"
SCENE = "scene.json"
NORMALS = "normals.csv"
SUMMARY = "summary.json"


def ply_name(image_id: int) -> str:
    return f"points_{image_id}.ply"


def parse_grid(text) -> tuple[int, int]:
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    parts = str(text).lower().replace("x", ",").split(",")
    if len(parts) == 1:
        parts = parts * 2
    try:
        return (int(parts[0]), int(parts[1]))
    except (ValueError, IndexError) as exc:
        raise ValueError(f"grid must look like 8x8, got {text!r}") from exc


def parse_references(text):
    if isinstance(text, list) or text == "all":
        return text
    return [int(v) for v in str(text).split(",") if v.strip()]


_CONVERT = {
    "tau": float,
    "grid": parse_grid,
    "lambda_reg": lambda v: v if str(v) == "auto" else float(v),
    "references": parse_references,
    "noise_px": float,
    "seed": int,
    "threads": int,
    "output_dir": str,
    "time_all": lambda v: v if isinstance(v, bool) else str(v).strip().lower() in ("1", "true", "yes", "on"),
}


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, dashes equal underscores.

    Raises:
        InputError: unreadable file, bad line or unknown key.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise io.InputError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise io.InputError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONVERT:
            raise io.InputError(f"{path}:{n}: unknown key {key!r}")
        out[key] = value
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    """Config file values overridden by explicitly given flags."""
    values = read_config(args.config) if getattr(args, "config", None) else {}
    for key in RunConfig.keys():
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    try:
        return RunConfig(**{k: _CONVERT[k](v) for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        raise io.InputError(f"invalid configuration: {exc}") from exc


def _add_config_flags(p: argparse.ArgumentParser, run: bool) -> None:
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--out", "--output-dir", "--output_dir", dest="output_dir", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads, 0 = auto (env NRSFM_THREADS)")
    if run:
        p.add_argument("--tau", type=float, help="degeneracy threshold on sigma1/sigma3 (default 1.05)")
        p.add_argument("--grid", help="warp control grid, e.g. 8x8")
        p.add_argument("--lambda-reg", "--lambda_reg", dest="lambda_reg", help="warp bending weight or 'auto'")
        p.add_argument("--references", help="'all' or comma-separated reference image ids")
        p.add_argument(
            "--time-all", "--time_all", dest="time_all", action="store_const", const=True,
            help="include file I/O and warp fitting in the reported time",
        )
    else:
        p.add_argument("--noise-px", "--noise_px", dest="noise_px", type=float, help="pixel noise sigma")
        p.add_argument("--seed", type=int, help="noise seed")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nrsfm", description="Local non-rigid structure from motion.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic scene")
    p.add_argument("--surface", default="cylinder", choices=[k.value for k in SurfaceKind])
    p.add_argument("--deformation", default="isometric", choices=[d.value for d in Deformation])
    p.add_argument("--motion", default="default", choices=[m.value for m in Motion])
    p.add_argument("--frames", type=int, default=3)
    p.add_argument("--points", type=int, default=400)
    p.add_argument("--focal", type=float, default=500.0)
    _add_config_flags(p, run=False)

    p = sub.add_parser("reconstruct", help="normals and 3D points from correspondences")
    p.add_argument("input", nargs="?", default=".", help="directory with correspondences.csv and intrinsics.csv")
    p.add_argument("--correspondences", help="correspondence CSV (overrides the input directory)")
    p.add_argument("--intrinsics", help="intrinsics CSV (overrides the input directory)")
    _add_config_flags(p, run=True)

    p = sub.add_parser("eval", help="compare a reconstruction with ground truth")
    p.add_argument("pred", help="directory with normals.csv and points_<image>.ply")
    p.add_argument("gt", help="directory with gt_points.csv and gt_normals.csv")
    p.add_argument("--out", dest="output_dir", help="also write eval.json and eval_frames.csv here")

    p = sub.add_parser("decompose", help="candidate normals of one homography")
    p.add_argument("entries", nargs=9, type=float, metavar="h", help="row-major homography entries")
    p.add_argument("--point", nargs=2, type=float, default=(0.0, 0.0), metavar=("U", "V"),
                   help="reference-image point used for visibility and selection")
    p.add_argument("--tau", type=float, default=1.05)
    return parser


def cmd_synth(args) -> int:
    cfg = build_config(args)
    spec = SceneSpec(
        surface_kind=args.surface,
        deformation=args.deformation,
        n_points=args.points,
        n_frames=args.frames,
        focal=args.focal,
        motion=args.motion,
        noise_sigma_px=cfg.noise_px,
        rng_seed=cfg.seed,
    )
    gt = generate(spec)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_correspondences(out / CORRESPONDENCES, gt.image_ids, gt.point_ids, gt.observed_pixels)
    io.write_intrinsics(out / INTRINSICS, spec.intrinsics)
    io.write_vectors(out / GT_POINTS, io.GT_POINTS_HEADER, gt.image_ids, gt.point_ids, gt.positions)
    io.write_vectors(out / GT_NORMALS, io.GT_NORMALS_HEADER, gt.image_ids, gt.point_ids, gt.normals)
    io.write_json(
        out / SCENE,
        {
            "surface": spec.surface_kind.value,
            "deformation": spec.deformation.value,
            "motion": spec.motion.value,
            "n_frames": spec.n_frames,
            "n_points": spec.n_points,
            "focal": spec.focal,
            "image_size": list(spec.image_size),
            "noise_sigma_px": spec.noise_sigma_px,
            "rng_seed": spec.rng_seed,
            "frames": [dict(zip(("curvature", "scale", "stretch"), spec.frame_shape(f))) for f in range(spec.n_frames)],
        },
    )
    print(f"wrote {spec.n_frames} frames x {spec.n_points} points to {out}")
    return EXIT_OK


def _summary(rec: Reconstruction, cfg: RunConfig, io_time: float) -> dict:
    t = dict(rec.timings)
    t["io"] = io_time
    scope = ["normals", "surface"] + (["warp_fit", "io"] if cfg.time_all else [])
    t["reported"] = sum(t[k] for k in scope)
    field = rec.field
    return {
        "n_images": rec.corr.n_images,
        "n_points": rec.corr.n_points,
        "rejected_fraction": rec.rejected_fraction,
        "reconstructed_per_image": {str(i): int(field.reconstructed[m].sum()) for m, i in enumerate(field.image_ids)},
        "disconnected_images": [int(i) for i, s in rec.surfaces.items() if s.disconnected],
        "timing_scope": scope,
        "timings_s": t,
        "config": {
            "tau": cfg.tau,
            "grid": list(cfg.grid),
            "lambda_reg": cfg.lambda_reg,
            "references": cfg.references,
            "threads": cfg.threads,
        },
    }


def cmd_reconstruct(args) -> int:
    cfg = build_config(args)
    src = Path(args.input)
    t0 = time.perf_counter()
    corr = io.load_correspondences(
        args.correspondences or src / CORRESPONDENCES, args.intrinsics or src / INTRINSICS
    )
    if corr.n_images < 2:
        raise io.InputError(f"need at least 2 images, got {corr.n_images}")
    io_time = time.perf_counter() - t0
    rec = reconstruct(corr, cfg)
    t0 = time.perf_counter()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    observed = np.all(np.isfinite(corr.xy), axis=-1)
    io.write_normals(out / NORMALS, rec.field, observed)
    for im in corr.image_ids:
        s = rec.surfaces.get(im)
        pts, ids = (s.points, s.point_ids) if s is not None else (np.zeros((0, 3)), [])
        io.write_ply(out / ply_name(im), pts, ids)
    io_time += time.perf_counter() - t0
    summary = _summary(rec, cfg, io_time)
    io.write_json(out / SUMMARY, summary)
    print(
        f"reconstructed {corr.n_images} images x {corr.n_points} points, "
        f"rejected {summary['rejected_fraction']:.3f}, time {summary['timings_s']['reported']:.4f} s"
    )
    return EXIT_OK


def _by_point(d: dict, im: int, ids) -> np.ndarray:
    rows = d.get(im, {})
    return np.array([rows.get(int(p), [np.nan] * 3) for p in ids], dtype=float).reshape(-1, 3)


def cmd_eval(args) -> int:
    pred, gtd = Path(args.pred), Path(args.gt)
    gt_normals = io.read_vectors(gtd / GT_NORMALS, io.GT_NORMALS_HEADER)
    gt_points = io.read_vectors(gtd / GT_POINTS, io.GT_POINTS_HEADER)
    pred_normals = io.read_normals(pred / NORMALS)
    _, obs_rows = io.read_rows(pred / NORMALS, io.NORMALS_HEADER)
    rejected = sum(1 for r in obs_rows if r[6].strip()) / max(1, len(obs_rows))
    normals, points, gn, gp = {}, {}, {}, {}
    for im in sorted(gt_normals):
        ids = sorted(gt_normals[im])
        gn[im] = _by_point(gt_normals, im, ids)
        gp[im] = _by_point(gt_points, im, ids)
        normals[im] = _by_point(pred_normals, im, ids)
        ply = pred / ply_name(im)
        if ply.exists():
            pts, pids = io.read_ply(ply)
            cloud = {int(p): v for p, v in zip(pids, pts)}
            # only points whose depth came from a normal are scored
            have = {p for p in cloud if p in pred_normals.get(im, {})}
            if have:
                points[im] = np.array([cloud[p] if p in have else [np.nan] * 3 for p in ids], dtype=float)
    report = evaluate(normals, points, gn, gp, rejected_fraction=rejected)
    print(report.to_text())
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "eval.json", report.to_dict())
        rows = [[f.image_id, io.fmt(f.En), io.fmt(f.En_angular_deg), io.fmt(f.Ed_rmse), io.fmt(f.Ed_rel), f.n_normals, f.n_points]
                for f in report.per_frame]
        io.write_csv(out / "eval_frames.csv", ["image_id", "En", "En_angular_deg", "Ed_rmse", "Ed_rel", "n_normals", "n_points"], rows)
    return EXIT_OK


def cmd_decompose(args) -> int:
    H = np.array(args.entries, dtype=float).reshape(3, 3)
    if not np.all(np.isfinite(H)):
        raise io.InputError("homography entries must be finite")
    if abs(np.linalg.det(H)) <= 1e-14 * max(1.0, np.abs(H).max()) ** 3:
        raise io.InputError("homography is singular")
    x = np.asarray(args.point, dtype=float)
    h = normalize_homography(H, x)
    print(f"cond {h.cond:.12g}")
    if is_degenerate(h, DegeneracyGate(args.tau)):
        print(f"degenerate: cond <= tau = {args.tau}")
        return EXIT_OK
    S = build_s_matrix(h)
    cands = with_visibility(solve_normals(S), x)
    for name, n, vis, res in (("a", cands.n_a, cands.visible_a, cands.residuals[0]), ("b", cands.n_b, cands.visible_b, cands.residuals[1])):
        print(
            f"candidate {name}: {n[0]:+.12f} {n[1]:+.12f} {n[2]:+.12f}  visible {bool(vis)}  "
            f"residual {np.abs(res).max():.3e}"
        )
    try:
        n = select_normal(cands, x).to_array()
        print(f"selected: {n[0]:+.12f} {n[1]:+.12f} {n[2]:+.12f}")
    except NRSfMError as exc:
        print(f"selected: none ({exc})")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "reconstruct": cmd_reconstruct, "eval": cmd_eval, "decompose": cmd_decompose}


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (io.InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NRSfMError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
