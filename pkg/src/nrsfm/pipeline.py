"""End-to-end reconstruction: warps, pairwise normals, aggregation, bending."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields

import numpy as np

from .core import NRSfMError
from .homography import DEFAULT_TAU, DegeneracyGate
from .multiview import NormalField, PairBatch, aggregate_batches, default_threads, fit_pair_warps, run_pairwise_batches
from .surface import ReconstructedSurface, bend_surface, build_graph
from .warp import AUTO, DEFAULT_GRID, Correspondences


@dataclass
class RunConfig:
    """Knobs of a reconstruction run and of scene synthesis.

    Attributes:
        tau: Degeneracy threshold on ``sigma1 / sigma3``.
        grid: Warp control points per axis.
        lambda_reg: Warp bending weight, or ``"auto"`` for GCV.
        references: ``"all"`` or a list of reference image ids.
        noise_px: Pixel noise for ``synth``.
        seed: Random seed for ``synth``.
        threads: Worker threads, 0 for automatic.
        output_dir: Where commands write their files.
        time_all: Include warp fitting in the reported timing.
    """

    tau: float = DEFAULT_TAU
    grid: tuple[int, int] = DEFAULT_GRID
    lambda_reg: float | str = AUTO
    references: str | list[int] = "all"
    noise_px: float = 0.0
    seed: int = 0
    threads: int = 0
    output_dir: str = "."
    time_all: bool = False

    def __post_init__(self):
        if not self.tau >= 1.0:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        self.grid = tuple(int(g) for g in self.grid)
        if len(self.grid) != 2 or min(self.grid) < 4:
            raise ValueError(f"grid must be at least 4x4, got {self.grid}")
        if isinstance(self.lambda_reg, str) and self.lambda_reg != AUTO:
            self.lambda_reg = float(self.lambda_reg)
        if not isinstance(self.lambda_reg, str) and not self.lambda_reg >= 0:
            raise ValueError("lambda_reg must be non-negative or 'auto'")
        if self.references != "all":
            self.references = [int(r) for r in self.references]
            if not self.references:
                raise ValueError("references must not be empty")
        if self.noise_px < 0:
            raise ValueError("noise_px must be non-negative")
        if self.threads < 0:
            raise ValueError("threads must be non-negative")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @property
    def worker_threads(self) -> int:
        return self.threads if self.threads > 0 else default_threads()


@dataclass
class Reconstruction:
    """Output of :func:`reconstruct`.

    ``surfaces`` maps image ids to their bent surface; images with no
    reconstructed point are absent. ``timings`` are seconds.
    """

    corr: Correspondences
    field: NormalField
    surfaces: dict[int, ReconstructedSurface]
    batches: list[PairBatch]
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def rejected_fraction(self) -> float:
        """Share of observed (image, point) cells that received no normal."""
        obs = np.all(np.isfinite(self.corr.xy), axis=-1)
        total = int(obs.sum())
        return float((obs & ~self.field.reconstructed).sum() / total) if total else 1.0

    def points(self, image_id: int) -> np.ndarray:
        """(N, 3) points aligned with ``corr.point_ids``; NaN where absent."""
        out = np.full((self.corr.n_points, 3), np.nan)
        s = self.surfaces.get(image_id)
        if s is not None:
            pos = {int(p): i for i, p in enumerate(self.corr.point_ids)}
            out[[pos[int(p)] for p in s.point_ids]] = s.points
        return out


def reconstruct(corr: Correspondences, config: RunConfig | None = None) -> Reconstruction:
    """Run the full pipeline on retina-normalized tracks.

    Raises:
        NRSfMError: fewer than two images.
        ValueError: unknown reference ids.
    """
    cfg = config or RunConfig()
    if corr.n_images < 2:
        raise NRSfMError(f"need at least 2 images, got {corr.n_images}")
    if cfg.references == "all":
        refs = list(range(corr.n_images))
    else:
        missing = [r for r in cfg.references if r not in corr.image_ids]
        if missing:
            raise ValueError(f"unknown reference images {missing}")
        refs = [corr.image_ids.index(r) for r in cfg.references]
    threads = cfg.worker_threads
    timings = {}

    t0 = time.perf_counter()
    warps = fit_pair_warps(corr, refs, cfg.grid, cfg.lambda_reg, threads, skip_failures=True)
    timings["warp_fit"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    batches = run_pairwise_batches(corr, warps, DegeneracyGate(cfg.tau), refs, threads)
    nf = aggregate_batches(corr, batches)
    timings["normals"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    surfaces = {}
    for m, im in enumerate(corr.image_ids):
        obs = corr.observed(m)
        if obs.sum() < 2 or not nf.reconstructed[m, obs].any():
            continue
        graph = build_graph(corr.xy[m, obs], corr.point_ids[obs])
        surfaces[im] = bend_surface(nf.normals[m, obs], graph, nf.support[m, obs])
    timings["surface"] = time.perf_counter() - t0
    return Reconstruction(corr, nf, surfaces, batches, timings)
