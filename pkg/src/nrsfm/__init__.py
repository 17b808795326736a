"""Local non-rigid structure from motion from warp derivatives.

Each surface normal is solved in closed form from the local homography between
two images, aggregated over image pairs, and integrated into depth.
"""

from .core import (
    DegenerateError,
    DepthJet,
    ImagePoint,
    MetricTensor2,
    NoRealSolutionError,
    NotVisibleError,
    NRSfMError,
    PointRejectedError,
    UnitNormal,
)
from .homography import DegeneracyGate, LocalHomography, homography_from_jet, is_degenerate, normalize_homography
from .metrics import EvalReport, depth_error, normal_error
from .multiview import NormalField, PairEstimate, aggregate, run_pairwise
from .normals import Rejection, build_s_matrix, estimate_normals, select_normal, solve_normals, transfer_normal
from .pipeline import Reconstruction, RunConfig, reconstruct
from .surface import CorrespondenceGraph, ReconstructedSurface, bend_surface, build_graph
from .synthetic import GroundTruth, SceneSpec, generate, planted_pair_homography
from .warp import Correspondences, WarpModel, eval_jet, fit_warp

__version__ = "0.1.0"

__all__ = [
    "CorrespondenceGraph",
    "Correspondences",
    "DegeneracyGate",
    "DegenerateError",
    "DepthJet",
    "EvalReport",
    "GroundTruth",
    "ImagePoint",
    "LocalHomography",
    "MetricTensor2",
    "NRSfMError",
    "NoRealSolutionError",
    "NormalField",
    "NotVisibleError",
    "PairEstimate",
    "PointRejectedError",
    "Reconstruction",
    "ReconstructedSurface",
    "Rejection",
    "RunConfig",
    "SceneSpec",
    "UnitNormal",
    "WarpModel",
    "aggregate",
    "bend_surface",
    "build_graph",
    "build_s_matrix",
    "depth_error",
    "estimate_normals",
    "eval_jet",
    "fit_warp",
    "generate",
    "homography_from_jet",
    "is_degenerate",
    "normal_error",
    "normalize_homography",
    "planted_pair_homography",
    "reconstruct",
    "run_pairwise",
    "select_normal",
    "solve_normals",
    "transfer_normal",
]
