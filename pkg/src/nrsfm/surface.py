"""Depth from normals: integrate the log inverse depth over a point graph.

For a point ``x`` with inverse depth ``beta`` the 3D point is
``(u, v, 1) / beta``. A normal ``n`` fixes the tangent plane, along which
``beta`` is proportional to ``n . (u, v, 1)``, so each graph edge gets a
measured difference of ``log beta``. Solving the weighted least-squares
problem over all edges bends a flat sheet into the surface, up to one scale
per connected component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve
from scipy.spatial import Delaunay, QhullError, cKDTree

from .core import ImagePoint, NRSfMError

KNN_NEIGHBORS = 6


@dataclass(frozen=True)
class CorrespondenceGraph:
    """Neighborhood graph over the points of one image.

    Attributes:
        point_ids: (N,) point identifiers.
        positions: (N, 2) retina coordinates.
        edges: (E, 2) node index pairs with ``edges[:, 0] < edges[:, 1]``.
        weights: (E,) inverse edge lengths.
        knn_fallback: True when triangulation failed and kNN edges are used.
    """

    point_ids: np.ndarray
    positions: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    knn_fallback: bool = False

    @property
    def n_nodes(self) -> int:
        return len(self.point_ids)

    def components(self, nodes: np.ndarray | None = None) -> tuple[int, np.ndarray]:
        """Connected components, optionally of the subgraph on ``nodes`` (bool mask).

        Labels of nodes outside the subgraph are -1.
        """
        keep = np.ones(self.n_nodes, dtype=bool) if nodes is None else np.asarray(nodes, dtype=bool)
        e = self.edges[keep[self.edges[:, 0]] & keep[self.edges[:, 1]]]
        idx = np.nonzero(keep)[0]
        local = -np.ones(self.n_nodes, dtype=int)
        local[idx] = np.arange(len(idx))
        adj = sp.coo_matrix((np.ones(len(e)), (local[e[:, 0]], local[e[:, 1]])), shape=(len(idx), len(idx)))
        n, lab = connected_components(adj, directed=False)
        labels = -np.ones(self.n_nodes, dtype=int)
        labels[idx] = lab
        return n, labels


@dataclass(frozen=True)
class ReconstructedSurface:
    """Per-point depth of one image.

    Attributes:
        point_ids: (N,) point identifiers, in graph order.
        beta: (N,) inverse depths, all positive.
        points: (N, 3) camera-frame points ``(u, v, 1) / beta``.
        reconstructed: (N,) True where a normal drove the depth; other points
            were filled in by harmonic interpolation.
        anchors: Node indices fixed to ``beta = 1``, one per component; the
            first is the scale anchor.
        disconnected: More than one component had to be anchored.
    """

    point_ids: np.ndarray
    beta: np.ndarray
    points: np.ndarray
    reconstructed: np.ndarray
    anchors: tuple[int, ...]
    disconnected: bool = False

    @property
    def scale_anchor(self) -> int:
        """Point id of the main anchor."""
        return int(self.point_ids[self.anchors[0]])


def _as_positions(points) -> np.ndarray:
    if len(points) and isinstance(points[0], ImagePoint):
        return np.array([[p.u, p.v] for p in points], dtype=float)
    return np.asarray(points, dtype=float).reshape(-1, 2)


def _knn_edges(x: np.ndarray, k: int) -> np.ndarray:
    k = min(k, len(x) - 1)
    _, nb = cKDTree(x).query(x, k=k + 1)
    i = np.repeat(np.arange(len(x)), k)
    j = nb[:, 1:].reshape(-1)
    return np.stack([np.minimum(i, j), np.maximum(i, j)], axis=1)


def build_graph(points, point_ids=None, k: int = KNN_NEIGHBORS) -> CorrespondenceGraph:
    """Delaunay graph over image points, kNN when triangulation degenerates.

    Args:
        points: (N, 2) array or list of :class:`ImagePoint`.
        point_ids: Identifiers; ``0..N-1`` by default.
        k: Neighbors per point for the fallback.

    Raises:
        NRSfMError: fewer than 2 points, or coincident points.
    """
    x = _as_positions(points)
    n = len(x)
    if n < 2:
        raise NRSfMError(f"need at least 2 points for a graph, got {n}")
    ids = np.arange(n) if point_ids is None else np.asarray(point_ids)
    if len(ids) != n:
        raise ValueError("point_ids must match points")
    if not np.all(np.isfinite(x)):
        raise ValueError("points must be finite")
    knn = True
    edges = None
    if n >= 3:
        try:
            tri = Delaunay(x)
            s = tri.simplices
            e = np.concatenate([s[:, [0, 1]], s[:, [1, 2]], s[:, [0, 2]]])
            edges = np.sort(e, axis=1)
            knn = len(tri.coplanar) > 0
        except QhullError:
            pass
    if knn:
        edges = _knn_edges(x, k)
    edges = np.unique(edges, axis=0)
    length = np.linalg.norm(x[edges[:, 1]] - x[edges[:, 0]], axis=1)
    if np.any(length <= 0):
        raise NRSfMError("coincident points in graph")
    return CorrespondenceGraph(ids, x, edges, 1.0 / length, knn)


def _rays(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x, np.ones((len(x), 1))], axis=1)


def edge_log_ratios(normals: np.ndarray, positions: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Measured ``log beta_q - log beta_p`` for each edge ``(p, q)``.

    Averages the exact tangent-plane ratios of both endpoints. When a tangent
    plane is seen edge-on across the edge, falls back to the midpoint rule on
    the depth derivatives ``n[:2] / (n . x_hat)``.
    """
    r = _rays(positions)
    p, q = edges[:, 0], edges[:, 1]
    n_p, n_q = normals[p], normals[q]
    a = [np.sum(n_p * r[q], 1), np.sum(n_p * r[p], 1), np.sum(n_q * r[q], 1), np.sum(n_q * r[p], 1)]
    ok = (a[0] * a[1] > 0) & (a[2] * a[3] > 0)
    out = np.empty(len(edges))
    with np.errstate(divide="ignore", invalid="ignore"):
        out[ok] = 0.5 * (np.log(a[0][ok] / a[1][ok]) + np.log(a[2][ok] / a[3][ok]))
        k_p = n_p[:, :2] / a[1][:, None]
        k_q = n_q[:, :2] / a[2][:, None]
    dx = positions[q] - positions[p]
    out[~ok] = np.sum(0.5 * (k_p[~ok] + k_q[~ok]) * dx[~ok], axis=1)
    if not np.all(np.isfinite(out)):
        raise NRSfMError("normal is parallel to its viewing ray")
    return out


def _weighted_laplacian(edges, w, n):
    i, j = edges[:, 0], edges[:, 1]
    W = sp.coo_matrix((np.r_[w, w], (np.r_[i, j], np.r_[j, i])), shape=(n, n)).tocsr()
    return sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W


def bend_surface(normals, graph: CorrespondenceGraph, support=None) -> ReconstructedSurface:
    """Inverse depths of one image from its normal field.

    Args:
        normals: (N, 3) normals in graph order, NaN rows where unreconstructed.
        graph: Graph over the same points.
        support: (N,) estimate counts used to pick the anchor (largest wins,
            ties to the lowest index); all ones by default.

    Raises:
        NRSfMError: no point has a normal.
    """
    normals = np.asarray(normals, dtype=float)
    N = graph.n_nodes
    if normals.shape != (N, 3):
        raise ValueError(f"normals must be ({N}, 3), got {normals.shape}")
    rec = np.all(np.isfinite(normals), axis=1)
    if not rec.any():
        raise NRSfMError("no reconstructed points to bend")
    sup = np.ones(N) if support is None else np.asarray(support, dtype=float)
    z = np.full(N, np.nan)

    # data edges: both ends carry a normal
    data = rec[graph.edges[:, 0]] & rec[graph.edges[:, 1]]
    e, w = graph.edges[data], graph.weights[data]
    d = edge_log_ratios(np.where(rec[:, None], normals, 0.0), graph.positions, e)
    n_comp, labels = graph.components(rec)
    anchors = []
    for c in range(n_comp):
        members = np.nonzero(labels == c)[0]
        anchors.append(int(members[np.argmax(sup[members])]))
    order = np.argsort([-sup[a] for a in anchors], kind="stable")
    anchors = [anchors[o] for o in order]

    L = _weighted_laplacian(e, w, N)
    b = np.zeros(N)
    np.add.at(b, e[:, 1], w * d)
    np.add.at(b, e[:, 0], -w * d)
    free = rec.copy()
    free[anchors] = False
    z[anchors] = 0.0
    if free.any():
        z[free] = spsolve(L[free][:, free].tocsc(), b[free])

    # harmonic fill-in of points without a normal
    hole = ~rec
    if hole.any():
        touch = hole[graph.edges[:, 0]] | hole[graph.edges[:, 1]]
        Lh = _weighted_laplacian(graph.edges[touch], graph.weights[touch], N).tocsr()
        n_h, lab_h = graph.components()
        reachable = np.isin(lab_h, np.unique(lab_h[rec]))
        solve = hole & reachable
        if solve.any():
            rhs = -Lh[solve][:, rec] @ z[rec]
            z[solve] = spsolve(Lh[solve][:, solve].tocsc(), rhs)
        z[hole & ~reachable] = 0.0

    beta = np.exp(z)
    pts = _rays(graph.positions) / beta[:, None]
    return ReconstructedSurface(graph.point_ids.copy(), beta, pts, rec, tuple(anchors), n_comp > 1)


def plane_normals_and_beta(n, d: float, positions) -> tuple[np.ndarray, np.ndarray]:
    """Normals and inverse depths of the plane ``n . X = d`` seen at ``positions``."""
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    beta = _rays(np.asarray(positions, dtype=float)) @ n / d
    if np.any(beta <= 0):
        raise NRSfMError("plane is not in front of the camera at every point")
    return np.tile(n, (len(beta), 1)), beta
