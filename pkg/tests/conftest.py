"""Shared fixtures: planted plane-induced homographies and small scenes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from nrsfm.core import rotation


@dataclass
class Planted:
    """A plane ``n . X = d`` seen by a reference and a moved camera.

    ``G = scale * R + t n^T / d`` sends reference points of the plane to the
    other camera; ``H = inv(G)`` sends other-image points to the reference.
    """

    R: np.ndarray
    t: np.ndarray
    n: np.ndarray
    d: float
    scale: float
    x: np.ndarray
    x_bar: np.ndarray
    G: np.ndarray
    H: np.ndarray
    cond: float


def plant(R, t, n, d=1.0, scale=1.0, x=(0.0, 0.0)) -> Planted:
    R = np.asarray(R, dtype=float)
    t = np.asarray(t, dtype=float)
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    G = scale * R + np.outer(t, n) / d
    x = np.asarray(x, dtype=float)
    xh = np.r_[x, 1.0]
    X = xh * d / (n @ xh)
    Xo = G @ X
    H = np.linalg.inv(G)
    sv = np.linalg.svd(H, compute_uv=False)
    return Planted(R, t, n, d, scale, x, Xo[:2] / Xo[2], G, H, sv[0] / sv[2])


def random_planted(rng, scale=1.0, cond_range=(1.1, 5.0)) -> Planted:
    """Rejection-sample a planted pair with the plane in front of both cameras."""
    while True:
        axis = rng.normal(size=3)
        R = rotation(axis, rng.uniform(0.0, 0.6))
        t = rng.normal(size=3) * rng.uniform(0.05, 0.6)
        n = rng.normal(size=3)
        n[2] = abs(n[2]) + 0.3
        x = rng.uniform(-0.5, 0.5, size=2)
        d = rng.uniform(0.5, 3.0)
        n = n / np.linalg.norm(n)
        if n @ np.r_[x, 1.0] <= 0.05:
            continue
        p = plant(R, t, n, d, scale, x)
        X = np.r_[x, 1.0] * d / (n @ np.r_[x, 1.0])
        if (p.G @ X)[2] <= 0.05:
            continue
        if cond_range[0] <= p.cond <= cond_range[1]:
            return p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def planted_set():
    r = np.random.default_rng(2024)
    return [random_planted(r) for _ in range(1000)]
