"""Imperceptibility metrics shared by the attack and evaluation code."""

from __future__ import annotations

import logging

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, curvature_std_vector, knn_indices

logger = logging.getLogger(__name__)


def _pts(c):
    return c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=np.float64)


def chamfer_distance(clean, adv) -> float:
    """Two-sided mean of squared nearest-neighbour distances."""
    a, b = _pts(clean), _pts(adv)
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float(np.mean(d_ab ** 2) + np.mean(d_ba ** 2))


def csd_metric(clean, adv, k: int = 10) -> float:
    """l2 distance between the per-point curvature-std vectors of two clouds.

    Points correspond by index.  When the counts differ each adversarial
    point is matched to its nearest clean point instead.
    """
    clean_c = clean if isinstance(clean, PointCloud) else PointCloud(clean)
    adv_c = adv if isinstance(adv, PointCloud) else PointCloud(adv)
    s_clean = curvature_std_vector(clean_c, k)
    s_adv = curvature_std_vector(adv_c, k)
    if clean_c.m != adv_c.m:
        logger.warning("CSD on clouds of %d and %d points; matching by nearest neighbour",
                       clean_c.m, adv_c.m)
        _, idx = cKDTree(clean_c.points).query(adv_c.points)
        s_clean = s_clean[idx]
    return float(np.linalg.norm(s_clean - s_adv))


def knn_dist_metric(adv, k: int = 10) -> float:
    """Mean over points of the mean distance to their k nearest neighbours."""
    pts = _pts(adv)
    if pts.shape[0] <= k:
        raise ValueError(f"need more than k={k} points, got {pts.shape[0]}")
    nbrs = knn_indices(pts, pts, k, exclude_self=True)
    return float(np.linalg.norm(pts[nbrs] - pts[:, None, :], axis=2).mean())


def all_metrics(clean, adv, k: int = 10) -> dict:
    return {
        "csd": csd_metric(clean, adv, k),
        "chamfer": chamfer_distance(clean, adv),
        "knn_dist": knn_dist_metric(adv, k),
    }
