"""Suppressing adversarial strength that would not survive a physical round trip.

Two kinds of digital-only strength are removed during the attack: a
favourable pose (handled by searching, before every step, for the rigid
transform that most helps the true class and attacking through it) and a
favourable point sampling (handled by upsampling with neighbour midpoints and
farthest-point downsampling before every step).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from . import classifier as clf
from .attack import (AttackConfig, AttackObjective, AttackResult, RegionSearchConfig,
                     _finish, binary_search, is_success, prepare)
from .classifier import LossSpec
from .cloud import PointCloud, fps
from .metrics import all_metrics

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------- rotations


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def axis_angle_quat(omega: np.ndarray) -> np.ndarray:
    """Unit quaternion of the rotation by |omega| radians about omega."""
    angle = np.linalg.norm(omega)
    if angle == 0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = angle / 2
    return np.concatenate([[np.cos(half)], np.sin(half) * omega / angle])


@dataclass(frozen=True)
class RigidTransform:
    """``p -> scale * (R p) + translation`` with R given as a unit quaternion (w, x, y, z)."""

    scale: float = 1.0
    rotation: Tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64)
        n = np.linalg.norm(q)
        if n == 0 or self.scale <= 0:
            raise ValueError("need a non-zero quaternion and a positive scale")
        object.__setattr__(self, "rotation", tuple(float(v) for v in q / n))
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(np.asarray(self.rotation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (points @ self.matrix.T) + np.asarray(self.translation)

    def inverse(self) -> "RigidTransform":
        w, x, y, z = self.rotation
        r_t = self.matrix.T
        return RigidTransform(1.0 / self.scale, (w, -x, -y, -z),
                              tuple(-(r_t @ np.asarray(self.translation)) / self.scale))

    def pull_gradient(self, grad: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the untransformed points given one w.r.t. transformed points."""
        return self.scale * grad @ self.matrix


IDENTITY = RigidTransform()


def apply_rigid(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    return cloud.with_points(t.apply(cloud.points))


@dataclass
class HardeningConfig:
    maxot_steps: int = 3
    maxot_lr: float = 0.05
    scale_lo: float = 0.8
    scale_hi: float = 1.2
    translation_bound: float = 0.2
    upsample_factor: float = 2.0
    noise: float = 0.01
    eval_rotation_deg: float = 10.0

    def validate(self):
        if not 0 < self.scale_lo <= 1.0 <= self.scale_hi:
            raise ValueError("scale bounds must bracket 1")
        if self.translation_bound < 0 or self.noise < 0 or self.maxot_steps < 0:
            raise ValueError("bounds, noise and step count must be non-negative")
        if self.upsample_factor < 1:
            raise ValueError("upsample_factor must be >= 1")
        return self


def _radius(points):
    return float(np.linalg.norm(points - points.mean(axis=0), axis=1).max())


def _project(scale, translation, cfg, radius):
    scale = float(np.clip(scale, cfg.scale_lo, cfg.scale_hi))
    bound = cfg.translation_bound * radius
    norm = np.linalg.norm(translation)
    if norm > bound:
        translation = translation * (bound / norm) if norm > 0 else translation
    return scale, translation


def _transform_objective(model, points, t, label, spec):
    moved = t.apply(points)
    rep = clf.input_gradient(model, moved, label, spec)
    rotated = points @ t.matrix.T
    g = rep.grad
    grads = np.concatenate([
        t.scale * np.cross(rotated, g).sum(axis=0),  # small rotation applied on the left
        [np.einsum("ij,ij->", rotated, g)],
        g.sum(axis=0),
    ])
    return rep.loss, grads


def maxot_search(model, adv, cfg: HardeningConfig, true_label: int, kappa: float = 30.0,
                 target: Optional[int] = None, trace: Optional[list] = None) -> RigidTransform:
    """Ascend the margin loss over rigid transforms, starting from the identity.

    A step is kept only if it raises the objective; otherwise the step size
    is halved.  The result never scores below the identity.
    """
    points = adv.points if isinstance(adv, PointCloud) else np.asarray(adv, dtype=np.float64)
    spec = LossSpec("cw", kappa, target)
    radius = _radius(points)
    best = IDENTITY
    value, grads = _transform_objective(model, points, best, true_label, spec)
    if trace is not None:
        trace.append(value)
    lr = cfg.maxot_lr
    for _ in range(cfg.maxot_steps):
        gn = np.linalg.norm(grads)
        if gn == 0:
            break
        step = lr * grads / gn
        q = quat_mul(axis_angle_quat(step[:3]), np.asarray(best.rotation))
        scale, trans = _project(best.scale + step[3], np.asarray(best.translation) + step[4:], cfg, radius)
        cand = RigidTransform(scale, tuple(q), tuple(trans))
        c_value, c_grads = _transform_objective(model, points, cand, true_label, spec)
        if c_value > value:
            best, value, grads = cand, c_value, c_grads
            if trace is not None:
                trace.append(value)
        else:
            lr /= 2
    return best


def random_transform(cfg: HardeningConfig, rng: np.random.Generator, radius: float = 1.0) -> RigidTransform:
    """Uniform scale, random-axis rotation up to ``eval_rotation_deg`` and a bounded shift."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.deg2rad(cfg.eval_rotation_deg) * rng.random()
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    shift = direction * cfg.translation_bound * radius * rng.random() ** (1 / 3)
    return RigidTransform(rng.uniform(cfg.scale_lo, cfg.scale_hi), tuple(axis_angle_quat(axis * angle)),
                          tuple(shift))


# ---------------------------------------------------------------- resampling


def _drop_self(nbrs, k):
    if np.array_equal(nbrs[:, 0], np.arange(len(nbrs))):
        return nbrs[:, 1:k + 1]
    # duplicated points may push a row's own index out of column 0
    out = np.empty((len(nbrs), k), dtype=np.intp)
    for j, row in enumerate(nbrs):
        row = row[row != j]
        out[j] = row[:k]
    return out


def upsample_pairs(points: np.ndarray, factor: float, rng: np.random.Generator):
    """Index pairs (a, b) of the upsampled cloud: row r is the midpoint of points a[r], b[r].

    Original points come first as (j, j).  Midpoints join a point and a random
    one of its 3 nearest neighbours, sweeping the points in random order
    until ``factor * m`` rows exist.
    """
    m = len(points)
    target = int(round(factor * m))
    a = [np.arange(m)]
    b = [np.arange(m)]
    if target > m:
        kk = min(3, m - 1)
        _, nbrs = cKDTree(points).query(points, kk + 1)
        nbrs = _drop_self(nbrs, kk)
        need = target - m
        while need > 0:
            order = rng.permutation(m)[:need]
            pick = nbrs[order, rng.integers(nbrs.shape[1], size=len(order))]
            a.append(order)
            b.append(pick)
            need -= len(order)
    return np.concatenate(a), np.concatenate(b)


def resample_plan(points: np.ndarray, factor: float, seed: int, count: Optional[int] = None):
    """Pairs describing ``benign_resample`` as midpoints of input points."""
    m = len(points)
    count = m if count is None else count
    rng = np.random.default_rng(seed)
    a, b = upsample_pairs(points, factor, rng)
    up = 0.5 * (points[a] + points[b])
    keep = fps(up, count, int(rng.integers(len(up))))
    return a[keep], b[keep]


def benign_resample(cloud: PointCloud, factor: float = 2.0, seed: int = 0) -> PointCloud:
    """Upsample with neighbour midpoints, then farthest-point sample back to ``m`` points."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if cloud.m < 4:
        logger.warning("benign_resample needs at least 4 points; returning input unchanged")
        return cloud
    a, b = resample_plan(cloud.points, factor, seed)
    return PointCloud(0.5 * (cloud.points[a] + cloud.points[b]), cloud.label)


def simulate_rescan(cloud: PointCloud, cfg: HardeningConfig = HardeningConfig(), seed: int = 0,
                    factor: float = 2.0) -> PointCloud:
    """Stand-in for print-and-scan: midpoint upsampling, Gaussian jitter, FPS back to ``m``."""
    if cloud.m < 4:
        raise ValueError("simulate_rescan needs at least 4 points")
    rng = np.random.default_rng(seed)
    a, b = upsample_pairs(cloud.points, factor, rng)
    up = 0.5 * (cloud.points[a] + cloud.points[b])
    if cfg.noise > 0:
        up = up + cfg.noise * _radius(cloud.points) * rng.normal(size=up.shape)
    keep = fps(up, cloud.m, int(rng.integers(len(up))))
    return PointCloud(up[keep], cloud.label)


# ------------------------------------------------------------ hardened attack


class _HardenedBranch:
    """Classifier and Chamfer terms of the objective seen through resampling and MaxOT."""

    def __init__(self, model, label, acfg: AttackConfig, hcfg: HardeningConfig, seed, hook=None):
        self.model, self.label, self.acfg, self.hcfg = model, label, acfg, hcfg
        self.rng = np.random.default_rng(seed)
        self.transform = IDENTITY
        self.hook = hook

    def classify(self, adv):
        a, b = resample_plan(adv, self.hcfg.upsample_factor, int(self.rng.integers(2**31)))
        resampled = 0.5 * (adv[a] + adv[b])
        if self.hcfg.maxot_steps > 0:
            self.transform = maxot_search(self.model, resampled, self.hcfg, self.label,
                                          self.acfg.kappa, self.acfg.target)
        moved = self.transform.apply(resampled)
        rep = clf.input_gradient(self.model, moved, self.label, self.acfg.loss_spec)
        g_res = self.transform.pull_gradient(rep.grad)
        grad = np.zeros_like(adv)
        half = 0.5 * g_res
        for k in range(3):
            grad[:, k] += np.bincount(a, half[:, k], minlength=len(adv))
            grad[:, k] += np.bincount(b, half[:, k], minlength=len(adv))
        return rep.loss, rep.logits, grad

    def chamfer_pair(self, clean, adv):
        t = self.transform
        clean_t, adv_t = t.apply(clean), t.apply(adv)
        if self.hook is not None:
            self.hook(t, clean_t, adv_t)
        return clean_t, adv_t, t.pull_gradient


def hardened_attack(model, cloud: PointCloud, acfg: AttackConfig = AttackConfig(),
                    rcfg: RegionSearchConfig = RegionSearchConfig(),
                    hcfg: HardeningConfig = HardeningConfig(), label: Optional[int] = None,
                    hook: Optional[Callable] = None, prepared=None) -> AttackResult:
    """Deformation attack whose every step first resamples and applies the MaxOT transform.

    ``hook(transform, clean_t, adv_t)`` is called with the transformed clouds
    entering the Chamfer term at every step.
    """
    acfg.validate()
    hcfg.validate()
    label = cloud.label if label is None else label
    if is_success(clf.logits(model, cloud), label, acfg.target):
        return AttackResult(cloud, True, None, 0, [], all_metrics(cloud, cloud, rcfg.k), label,
                            clf.predict(model, cloud), trivial=True, method="hit_adv_hardened")
    prep = prepared or prepare(model, cloud, acfg, rcfg)

    def make_objective(lam):
        obj = AttackObjective(model, cloud.points, prep.centers, prep.center_cstd, label, acfg, lam)
        branch = _HardenedBranch(model, label, acfg, hcfg, [acfg.seed, int(lam * 1e6)], hook)
        obj.classify = branch.classify
        obj.chamfer_pair = branch.chamfer_pair
        return obj

    best, trace, iters = binary_search(make_objective, acfg, label)
    return _finish(model, cloud, label, best, trace, iters, prep, rcfg, "hit_adv_hardened")
