"""Procedural shape families standing in for a CAD benchmark.

Each family is sampled uniformly by surface area.  Smooth families (sphere,
cylinder, torus) sit next to families with creases and spikes (star,
composite), so curvature statistics vary across the corpus.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .classifier import Dataset, normalize_cloud
from .cloud import PointCloud

FAMILIES = ("sphere", "cube", "cylinder", "cone", "torus", "pyramid", "star", "composite")


@dataclass(frozen=True)
class ShapeSpec:
    family: str
    m: int = 1024
    jitter: float = 0.0
    seed: int = 0
    variation: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown shape family {self.family!r}; expected one of {FAMILIES}")
        if self.m < 64:
            raise ValueError("m must be at least 64")
        if self.jitter < 0 or self.variation < 0:
            raise ValueError("jitter and variation must be non-negative")


# ------------------------------------------------------------- surface samplers


def _sample_triangles(tris, m, rng):
    """Area-weighted uniform samples from an (n, 3, 3) triangle array."""
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    pick = rng.choice(len(tris), size=m, p=area / area.sum())
    u, v = rng.random(m), rng.random(m)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    return a[pick] + u[:, None] * (b - a)[pick] + v[:, None] * (c - a)[pick]


def _quad(p0, p1, p2, p3):
    return [(p0, p1, p2), (p0, p2, p3)]


def _box_triangles(sx, sy, sz):
    x, y, z = sx / 2, sy / 2, sz / 2
    v = np.array([[i * x, j * y, k * z] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)])
    faces = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for f in faces:
        tris += _quad(*(v[i] for i in f))
    return np.array(tris)


def _sphere(m, rng, radius=1.0, symmetric=True):
    if symmetric and m % 2 == 0:
        half = rng.normal(size=(m // 2, 3))
        half /= np.linalg.norm(half, axis=1, keepdims=True)
        return radius * np.concatenate([half, -half])
    d = rng.normal(size=(m, 3))
    return radius * d / np.linalg.norm(d, axis=1, keepdims=True)


def _cylinder(m, rng, r, h):
    side, cap = 2 * np.pi * r * h, np.pi * r * r
    kind = rng.choice(3, size=m, p=np.array([side, cap, cap]) / (side + 2 * cap))
    theta = rng.uniform(0, 2 * np.pi, m)
    rad = np.where(kind == 0, r, r * np.sqrt(rng.random(m)))
    z = np.where(kind == 0, rng.uniform(-h / 2, h / 2, m), np.where(kind == 1, -h / 2, h / 2))
    return np.stack([rad * np.cos(theta), rad * np.sin(theta), z], axis=1)


def _cone(m, rng, r, h):
    slant = np.hypot(r, h)
    lateral, base = np.pi * r * slant, np.pi * r * r
    on_side = rng.random(m) < lateral / (lateral + base)
    theta = rng.uniform(0, 2 * np.pi, m)
    frac = np.sqrt(rng.random(m))
    rad = r * frac
    z = np.where(on_side, h / 2 - h * frac, -h / 2)
    return np.stack([rad * np.cos(theta), rad * np.sin(theta), z], axis=1)


def _torus(m, rng, big, small):
    out = np.empty((0, 2))
    while len(out) < m:
        n = 2 * m
        phi = rng.uniform(0, 2 * np.pi, n)
        keep = rng.random(n) < (big + small * np.cos(phi)) / (big + small)
        theta = rng.uniform(0, 2 * np.pi, n)
        out = np.concatenate([out, np.stack([theta[keep], phi[keep]], axis=1)])
    theta, phi = out[:m, 0], out[:m, 1]
    ring = big + small * np.cos(phi)
    return np.stack([ring * np.cos(theta), ring * np.sin(theta), small * np.sin(phi)], axis=1)


def _pyramid_triangles(base, height):
    b = base / 2
    v = np.array([[-b, -b, -height / 2], [b, -b, -height / 2], [b, b, -height / 2], [-b, b, -height / 2]])
    apex = np.array([0.0, 0.0, height / 2])
    tris = _quad(v[0], v[3], v[2], v[1])
    tris += [(v[i], v[(i + 1) % 4], apex) for i in range(4)]
    return np.array(tris)


def _icosahedron():
    t = (1 + np.sqrt(5)) / 2
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0], [0, -1, t], [0, 1, t],
                  [0, -1, -t], [0, 1, -t], [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], float)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    return v, f


def _star_triangles(spike):
    """Icosahedron with a pyramidal spike raised on every face."""
    v, faces = _icosahedron()
    tris = []
    for f in faces:
        a, b, c = v[list(f)]
        centre = (a + b + c) / 3
        tip = centre / np.linalg.norm(centre) * (1 + spike)
        tris += [(a, b, tip), (b, c, tip), (c, a, tip)]
    return np.array(tris)


def _composite(m, rng, var):
    """Lamp-like assembly: flat box base, cylindrical stem, spherical head."""
    base = _box_triangles(1.4 + 0.3 * var * rng.uniform(-1, 1), 1.4, 0.25)
    stem_r, stem_h = 0.15, 1.2 + 0.3 * var * rng.uniform(-1, 1)
    head_r = 0.45 + 0.1 * var * rng.uniform(-1, 1)
    b_area = sum(0.5 * np.linalg.norm(np.cross(t[1] - t[0], t[2] - t[0])) for t in base)
    s_area = 2 * np.pi * stem_r * stem_h
    h_area = 4 * np.pi * head_r ** 2
    counts = rng.multinomial(m, np.array([b_area, s_area, h_area]) / (b_area + s_area + h_area))
    base_pts = _sample_triangles(base, counts[0], rng) + [0, 0, -0.125]
    stem = _cylinder(counts[1], rng, stem_r, stem_h) + [0, 0, stem_h / 2]
    head = _sphere(counts[2], rng, head_r, symmetric=False) + [0, 0, stem_h + head_r * 0.8]
    return np.concatenate([base_pts, stem, head])


def _rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def sample_shape(spec: ShapeSpec, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Raw (unnormalised, unjittered) surface samples for one instance of a family."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    m, var = spec.m, spec.variation

    def vary(lo, hi):
        mid = (lo + hi) / 2
        return mid + var * (hi - mid) * rng.uniform(-1, 1)

    fam = spec.family
    if fam == "sphere":
        return _sphere(m, rng)
    if fam == "cube":
        pts = _sample_triangles(_box_triangles(vary(0.8, 1.2), vary(0.8, 1.2), vary(0.8, 1.2)), m, rng)
    elif fam == "cylinder":
        pts = _cylinder(m, rng, vary(0.4, 0.6), vary(1.6, 2.2))
    elif fam == "cone":
        pts = _cone(m, rng, vary(0.6, 0.9), vary(1.6, 2.2))
    elif fam == "torus":
        pts = _torus(m, rng, 1.0, vary(0.25, 0.4))
    elif fam == "pyramid":
        pts = _sample_triangles(_pyramid_triangles(vary(1.6, 2.0), vary(1.2, 1.8)), m, rng)
    elif fam == "star":
        pts = _sample_triangles(_star_triangles(vary(0.5, 0.9)), m, rng)
    else:
        pts = _composite(m, rng, var)
    return pts @ _rot_z(var * rng.uniform(-np.pi / 12, np.pi / 12)).T


def make_cloud(spec: ShapeSpec, label: Optional[int] = None,
               rng: Optional[np.random.Generator] = None) -> PointCloud:
    """One normalised, jittered instance of ``spec.family``."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    pts = sample_shape(spec, rng)
    if spec.jitter > 0:
        pts = pts + spec.jitter * rng.normal(size=pts.shape)
    pts = pts[rng.permutation(len(pts))] if spec.family != "sphere" else pts
    return normalize_cloud(PointCloud(pts, label))


def gen_dataset(spec, per_class: int, seed: int = 0, families: Sequence[str] = FAMILIES,
                split: str = "train") -> Dataset:
    """``per_class`` instances of each family, labelled by position in ``families``.

    ``spec`` is either one :class:`ShapeSpec` used as a template for every
    family (its ``family`` field is ignored) or a mapping family -> ShapeSpec.
    """
    for fam in families:
        if fam not in FAMILIES:
            raise ValueError(f"unknown shape family {fam!r}")
    rng = np.random.default_rng(seed)
    clouds = []
    for label, fam in enumerate(families):
        if isinstance(spec, ShapeSpec):
            fs = ShapeSpec(fam, spec.m, spec.jitter, spec.seed, spec.variation)
        else:
            fs = spec[fam]
        for _ in range(per_class):
            clouds.append(make_cloud(fs, label, np.random.default_rng(rng.integers(2**63))))
    return Dataset(clouds, list(families), split)


def split_dataset(spec, train_per_class: int, test_per_class: int, seed: int = 0,
                  families: Sequence[str] = FAMILIES):
    """Independent train and test draws of the same families."""
    rng = np.random.default_rng(seed)
    s_train, s_test = (int(s) for s in rng.integers(2**31, size=2))
    return (gen_dataset(spec, train_per_class, s_train, families, "train"),
            gen_dataset(spec, test_per_class, s_test, families, "test"))


def sphere_with_spikes(m: int = 1024, n_spikes: int = 6, height: float = 0.35,
                       width: float = 0.25, seed: int = 0) -> PointCloud:
    """Unit sphere with conical bumps; the ``spike`` channel marks bumped points."""
    rng = np.random.default_rng(seed)
    pts = _sphere(m, rng, symmetric=False)
    axes = _sphere(max(n_spikes, 1), rng, symmetric=False)[:n_spikes]
    radius = np.ones(m)
    spike = np.zeros(m)
    for axis in axes:
        ang = np.arccos(np.clip(pts @ axis, -1, 1))
        bump = np.clip(1 - ang / width, 0, None)
        radius += height * bump
        spike = np.maximum(spike, (bump > 0).astype(float))
    return PointCloud(pts * radius[:, None], None, {"spike": spike})
