"""Point cloud data model, file I/O, neighbourhood queries and curvature statistics."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numba
import numpy as np

logger = logging.getLogger(__name__)

FORMATS = ("xyz", "off", "ply")

_BRUTE_FORCE_MAX = 256
_BLOCK = 256


class CloudFormatError(ValueError):
    """Raised when a point cloud file cannot be parsed."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        where = f"{self.path}:{lineno}" if lineno is not None else self.path
        super().__init__(f"{where}: {message}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of ``m`` 3D points with optional per-point scalar channels.

    Arrays are copied on construction and made read-only, so a cloud can be
    shared freely between readers.
    """

    points: np.ndarray
    label: Optional[int] = None
    attrs: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (m, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        attrs = {}
        for name, values in dict(self.attrs).items():
            values = np.asarray(values, dtype=np.float64).reshape(-1)
            if values.shape[0] != pts.shape[0]:
                raise ValueError(
                    f"attribute {name!r} has length {values.shape[0]}, expected {pts.shape[0]}"
                )
            attrs[name] = _frozen(values)
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "attrs", attrs)
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    def __len__(self):
        return self.points.shape[0]

    @property
    def m(self) -> int:
        return self.points.shape[0]

    def with_points(self, points) -> "PointCloud":
        """Same label, new coordinates; attributes are dropped if the count changes."""
        points = np.asarray(points, dtype=np.float64)
        attrs = self.attrs if points.shape[0] == self.m else {}
        return PointCloud(points, self.label, attrs)

    def with_label(self, label) -> "PointCloud":
        return PointCloud(self.points, label, self.attrs)

    def with_attrs(self, **channels) -> "PointCloud":
        attrs = dict(self.attrs)
        attrs.update(channels)
        return PointCloud(self.points, self.label, attrs)

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx, dtype=np.intp)
        attrs = {k: v[idx] for k, v in self.attrs.items()}
        return PointCloud(self.points[idx], self.label, attrs)


# --------------------------------------------------------------------------- I/O


def _format_of(path, fmt):
    if fmt is None:
        fmt = os.path.splitext(str(path))[1].lstrip(".")
    fmt = fmt.lower()
    if fmt not in FORMATS:
        raise ValueError(f"unsupported point cloud format {fmt!r}; expected one of {FORMATS}")
    return fmt


def _parse_floats(tokens, path, lineno, count=3):
    if len(tokens) < count:
        raise CloudFormatError(path, lineno, f"expected {count} numbers, got {len(tokens)}")
    try:
        return [float(t) for t in tokens[:count]]
    except ValueError:
        raise CloudFormatError(path, lineno, f"non-numeric token in {' '.join(tokens)!r}") from None


def _data_lines(lines):
    """Yield (lineno, tokens) for non-blank, non-comment lines."""
    for lineno, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if stripped:
            yield lineno, stripped.split()


def _read_xyz(path, lines):
    pts = [_parse_floats(tokens, path, lineno) for lineno, tokens in _data_lines(lines)]
    return np.array(pts, dtype=np.float64).reshape(-1, 3), {}


def _read_off(path, lines):
    it = _data_lines(lines)
    try:
        lineno, tokens = next(it)
    except StopIteration:
        raise CloudFormatError(path, None, "empty OFF file") from None
    head = tokens[0]
    if not head.upper().startswith("OFF"):
        raise CloudFormatError(path, lineno, "missing OFF header")
    # Some exporters glue the counts onto the header ("OFF1024 2048 0").
    rest = ([head[3:]] if len(head) > 3 else []) + tokens[1:]
    if not rest:
        try:
            lineno, rest = next(it)
        except StopIteration:
            raise CloudFormatError(path, lineno, "missing vertex/face counts") from None
    try:
        n_vertices = int(rest[0])
    except (ValueError, IndexError):
        raise CloudFormatError(path, lineno, "bad vertex count") from None
    pts = []
    for lineno, tokens in it:
        if len(pts) == n_vertices:
            break
        pts.append(_parse_floats(tokens, path, lineno))
    if len(pts) < n_vertices:
        raise CloudFormatError(path, None, f"expected {n_vertices} vertices, found {len(pts)}")
    return np.array(pts, dtype=np.float64).reshape(-1, 3), {}


def _read_ply(path, lines):
    if not lines or lines[0].strip() != "ply":
        raise CloudFormatError(path, 1, "missing ply magic")
    n_vertices = None
    props = []
    in_vertex = False
    body = None
    for i, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens:
            continue
        key = tokens[0]
        if key == "format":
            if tokens[1] != "ascii":
                raise CloudFormatError(path, i, "only ASCII PLY is supported")
        elif key == "element":
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                n_vertices = int(tokens[2])
        elif key == "property" and in_vertex:
            props.append(tokens[-1])
        elif key == "end_header":
            body = i
            break
    if body is None or n_vertices is None:
        raise CloudFormatError(path, None, "incomplete PLY header")
    for axis in "xyz":
        if axis not in props:
            raise CloudFormatError(path, None, f"PLY vertex element has no {axis} property")
    rows = []
    for offset, line in enumerate(lines[body : body + n_vertices]):
        rows.append(_parse_floats(line.split(), path, body + 1 + offset, count=len(props)))
    if len(rows) < n_vertices:
        raise CloudFormatError(path, None, f"expected {n_vertices} vertices, found {len(rows)}")
    table = np.array(rows, dtype=np.float64).reshape(-1, len(props))
    col = {name: table[:, j] for j, name in enumerate(props)}
    pts = np.stack([col["x"], col["y"], col["z"]], axis=1)
    attrs = {name: col[name] for name in props if name not in ("x", "y", "z")}
    return pts, attrs


_READERS = {"xyz": _read_xyz, "off": _read_off, "ply": _read_ply}


def load_cloud(path, fmt: Optional[str] = None, label: Optional[int] = None) -> PointCloud:
    """Read a cloud from an XYZ, OFF (vertices only) or ASCII PLY file.

    The format is taken from the file suffix unless ``fmt`` is given.
    """
    fmt = _format_of(path, fmt)
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    pts, attrs = _READERS[fmt](path, lines)
    if pts.shape[0] == 0:
        raise CloudFormatError(path, None, "file contains no points")
    return PointCloud(pts, label, attrs)


def save_cloud(cloud: PointCloud, path, fmt: Optional[str] = None) -> None:
    """Write ``cloud`` as XYZ or ASCII PLY; PLY carries every attribute channel."""
    fmt = _format_of(path, fmt)
    if fmt == "off":
        raise ValueError("writing OFF is not supported; use xyz or ply")
    # repr-precision floats make the round trip exact
    if fmt == "xyz":
        lines = [f"{x!r} {y!r} {z!r}" for x, y, z in cloud.points.tolist()]
    else:
        names = list(cloud.attrs)
        header = ["ply", "format ascii 1.0", f"element vertex {cloud.m}",
                  "property float x", "property float y", "property float z"]
        header += [f"property float {name}" for name in names]
        header.append("end_header")
        cols = [cloud.points] + [cloud.attrs[n][:, None] for n in names]
        table = np.hstack(cols)
        lines = header + [" ".join(repr(v) for v in row) for row in table.tolist()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------- neighbourhoods


@dataclass(frozen=True)
class NeighborhoodIndex:
    """k nearest neighbours of every point (self excluded), nearest first."""

    source: PointCloud
    k: int
    neighbors: np.ndarray

    def distances(self) -> np.ndarray:
        pts = self.source.points
        return np.linalg.norm(pts[self.neighbors] - pts[:, None, :], axis=2)


def _sq_dists(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def knn_indices(query: np.ndarray, ref: np.ndarray, k: int, exclude_self: bool = False) -> np.ndarray:
    """Exact k nearest reference indices for each query row.

    Ties in distance are broken by the smaller reference index.  With
    ``exclude_self`` the query set must be the reference set and each row's
    own index is skipped.
    """
    query = np.asarray(query, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    n_ref = ref.shape[0]
    if not 1 <= k <= n_ref - (1 if exclude_self else 0):
        raise ValueError(f"k={k} out of range for {n_ref} reference points")
    out = np.empty((query.shape[0], k), dtype=np.intp)
    for start in range(0, query.shape[0], _BLOCK):
        stop = min(start + _BLOCK, query.shape[0])
        d = _sq_dists(query[start:stop], ref)
        rows = np.arange(stop - start)
        if exclude_self:
            d[rows, rows + start] = np.inf
        if n_ref <= _BRUTE_FORCE_MAX:
            out[start:stop] = np.argsort(d, axis=1, kind="stable")[:, :k]
            continue
        part = np.argpartition(d, k - 1, axis=1)[:, :k]
        pd = d[rows[:, None], part]
        kth = pd.max(axis=1)
        tied = (d <= kth[:, None]).sum(axis=1) > k
        order = np.lexsort((part, pd), axis=1)
        out[start:stop] = np.take_along_axis(part, order, axis=1)
        for r in np.flatnonzero(tied):
            out[start + r] = np.argsort(d[r], kind="stable")[:k]
    return out


def knn(cloud: PointCloud, k: int) -> NeighborhoodIndex:
    """Exact k-nearest-neighbour index over ``cloud`` (self excluded)."""
    if not 1 <= k <= cloud.m - 1:
        raise ValueError(f"k must be in [1, {cloud.m - 1}], got {k}")
    nbrs = knn_indices(cloud.points, cloud.points, k, exclude_self=True)
    nbrs.setflags(write=False)
    return NeighborhoodIndex(cloud, k, nbrs)


@numba.njit(cache=True)
def _fps_kernel(pts, n, first):
    m = pts.shape[0]
    chosen = np.empty(n, dtype=np.intp)
    min_d = np.empty(m)
    chosen[0] = first
    for j in range(m):
        dx = pts[j, 0] - pts[first, 0]
        dy = pts[j, 1] - pts[first, 1]
        dz = pts[j, 2] - pts[first, 2]
        min_d[j] = dx * dx + dy * dy + dz * dz
    for i in range(1, n):
        nxt = 0
        for j in range(1, m):
            if min_d[j] > min_d[nxt]:
                nxt = j
        chosen[i] = nxt
        for j in range(m):
            dx = pts[j, 0] - pts[nxt, 0]
            dy = pts[j, 1] - pts[nxt, 1]
            dz = pts[j, 2] - pts[nxt, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < min_d[j]:
                min_d[j] = d
    return chosen


def fps(cloud: PointCloud, n: int, seed: int = 0) -> np.ndarray:
    """Greedy farthest point sampling.

    The first index is ``seed mod m``; every later pick maximises the minimum
    distance to the picks so far, ties going to the smaller index.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    m = pts.shape[0]
    if not 1 <= n <= m:
        raise ValueError(f"n must be in [1, {m}], got {n}")
    return _fps_kernel(np.ascontiguousarray(pts), n, int(seed) % m)


# ------------------------------------------------------------ normals, curvature


@dataclass(frozen=True)
class NormalField:
    normals: np.ndarray
    degenerate: np.ndarray

    @property
    def any_degenerate(self) -> bool:
        return bool(self.degenerate.any())


def estimate_normals(cloud: PointCloud, nbr: NeighborhoodIndex) -> NormalField:
    """PCA normals over each point together with its neighbours.

    The sign is fixed so the first non-zero component is positive.  A
    neighbourhood of coincident points gets +z and is flagged degenerate.
    """
    if nbr.k < 3:
        raise ValueError("normal estimation needs k >= 3")
    pts = cloud.points
    patch = np.concatenate([pts[:, None, :], pts[nbr.neighbors]], axis=1)
    centred = patch - patch.mean(axis=1, keepdims=True)
    cov = np.einsum("mki,mkj->mij", centred, centred) / patch.shape[1]
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0].copy()
    scale = np.maximum(np.abs(patch).max(axis=(1, 2)), 1.0)
    degenerate = np.abs(centred).max(axis=(1, 2)) <= 1e-12 * scale
    normals[degenerate] = (0.0, 0.0, 1.0)
    nonzero = np.abs(normals) > 1e-12
    first = np.argmax(nonzero, axis=1)
    sign = np.sign(normals[np.arange(len(normals)), first])
    sign[sign == 0] = 1.0
    normals *= sign[:, None]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    if degenerate.any():
        logger.warning("%d degenerate neighbourhoods; normals defaulted to +z", int(degenerate.sum()))
    normals.setflags(write=False)
    degenerate.setflags(write=False)
    return NormalField(normals, degenerate)


def curvatures(cloud: PointCloud, normals: NormalField, nbr: NeighborhoodIndex) -> np.ndarray:
    """Local curvature of every point: mean |cos| between neighbour chords and the normal."""
    pts = cloud.points
    chords = pts[nbr.neighbors] - pts[:, None, :]
    lengths = np.linalg.norm(chords, axis=2)
    dots = np.abs(np.einsum("mkj,mj->mk", chords, normals.normals))
    safe = np.where(lengths > 0, lengths, 1.0)
    terms = np.where(lengths > 0, dots / safe, 0.0)
    return terms.sum(axis=1) / nbr.k


def local_curvature(cloud: PointCloud, normals: NormalField, nbr: NeighborhoodIndex, j: int) -> float:
    """Curvature at a single point ``j``."""
    p = cloud.points[j]
    n = normals.normals[j]
    total = 0.0
    for q in cloud.points[nbr.neighbors[j]]:
        length = np.linalg.norm(q - p)
        if length > 0:
            total += abs(np.dot((q - p) / length, n))
    return total / nbr.k


def curvature_stds(cloud: PointCloud, normals: NormalField, nbr: NeighborhoodIndex,
                   curv: Optional[np.ndarray] = None) -> np.ndarray:
    """Population std of curvature over each point's neighbourhood, for all points."""
    if curv is None:
        curv = curvatures(cloud, normals, nbr)
    return curv[nbr.neighbors].std(axis=1)


def curvature_std(cloud: PointCloud, normals: NormalField, nbr: NeighborhoodIndex, j: int) -> float:
    vals = [local_curvature(cloud, normals, nbr, int(q)) for q in nbr.neighbors[j]]
    return float(np.std(vals))


def curvature_profile(cloud: PointCloud, k: int = 10) -> Dict[str, np.ndarray]:
    """Neighbourhood, normals, curvature and curvature std for ``cloud`` in one pass."""
    nbr = knn(cloud, k)
    normals = estimate_normals(cloud, nbr)
    curv = curvatures(cloud, normals, nbr)
    return {
        "neighbors": nbr.neighbors,
        "normals": normals.normals,
        "curvature": curv,
        "curvature_std": curvature_stds(cloud, normals, nbr, curv),
    }


def curvature_std_vector(cloud: PointCloud, k: int = 10) -> np.ndarray:
    return curvature_profile(cloud, k)["curvature_std"]
