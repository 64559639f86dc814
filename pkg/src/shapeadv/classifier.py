"""PointNet-style point-set classifier with hand-written exact gradients.

Architecture: a shared per-point MLP 3 -> 64 -> 128 -> 256 (ReLU after each
layer), a global max-pool over points, and a head 256 -> 128 -> C.  Gradients
through the max-pool go to the winning point of each channel (lowest index on
ties); points that win no channel get exactly zero gradient.

Every cloud entering the network is first normalised (centroid at origin,
farthest point at radius 1) and the normalisation is part of the
differentiated map, so input gradients are exact for raw coordinates.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .cloud import PointCloud

logger = logging.getLogger(__name__)

POINT_WIDTHS = (3, 64, 128, 256)
HEAD_WIDTHS = (256, 128)
CHECKPOINT_VERSION = 1
_PARAM_ORDER = ("W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4", "W5", "b5")
_CHUNK_POINTS = 16384


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ClassifierModel:
    n_classes: int
    params: Dict[str, np.ndarray]

    @classmethod
    def init(cls, n_classes: int, seed: int = 0) -> "ClassifierModel":
        """He-initialised weights, zero biases."""
        rng = np.random.default_rng(seed)
        widths = list(POINT_WIDTHS) + [HEAD_WIDTHS[1], n_classes]
        params = {}
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
            params[f"W{i}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            params[f"b{i}"] = np.zeros(fan_out)
        return cls(n_classes, params)

    @classmethod
    def zeros(cls, n_classes: int) -> "ClassifierModel":
        model = cls.init(n_classes)
        for v in model.params.values():
            v[...] = 0.0
        return model

    def copy(self) -> "ClassifierModel":
        return ClassifierModel(self.n_classes, {k: v.copy() for k, v in self.params.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in _PARAM_ORDER])

    def save(self, path) -> None:
        doc = {
            "format_version": CHECKPOINT_VERSION,
            "point_widths": list(POINT_WIDTHS),
            "head_widths": list(HEAD_WIDTHS),
            "n_classes": self.n_classes,
            "params": {k: {"shape": list(self.params[k].shape),
                           "data": self.params[k].ravel().tolist()} for k in _PARAM_ORDER},
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('format_version')!r}")
        if tuple(doc["point_widths"]) != POINT_WIDTHS or tuple(doc["head_widths"]) != HEAD_WIDTHS:
            raise ValueError("checkpoint architecture does not match this build")
        params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                  for k, v in doc["params"].items()}
        return cls(int(doc["n_classes"]), params)


@dataclass
class Dataset:
    clouds: List[PointCloud]
    class_names: List[str]
    split: str = "train"

    def __post_init__(self):
        n = len(self.class_names)
        for c in self.clouds:
            if c.label is None or not 0 <= c.label < n:
                raise ValueError(f"label {c.label!r} outside [0, {n})")

    def __len__(self):
        return len(self.clouds)

    @property
    def labels(self) -> np.ndarray:
        return np.array([c.label for c in self.clouds], dtype=np.intp)

    def stacked(self) -> np.ndarray:
        return np.stack([c.points for c in self.clouds])


@dataclass
class GradientReport:
    grad: np.ndarray
    loss: float
    logits: np.ndarray


# ----------------------------------------------------------------- normalisation


def _centroid(x):
    # summing sorted columns makes the result independent of point order
    return np.sort(x, axis=0).sum(axis=0) / x.shape[0]


def _normalize(x):
    """Normalise points; returns the normalised array and what backprop needs."""
    centroid = _centroid(x)
    centred = x - centroid
    radii = np.sqrt(np.einsum("ij,ij->i", centred, centred))
    far = int(np.argmax(radii))
    scale = radii[far]
    if scale <= 0:
        return centred, (1.0, None, far)
    return centred / scale, (scale, centred[far] / scale, far)


def _normalize_backward(gy, y, cache):
    scale, unit, far = cache
    gx = (gy - gy.mean(axis=0)) / scale
    if unit is not None:
        g_scale = -np.einsum("ij,ij->", gy, y) / scale
        gx -= g_scale * unit / y.shape[0]
        gx[far] += g_scale * unit
    return gx


def normalize_cloud(cloud: PointCloud) -> PointCloud:
    """Centre at the origin and scale so the farthest point sits at radius 1.

    Already-normalised clouds (within 1e-9) are returned unchanged, which makes
    the operation exactly idempotent.  A cloud of coincident points is only
    centred.
    """
    pts = cloud.points
    centroid = _centroid(pts)
    radius = np.linalg.norm(pts - centroid, axis=1).max()
    if np.abs(centroid).max() <= 1e-9 and abs(radius - 1.0) <= 1e-9:
        return cloud
    y, _ = _normalize(pts)
    return cloud.with_points(y)


# ------------------------------------------------------------------- the network


def _point_mlp(model, x):
    p = model.params
    z1 = x @ p["W1"] + p["b1"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ p["W2"] + p["b2"]
    a2 = np.maximum(z2, 0.0)
    z3 = a2 @ p["W3"] + p["b3"]
    return z1, a1, z2, a2, z3, np.maximum(z3, 0.0)


def _pool_chunk(model, pts):
    p = model.params
    a1 = pts @ p["W1"]
    a1 += p["b1"]
    np.maximum(a1, 0.0, out=a1)
    a2 = a1 @ p["W2"]
    a2 += p["b2"]
    np.maximum(a2, 0.0, out=a2)
    # channel-major layout keeps the per-channel max/argmax contiguous;
    # the bias and ReLU commute with the max, so they are applied after it
    z3t = p["W3"].T @ a2.T
    arg = z3t.argmax(axis=1)
    best = z3t[np.arange(z3t.shape[0]), arg] + p["b3"]
    return np.maximum(best, 0.0), arg


def _pool(model, pts):
    """Max-pooled features and argmax point per channel, for one (m, 3) array.

    Where a channel is inactive on every point the recorded argmax is
    irrelevant: the ReLU mask zeroes its gradient.
    """
    m = pts.shape[0]
    if m <= _CHUNK_POINTS:
        return _pool_chunk(model, pts)
    best = np.full(POINT_WIDTHS[-1], -np.inf)
    arg = np.zeros(POINT_WIDTHS[-1], dtype=np.intp)
    for start in range(0, m, _CHUNK_POINTS):
        cmax, carg = _pool_chunk(model, pts[start:start + _CHUNK_POINTS])
        better = cmax > best
        best = np.where(better, cmax, best)
        arg = np.where(better, carg + start, arg)
    return best, arg


def _head(model, g):
    p = model.params
    z4 = g @ p["W4"] + p["b4"]
    a4 = np.maximum(z4, 0.0)
    return z4, a4, a4 @ p["W5"] + p["b5"]


def forward(model: ClassifierModel, cloud, normalize: bool = False) -> np.ndarray:
    """Logits for one cloud.

    The raw network expects a normalised cloud; pass ``normalize=True`` to run
    the normalisation as part of the call.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if normalize:
        pts, _ = _normalize(pts)
    g, _ = _pool(model, pts)
    return _head(model, g)[2]


def logits(model: ClassifierModel, cloud) -> np.ndarray:
    """Logits of the full classification pipeline (normalisation included)."""
    return forward(model, cloud, normalize=True)


def predict(model: ClassifierModel, cloud) -> int:
    return int(np.argmax(logits(model, cloud)))


def predict_batch(model: ClassifierModel, clouds: Sequence) -> np.ndarray:
    return np.array([predict(model, c) for c in clouds], dtype=np.intp)


def accuracy(model: ClassifierModel, dataset: Dataset) -> float:
    return float(np.mean(predict_batch(model, dataset.clouds) == dataset.labels))


# ------------------------------------------------------------------------ losses


@dataclass(frozen=True)
class LossSpec:
    """Scalar loss on logits: cross-entropy or the clamped C&W margin.

    The margin is ``max(-kappa, Z_t - max_{j!=t} Z_j)`` untargeted and
    ``max(-kappa, max_{j!=t'} Z_j - Z_t')`` with a target class ``t'``.
    """

    kind: str = "ce"
    kappa: float = 0.0
    target: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("ce", "cw"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")


def _runner_up(z, exclude):
    masked = z.copy()
    masked[exclude] = -np.inf
    return int(np.argmax(masked))


def loss_and_grad(z: np.ndarray, label: int, spec: LossSpec):
    """Loss value and its gradient with respect to the logits ``z``."""
    g = np.zeros_like(z)
    if spec.kind == "ce":
        shift = z - z.max()
        logsum = np.log(np.exp(shift).sum())
        prob = np.exp(shift - logsum)
        g[:] = prob
        g[label] -= 1.0
        return float(logsum - shift[label]), g
    if spec.target is None:
        t = label
        other = _runner_up(z, t)
        margin = z[t] - z[other]
        if margin > -spec.kappa:
            g[t], g[other] = 1.0, -1.0
            return float(margin), g
        return -float(spec.kappa), g
    t = spec.target
    if t == label:
        raise ValueError("target class equals the true label")
    other = _runner_up(z, t)
    margin = z[other] - z[t]
    if margin > -spec.kappa:
        g[other], g[t] = 1.0, -1.0
        return float(margin), g
    return -float(spec.kappa), g


# --------------------------------------------------------------------- backprop


def _backward_points(model, pts, arg, d_pool, pooled, param_grads=None):
    """Backprop a pooled-feature gradient to the winning points.

    ``pooled`` is the forward max-pool output; its sign is the last-layer
    ReLU mask at each channel's winner, so that layer is not recomputed.
    Returns the (m, 3) input gradient; accumulates weight gradients into
    ``param_grads`` when given.
    """
    p = model.params
    rows, inverse = np.unique(arg, return_inverse=True)
    d_z3 = np.zeros((rows.shape[0], POINT_WIDTHS[-1]))
    d_z3[inverse.ravel(), np.arange(POINT_WIDTHS[-1])] = d_pool * (pooled > 0)
    x = pts[rows]
    z1 = x @ p["W1"] + p["b1"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ p["W2"] + p["b2"]
    a2 = np.maximum(z2, 0.0)
    d_a2 = d_z3 @ p["W3"].T
    d_z2 = d_a2 * (z2 > 0)
    d_a1 = d_z2 @ p["W2"].T
    d_z1 = d_a1 * (z1 > 0)
    if param_grads is not None:
        param_grads["W3"] += a2.T @ d_z3
        param_grads["b3"] += d_z3.sum(axis=0)
        param_grads["W2"] += a1.T @ d_z2
        param_grads["b2"] += d_z2.sum(axis=0)
        param_grads["W1"] += x.T @ d_z1
        param_grads["b1"] += d_z1.sum(axis=0)
    grad = np.zeros_like(pts)
    grad[rows] = d_z1 @ p["W1"].T
    return grad


def _head_backward(model, g, z4, a4, d_logits, param_grads=None):
    p = model.params
    d_z4 = (d_logits @ p["W5"].T) * (z4 > 0)
    if param_grads is not None:
        param_grads["W5"] += np.outer(a4, d_logits)
        param_grads["b5"] += d_logits
        param_grads["W4"] += np.outer(g, d_z4)
        param_grads["b4"] += d_z4
    return d_z4 @ p["W4"].T


def input_gradient(model: ClassifierModel, cloud, label: Optional[int] = None,
                   loss: LossSpec = LossSpec(), weight: float = 1.0,
                   normalize: bool = True) -> GradientReport:
    """Exact gradient of ``weight * loss(logits(cloud))`` with respect to the points."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if label is None:
        label = cloud.label
    if label is None:
        raise ValueError("input_gradient needs a label")
    if normalize:
        x, cache = _normalize(pts)
    else:
        x, cache = pts, None
    g, arg = _pool(model, x)
    z4, a4, z = _head(model, g)
    value, d_logits = loss_and_grad(z, label, loss)
    d_pool = _head_backward(model, g, z4, a4, weight * d_logits)
    grad = _backward_points(model, x, arg, d_pool, g)
    if cache is not None:
        grad = _normalize_backward(grad, x, cache)
    return GradientReport(grad, weight * value, z)


def saliency_scores(model: ClassifierModel, cloud: PointCloud, alpha_s: float = 1.0) -> np.ndarray:
    """Per-point saliency from the radial component of the cross-entropy gradient.

    ``S1_j = -(dL/dr_j) * r_j ** (1 + alpha_s)`` where ``r_j`` is the distance
    from the coordinate-wise median.  Shifting a point toward the centre is a
    soft deletion, so a high score marks a point the prediction relies on.
    """
    grad = input_gradient(model, cloud, loss=LossSpec("ce")).grad
    offsets = cloud.points - np.median(cloud.points, axis=0)
    r = np.linalg.norm(offsets, axis=1)
    # dL/dr_j * r_j == g_j . (p_j - c)
    return -np.einsum("ij,ij->i", grad, offsets) * r ** alpha_s


# ---------------------------------------------------------------------- training


def _batch_step(model, batch, labels):
    """Mean cross-entropy over a batch and its parameter gradients."""
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    total = 0.0
    correct = 0
    for pts, y in zip(batch, labels):
        x, _ = _normalize(pts)
        g, arg = _pool(model, x)
        z4, a4, z = _head(model, g)
        value, d_logits = loss_and_grad(z, int(y), LossSpec("ce"))
        d_logits /= len(batch)
        d_pool = _head_backward(model, g, z4, a4, d_logits, grads)
        _backward_points(model, x, arg, d_pool, g, grads)
        total += value
        correct += int(np.argmax(z) == y)
    return total / len(batch), correct, grads


def _project_l2(delta, budget):
    norm = np.linalg.norm(delta)
    if norm > budget:
        delta = delta * (budget / norm) if norm > 0 else delta
    return delta


def pgd_l2(model, pts, label, budget, steps, step_size=None):
    """l2-ball PGD on the cross-entropy; the whole-cloud perturbation norm stays within ``budget``."""
    delta = np.zeros_like(pts)
    if budget <= 0 or steps <= 0:
        return delta
    if step_size is None:
        step_size = 2.5 * budget / steps
    for _ in range(steps):
        g = input_gradient(model, pts + delta, label, LossSpec("ce")).grad
        gn = np.linalg.norm(g)
        if gn == 0:
            break
        delta = _project_l2(delta + step_size * g / gn, budget)
    return delta


def _fit(dataset, epochs, lr, seed, batch_size, momentum, decay_every, adv=None, model=None,
         log_every=1, on_perturbation=None):
    if len(dataset.class_names) < 2:
        raise ValueError("training needs at least two classes")
    counts = np.bincount(dataset.labels, minlength=len(dataset.class_names))
    if counts.min() < 10:
        logger.warning("fewer than 10 examples in some class (min %d)", counts.min())
    rng = np.random.default_rng(seed)
    if model is None:
        model = ClassifierModel.init(len(dataset.class_names), seed=int(rng.integers(2**31)))
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    data = dataset.stacked()
    labels = dataset.labels
    for epoch in range(epochs):
        rate = lr * 0.5 ** (epoch // decay_every)
        order = rng.permutation(len(labels))
        loss_sum, correct = 0.0, 0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            batch = data[idx]
            if adv is not None:
                budget, steps = adv
                batch = batch.copy()
                for b in range(len(idx)):
                    delta = pgd_l2(model, batch[b], int(labels[idx[b]]), budget, steps)
                    if on_perturbation is not None:
                        on_perturbation(delta)
                    batch[b] += delta
            loss, ok, grads = _batch_step(model, batch, labels[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became {loss} at epoch {epoch}, batch starting {start}, lr {rate}")
            for k in model.params:
                velocity[k] = momentum * velocity[k] - rate * grads[k]
                model.params[k] += velocity[k]
            loss_sum += loss * len(idx)
            correct += ok
        if log_every and (epoch + 1) % log_every == 0:
            logger.info("epoch %d/%d  loss %.4f  train acc %.3f", epoch + 1, epochs,
                        loss_sum / len(labels), correct / len(labels))
    model.train_accuracy = correct / len(labels)
    return model


def train(dataset: Dataset, epochs: int = 30, lr: float = 0.01, seed: int = 0,
          batch_size: int = 16, momentum: float = 0.9, decay_every: int = 10) -> ClassifierModel:
    """Mini-batch SGD with momentum on the cross-entropy; lr halves every ``decay_every`` epochs."""
    return _fit(dataset, epochs, lr, seed, batch_size, momentum, decay_every)


def adversarial_train(dataset: Dataset, budget: float = 1.0, steps: int = 5, epochs: int = 30,
                      seed: int = 0, lr: float = 0.01, batch_size: int = 16,
                      momentum: float = 0.9, decay_every: int = 10,
                      on_perturbation=None) -> ClassifierModel:
    """Training on l2-PGD adversarial clouds generated against the current model.

    With ``budget == 0`` the run is identical to :func:`train` under the same
    seed.
    """
    return _fit(dataset, epochs, lr, seed, batch_size, momentum, decay_every,
                adv=(budget, steps), on_perturbation=on_perturbation)
