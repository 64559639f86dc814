"""Shape-based attack through a Gaussian-kernel deformation field.

A handful of deformation centres is picked on the clean cloud where points
are both salient to the classifier and sit on busy surface (high
curvature-std).  Each centre carries an offset and a bandwidth; every point
moves by the Nadaraya-Watson blend of the offsets, so displacements are
smooth and never exceed the largest offset.  Offsets and bandwidths are
optimised under a C&W objective with a binary-searched trade-off weight.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.spatial import cKDTree

from . import classifier as clf
from .classifier import ClassifierModel, LossSpec
from .cloud import PointCloud, curvature_profile, fps, knn
from .metrics import all_metrics

logger = logging.getLogger(__name__)


# ------------------------------------------------------------------- configs


@dataclass
class RegionSearchConfig:
    n: int = 100
    k: int = 10
    n_tilde: int = 50
    seed: int = 0

    @classmethod
    def for_points(cls, m: int, k: int = 10, seed: int = 0) -> "RegionSearchConfig":
        """The 1024-point defaults (100 seeds, 50 centres) scaled linearly to ``m`` points."""
        n = max(2, int(round(100 * m / 1024)))
        return cls(n=n, k=k, n_tilde=max(1, n // 2), seed=seed)

    def validate(self, m: Optional[int] = None):
        if self.n < 1 or self.k < 1 or self.n_tilde < 1:
            raise ValueError("n, k and n_tilde must be positive")
        if self.n_tilde > self.n:
            raise ValueError(f"n_tilde ({self.n_tilde}) must not exceed n ({self.n})")
        if m is not None:
            if self.n > m or self.k > m - 1:
                raise ValueError(f"n={self.n}, k={self.k} too large for a cloud of {m} points")
            if not 0.5 * m <= self.n * self.k <= 2 * m:
                logger.warning("n*k = %d is far from the point count %d", self.n * self.k, m)
        return self


@dataclass
class AttackConfig:
    kappa: float = 30.0
    a: float = 1.5
    alpha: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.1
    lambda_init: float = 10.0
    lambda_max: float = 80.0
    lambda_min: float = 0.0
    binary_search_steps: int = 10
    inner_iters: int = 200
    lr: float = 0.01
    target: Optional[int] = None
    seed: int = 0
    init_scale: float = 0.05
    sigma_min: float = 0.05
    abort_early: bool = True

    def validate(self):
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.a <= 0 or not 0 < self.sigma_min <= self.a:
            raise ValueError("need 0 < sigma_min <= a")
        if not self.lambda_min <= self.lambda_init <= self.lambda_max:
            raise ValueError("need lambda_min <= lambda_init <= lambda_max")
        if self.binary_search_steps < 1 or self.inner_iters < 1:
            raise ValueError("binary_search_steps and inner_iters must be positive")
        return self

    @property
    def loss_spec(self) -> LossSpec:
        return LossSpec("cw", self.kappa, self.target)


@dataclass
class SIScores:
    s1: np.ndarray
    s2: np.ndarray
    alpha: float
    combined: np.ndarray
    raw_s2: Optional[np.ndarray] = None


@dataclass(frozen=True)
class DeformationField:
    centers: np.ndarray
    deltas: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        c = np.array(self.centers, dtype=np.float64)
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "deltas", np.asarray(self.deltas, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "sigmas", np.asarray(self.sigmas, dtype=np.float64).reshape(-1))
        if not (len(c) == len(self.deltas) == len(self.sigmas)) or len(c) < 1:
            raise ValueError("centers, deltas and sigmas must have the same positive length")
        if np.any(self.sigmas <= 0):
            raise ValueError("bandwidths must be positive")

    @property
    def n(self) -> int:
        return self.centers.shape[0]

    def with_params(self, deltas, sigmas) -> "DeformationField":
        return DeformationField(self.centers, deltas, sigmas)


@dataclass
class AttackResult:
    adversarial: PointCloud
    success: bool
    final_lambda: Optional[float]
    iterations: int
    trace: List[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    label: Optional[int] = None
    prediction: Optional[int] = None
    trivial: bool = False
    field: Optional[DeformationField] = None
    center_indices: Optional[np.ndarray] = None
    method: str = "hit_adv"

    def to_json(self, ply_path: Optional[str] = None) -> dict:
        doc = {
            "method": self.method,
            "success": bool(self.success),
            "trivial": bool(self.trivial),
            "label": self.label,
            "prediction": self.prediction,
            "final_lambda": self.final_lambda,
            "iterations": int(self.iterations),
            "metrics": {k: float(v) for k, v in sorted(self.metrics.items())},
            "trace": self.trace,
        }
        if self.field is not None:
            doc["max_delta_norm"] = float(np.linalg.norm(self.field.deltas, axis=1).max())
        if ply_path is not None:
            doc["adversarial_ply"] = str(ply_path)
        return doc


# ------------------------------------------------------------ SI and regions


def minmax(v: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant vector maps to zeros."""
    v = np.asarray(v, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi <= lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def si_score(cloud: PointCloud, model: ClassifierModel, cfg: RegionSearchConfig = RegionSearchConfig(),
             alpha: float = 1.0, s1: Optional[np.ndarray] = None,
             s2: Optional[np.ndarray] = None) -> SIScores:
    """Saliency plus weighted imperceptibility score per point.

    Either channel may be supplied precomputed (raw, before normalisation).
    """
    if s1 is None:
        s1 = clf.saliency_scores(model, cloud)
    if s2 is None:
        s2 = curvature_profile(cloud, cfg.k)["curvature_std"]
    n1, n2 = minmax(s1), minmax(s2)
    return SIScores(n1, n2, alpha, n1 + alpha * n2, raw_s2=np.asarray(s2, dtype=np.float64))


def search_regions(cloud: PointCloud, si: SIScores, cfg: RegionSearchConfig,
                   neighbors: Optional[np.ndarray] = None) -> np.ndarray:
    """Indices of the deformation centres, highest combined score first.

    Stage one splits the cloud into ``n`` regions (an FPS seed plus its ``k``
    nearest neighbours) and keeps each region's top-scoring point.  Stage two
    keeps the ``n_tilde`` best distinct candidates.
    """
    cfg.validate(cloud.m)
    score = si.combined
    if neighbors is None:
        neighbors = knn(cloud, cfg.k).neighbors
    seeds = fps(cloud, cfg.n, cfg.seed)
    candidates = []
    for s in seeds:
        region = np.concatenate([[s], neighbors[s][:cfg.k]])
        best = region[score[region] == score[region].max()].min()
        candidates.append(int(best))
    distinct = np.unique(candidates)
    order = np.lexsort((distinct, -score[distinct]))
    chosen = distinct[order][:cfg.n_tilde]
    if len(chosen) < cfg.n_tilde:
        logger.warning("only %d distinct candidate centres (wanted %d)", len(chosen), cfg.n_tilde)
    return chosen


# ------------------------------------------------------------- deformation


def gauss_weight(center, point, sigma: float) -> float:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d = np.asarray(center, dtype=np.float64) - np.asarray(point, dtype=np.float64)
    return float(np.exp(-np.dot(d, d) / (2.0 * sigma * sigma)))


def _sq_center_dists(points, centers):
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("mnk,mnk->mn", diff, diff)


def nw_weights(points: np.ndarray, centers: np.ndarray, sigmas: np.ndarray, d2=None) -> np.ndarray:
    """Row-normalised Gaussian weights, shape (m, n_centres).

    Computed in log space with the row maximum removed, which equals the
    plain ratio wherever that is representable and tends to the dominant
    kernel when every raw weight underflows.
    """
    if d2 is None:
        d2 = _sq_center_dists(points, centers)
    logw = -d2 / (2.0 * sigmas ** 2)
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=1, keepdims=True)


def deform_points(points: np.ndarray, field: DeformationField, d2=None):
    beta = nw_weights(points, field.centers, field.sigmas, d2)
    return points + beta @ field.deltas, beta


def deform(cloud: PointCloud, field: DeformationField) -> PointCloud:
    """Move every point by the kernel-weighted average of the centre offsets."""
    moved, _ = deform_points(cloud.points, field)
    return cloud.with_points(moved)


# ------------------------------------------------------------------ losses


def loss_cls(logits: np.ndarray, true_label: int, kappa: float, target: Optional[int] = None) -> float:
    return clf.loss_and_grad(np.asarray(logits, dtype=np.float64), true_label,
                             LossSpec("cw", kappa, target))[0]


def loss_ker(field: DeformationField, a: float) -> float:
    return float(np.linalg.norm(field.deltas) + np.linalg.norm(a - field.sigmas))


def _ker_grads(deltas, sigmas, a):
    nd = np.linalg.norm(deltas)
    gap = a - sigmas
    ns = np.linalg.norm(gap)
    g_delta = deltas / nd if nd > 0 else np.zeros_like(deltas)
    g_sigma = -gap / ns if ns > 0 else np.zeros_like(sigmas)
    return nd + ns, g_delta, g_sigma


def hide_loss_and_grad(sigmas: np.ndarray, center_cstd: np.ndarray):
    """Cosine similarity of min-max-normalised bandwidths and curvature stds.

    The gradient treats which entries are the min and max as fixed.  If
    either normalised vector is all zeros the loss is 0 with zero gradient.
    """
    v = minmax(center_cstd)
    lo_i, hi_i = int(np.argmin(sigmas)), int(np.argmax(sigmas))
    span = sigmas[hi_i] - sigmas[lo_i]
    nv = np.linalg.norm(v)
    if span <= 0 or nv == 0:
        return 0.0, np.zeros_like(sigmas)
    u = (sigmas - sigmas[lo_i]) / span
    nu = np.linalg.norm(u)
    cos = float(u @ v / (nu * nv))
    g_u = v / (nu * nv) - cos * u / nu ** 2
    g = g_u / span
    g[lo_i] -= g_u.sum() / span
    uu = g_u @ u / span
    g[hi_i] -= uu
    g[lo_i] += uu
    return cos, g


def loss_hide(field: DeformationField, center_cstd: np.ndarray) -> float:
    return hide_loss_and_grad(field.sigmas, center_cstd)[0]


def chamfer_and_grad(clean: np.ndarray, adv: np.ndarray, clean_tree: Optional[cKDTree] = None):
    """Squared-distance Chamfer loss and its gradient with respect to ``adv``."""
    if clean_tree is None:
        clean_tree = cKDTree(clean)
    _, nn_ab = cKDTree(adv).query(clean)
    _, nn_ba = clean_tree.query(adv)
    diff_ab = adv[nn_ab] - clean
    diff_ba = adv - clean[nn_ba]
    value = (np.einsum("ij,ij->", diff_ab, diff_ab) / len(clean)
             + np.einsum("ij,ij->", diff_ba, diff_ba) / len(adv))
    grad = 2.0 * diff_ba / len(adv)
    pulled = 2.0 * diff_ab / len(clean)
    for k in range(3):
        grad[:, k] += np.bincount(nn_ab, pulled[:, k], minlength=len(adv))
    return float(value), grad


def loss_chamfer(clean, adv) -> float:
    a = clean.points if isinstance(clean, PointCloud) else np.asarray(clean, dtype=np.float64)
    b = adv.points if isinstance(adv, PointCloud) else np.asarray(adv, dtype=np.float64)
    return chamfer_and_grad(a, b)[0]


def loss_dis(field: DeformationField, clean, adv, center_cstd, lambda1: float, lambda2: float,
             lambda3: float, a: float = 1.5) -> float:
    total = 0.0
    if lambda1:
        total += lambda1 * loss_ker(field, a)
    if lambda2:
        total += lambda2 * loss_hide(field, center_cstd)
    if lambda3:
        total += lambda3 * loss_chamfer(clean, adv)
    return total


# ---------------------------------------------------------------- gradient


@dataclass
class ObjectiveState:
    total: float
    cls: float
    dis: float
    parts: dict
    logits: np.ndarray
    adv: np.ndarray
    grad_delta: np.ndarray
    grad_sigma: np.ndarray


class AttackObjective:
    """``cls_weight * L_cls(P') + lam * L_dis`` and its exact gradient in (delta, sigma).

    ``classify`` optionally replaces the classifier branch: it maps adversarial
    points to ``(loss, logits, d loss / d points)``; the hardened attack uses
    it to insert resampling and a rigid transform.  ``chamfer_pair`` likewise
    maps (clean, adv) to the pair the Chamfer term compares and returns a
    function pulling gradients back.
    """

    def __init__(self, model, clean: np.ndarray, centers: np.ndarray, center_cstd: np.ndarray,
                 label: int, cfg: AttackConfig, lam: float, cls_weight: float = 1.0):
        self.model = model
        self.clean = np.asarray(clean, dtype=np.float64)
        self.centers = np.asarray(centers, dtype=np.float64)
        self.center_cstd = np.asarray(center_cstd, dtype=np.float64)
        self.label = label
        self.cfg = cfg
        self.lam = lam
        self.cls_weight = cls_weight
        self.d2 = _sq_center_dists(self.clean, self.centers)
        self.clean_tree = cKDTree(self.clean)
        self.classify: Optional[Callable] = None
        self.chamfer_pair: Optional[Callable] = None

    def _classifier_term(self, adv):
        if self.classify is not None:
            return self.classify(adv)
        rep = clf.input_gradient(self.model, adv, self.label, self.cfg.loss_spec)
        return rep.loss, rep.logits, rep.grad

    def _chamfer_term(self, adv):
        if self.chamfer_pair is None:
            return chamfer_and_grad(self.clean, adv, self.clean_tree)
        clean_t, adv_t, pull = self.chamfer_pair(self.clean, adv)
        value, g = chamfer_and_grad(clean_t, adv_t)
        return value, pull(g)

    def evaluate(self, deltas: np.ndarray, sigmas: np.ndarray) -> ObjectiveState:
        cfg = self.cfg
        beta = nw_weights(self.clean, self.centers, sigmas, self.d2)
        shift = beta @ deltas
        adv = self.clean + shift
        cls_value, logits, g_pts = self._classifier_term(adv)
        g_pts = self.cls_weight * g_pts
        parts = {}
        dis = 0.0
        g_delta = np.zeros_like(deltas)
        g_sigma = np.zeros_like(sigmas)
        if cfg.lambda1:
            ker, gd, gs = _ker_grads(deltas, sigmas, cfg.a)
            parts["ker"] = ker
            dis += cfg.lambda1 * ker
            g_delta += self.lam * cfg.lambda1 * gd
            g_sigma += self.lam * cfg.lambda1 * gs
        if cfg.lambda2:
            hide, gs = hide_loss_and_grad(sigmas, self.center_cstd)
            parts["hide"] = hide
            dis += cfg.lambda2 * hide
            g_sigma += self.lam * cfg.lambda2 * gs
        if cfg.lambda3:
            cha, gc = self._chamfer_term(adv)
            parts["chamfer"] = cha
            dis += cfg.lambda3 * cha
            g_pts = g_pts + self.lam * cfg.lambda3 * gc
        # chain through the NW blend: p'_j = p_j + sum_i beta_ij delta_i
        g_delta += beta.T @ g_pts
        proj = g_pts @ deltas.T - np.einsum("mk,mk->m", g_pts, shift)[:, None]
        g_sigma += np.einsum("mn,mn->n", proj * beta, self.d2) / sigmas ** 3
        total = self.cls_weight * cls_value + self.lam * dis
        return ObjectiveState(total, cls_value, dis, parts, logits, adv, g_delta, g_sigma)


def attack_gradient(model, cloud: PointCloud, field: DeformationField, cfg: AttackConfig,
                    center_cstd, lam: float = 1.0, cls_weight: float = 1.0,
                    label: Optional[int] = None) -> ObjectiveState:
    """Objective value and exact gradients with respect to every offset and bandwidth."""
    label = cloud.label if label is None else label
    obj = AttackObjective(model, cloud.points, field.centers, center_cstd, label, cfg, lam, cls_weight)
    return obj.evaluate(field.deltas, field.sigmas)


# -------------------------------------------------------------- optimiser


class Adam:
    """Per-coordinate adaptive steps over a list of arrays."""

    def __init__(self, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            m_hat = self.m[i] / (1 - self.b1 ** self.t)
            v_hat = self.v[i] / (1 - self.b2 ** self.t)
            out.append(p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out


def is_success(logits: np.ndarray, label: int, target: Optional[int] = None) -> bool:
    pred = int(np.argmax(logits))
    return pred == target if target is not None else pred != label


# --------------------------------------------------------------- the attack


@dataclass
class PreparedAttack:
    """Per-cloud quantities computed once on the clean cloud."""

    si: SIScores
    center_idx: np.ndarray
    centers: np.ndarray
    center_cstd: np.ndarray


def prepare(model, cloud: PointCloud, cfg: AttackConfig, rcfg: RegionSearchConfig) -> PreparedAttack:
    profile = curvature_profile(cloud, rcfg.k)
    si = si_score(cloud, model, rcfg, cfg.alpha, s2=profile["curvature_std"])
    idx = search_regions(cloud, si, rcfg, profile["neighbors"])
    return PreparedAttack(si, idx, cloud.points[idx], profile["curvature_std"][idx])


def _inner_loop(obj: AttackObjective, cfg: AttackConfig, rng, label, best, hooks=None):
    """Optimise one lambda probe; updates ``best`` in place, returns (success, iters, last total)."""
    n = obj.centers.shape[0]
    deltas = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(n, 3))
    sigmas = np.full(n, cfg.a / 2.0)
    opt = Adam([deltas.shape, sigmas.shape], cfg.lr)
    check_every = max(1, cfg.inner_iters // 10)
    prev = np.inf
    succeeded = False
    state = None
    it = 0
    for it in range(cfg.inner_iters + 1):
        if hooks is not None and hooks.get("before_eval") is not None:
            hooks["before_eval"](obj, it)
        state = obj.evaluate(deltas, sigmas)
        if not np.isfinite(state.total) or not np.all(np.isfinite(state.grad_delta)):
            logger.warning("non-finite objective at lambda=%g; abandoning this probe", obj.lam)
            return False, it, float("nan")
        ok = _check_success(obj, state, label, cfg, deltas, sigmas)
        if ok:
            succeeded = True
            if state.dis < best["dis"]:
                best.update(dis=state.dis, adv=state.adv.copy(), deltas=deltas.copy(),
                            sigmas=sigmas.copy(), lam=obj.lam, logits=state.logits.copy())
        if it == cfg.inner_iters:
            break
        if cfg.abort_early and it > 0 and it % check_every == 0:
            if state.total > prev - 1e-4 * abs(prev):
                break
            prev = state.total
        deltas, sigmas = opt.step([deltas, sigmas], [state.grad_delta, state.grad_sigma])
        np.clip(sigmas, cfg.sigma_min, cfg.a, out=sigmas)
    return succeeded, it, float(state.total)


def _check_success(obj, state, label, cfg, deltas, sigmas):
    if obj.classify is None:
        return is_success(state.logits, label, cfg.target)
    # the hardened objective sees a resampled, adversarially posed cloud: a
    # step counts only if that view and the plain output both fool the model
    if not is_success(state.logits, label, cfg.target):
        return False
    return is_success(clf.logits(obj.model, state.adv), label, cfg.target)


def binary_search(make_objective: Callable[[float], AttackObjective], cfg: AttackConfig, label: int,
                  hooks=None):
    """Bisection on lambda between the largest success and the smallest failure."""
    lo, hi = cfg.lambda_min, cfg.lambda_max
    lam = cfg.lambda_init
    best = {"dis": np.inf, "adv": None}
    trace = []
    total_iters = 0
    for step in range(cfg.binary_search_steps):
        rng = np.random.default_rng([cfg.seed, step])
        obj = make_objective(lam)
        ok, iters, last = _inner_loop(obj, cfg, rng, label, best, hooks)
        total_iters += iters
        trace.append({"step": step, "lambda": lam, "success": bool(ok), "iters": int(iters),
                      "final_objective": last, "best_dis": None if best["adv"] is None
                      else float(best["dis"])})
        if ok:
            lo = max(lo, lam)
        else:
            hi = min(hi, lam)
        lam = (lo + hi) / 2.0
    return best, trace, total_iters


def run_attack(model: ClassifierModel, cloud: PointCloud, cfg: AttackConfig = AttackConfig(),
               rcfg: RegionSearchConfig = RegionSearchConfig(), label: Optional[int] = None,
               prepared: Optional[PreparedAttack] = None, hooks=None) -> AttackResult:
    """Deformation attack with binary search over the distance weight.

    Returns the successful adversarial cloud with the smallest distance loss
    found, or the clean cloud with ``success=False``.
    """
    cfg.validate()
    label = cloud.label if label is None else label
    if label is None:
        raise ValueError("run_attack needs a labelled cloud")
    pred = clf.predict(model, cloud)
    if is_success(clf.logits(model, cloud), label, cfg.target):
        logger.info("input already %s; returning it unchanged",
                    "at target" if cfg.target is not None else "misclassified")
        return AttackResult(cloud, True, None, 0, [], all_metrics(cloud, cloud, rcfg.k), label,
                            pred, trivial=True)
    prep = prepared or prepare(model, cloud, cfg, rcfg)

    def make_objective(lam):
        return AttackObjective(model, cloud.points, prep.centers, prep.center_cstd, label, cfg, lam)

    best, trace, iters = binary_search(make_objective, cfg, label, hooks)
    return _finish(model, cloud, label, best, trace, iters, prep, rcfg, "hit_adv")


def _finish(model, cloud, label, best, trace, iters, prep, rcfg, method):
    if best["adv"] is None:
        return AttackResult(cloud, False, None, iters, trace, all_metrics(cloud, cloud, rcfg.k),
                            label, clf.predict(model, cloud), center_indices=prep.center_idx,
                            method=method)
    adv = cloud.with_points(best["adv"])
    fieldv = DeformationField(prep.centers, best["deltas"], best["sigmas"])
    return AttackResult(adv, True, float(best["lam"]), iters, trace,
                        all_metrics(cloud, adv, rcfg.k), label, clf.predict(model, adv),
                        field=fieldv, center_indices=prep.center_idx, method=method)


def ifgm_baseline(model: ClassifierModel, cloud: PointCloud, budget: float, steps: int = 10,
                  label: Optional[int] = None, early_stop: bool = False, k: int = 10) -> AttackResult:
    """Iterative l2 fast gradient attack on raw coordinates.

    Each step moves along the normalised cross-entropy gradient by
    ``budget / steps`` and projects back onto the l2 ball of radius ``budget``
    around the clean cloud.
    """
    label = cloud.label if label is None else label
    clean = cloud.points
    pts = clean.copy()
    trace = []
    if budget > 0 and not is_success(clf.logits(model, cloud), label):
        step = budget / steps
        for it in range(steps):
            rep = clf.input_gradient(model, pts, label, LossSpec("ce"))
            gn = np.linalg.norm(rep.grad)
            if gn == 0:
                break
            delta = pts + step * rep.grad / gn - clean
            norm = np.linalg.norm(delta)
            if norm > budget:
                delta *= budget / norm
            pts = clean + delta
            trace.append({"iter": it, "loss": rep.loss})
            if early_stop and is_success(clf.logits(model, pts), label):
                break
    adv = cloud.with_points(pts)
    logits = clf.logits(model, adv)
    return AttackResult(adv, is_success(logits, label), None, len(trace), trace,
                        all_metrics(cloud, adv, k), label, int(np.argmax(logits)), method="ifgm")


def config_dict(cfg) -> dict:
    return asdict(cfg)
