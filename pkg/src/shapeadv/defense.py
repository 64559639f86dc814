"""Input-purification defenses and the batch attack-versus-defense harness."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import classifier as clf
from .attack import AttackConfig, AttackResult, RegionSearchConfig, ifgm_baseline, run_attack
from .cloud import PointCloud, knn_indices
from .hardening import HardeningConfig, hardened_attack

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFENSE_KINDS = ("none", "srs", "sor")
ATTACK_KINDS = ("hit_adv", "ifgm", "hit_adv_hardened")


@dataclass(frozen=True)
class DefenseSpec:
    kind: str = "none"
    srs_drop_ratio: float = 0.5
    sor_k: int = 2
    sor_std_mult: float = 1.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DEFENSE_KINDS:
            raise ValueError(f"unknown defense {self.kind!r}; expected one of {DEFENSE_KINDS}")
        if not 0 < self.srs_drop_ratio < 1:
            raise ValueError("srs_drop_ratio must lie in (0, 1)")
        if self.sor_k < 1 or self.sor_std_mult <= 0:
            raise ValueError("sor_k must be >= 1 and sor_std_mult > 0")

    @property
    def name(self) -> str:
        return self.kind


def srs(cloud: PointCloud, drop_ratio: float = 0.5, seed: int = 0) -> PointCloud:
    """Keep a seeded uniform subset of ``ceil(m * (1 - drop_ratio))`` points, in input order."""
    keep = math.ceil(cloud.m * (1 - drop_ratio))
    if not 1 <= keep <= cloud.m:
        raise ValueError(f"drop_ratio {drop_ratio} leaves {keep} of {cloud.m} points")
    idx = np.sort(np.random.default_rng(seed).choice(cloud.m, keep, replace=False))
    return cloud.subset(idx)


def sor_mask(points: np.ndarray, k: int = 2, std_mult: float = 1.1):
    """Survivor mask and per-point mean kNN distances for statistical outlier removal."""
    m = len(points)
    if m <= k:
        raise ValueError(f"sor needs more than k={k} points, got {m}")
    nbrs = knn_indices(points, points, k, exclude_self=True)
    d = np.linalg.norm(points[nbrs] - points[:, None, :], axis=2).mean(axis=1)
    return d <= d.mean() + std_mult * d.std(), d


def sor(cloud: PointCloud, k: int = 2, std_mult: float = 1.1) -> PointCloud:
    """Drop points whose mean distance to their k neighbours exceeds mean + std_mult * std."""
    keep, d = sor_mask(cloud.points, k, std_mult)
    if not keep.any():
        logger.warning("SOR removed every point; keeping the one with the smallest kNN distance")
        keep[int(np.argmin(d))] = True
    return cloud.subset(np.flatnonzero(keep))


def apply_defense(cloud: PointCloud, spec: DefenseSpec, seed: Optional[int] = None) -> PointCloud:
    if spec.kind == "none":
        return cloud
    if spec.kind == "srs":
        return srs(cloud, spec.srs_drop_ratio, spec.seed if seed is None else seed)
    return sor(cloud, spec.sor_k, spec.sor_std_mult)


@dataclass
class AttackSpec:
    kind: str = "hit_adv"
    attack: AttackConfig = field(default_factory=AttackConfig)
    region: RegionSearchConfig = field(default_factory=RegionSearchConfig)
    hardening: HardeningConfig = field(default_factory=HardeningConfig)
    ifgm_budget: float = 1.0
    ifgm_steps: int = 10

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack {self.kind!r}; expected one of {ATTACK_KINDS}")

    def run(self, model, cloud: PointCloud) -> AttackResult:
        if self.kind == "hit_adv":
            return run_attack(model, cloud, self.attack, self.region)
        if self.kind == "ifgm":
            return ifgm_baseline(model, cloud, self.ifgm_budget, self.ifgm_steps, k=self.region.k)
        return hardened_attack(model, cloud, self.attack, self.region, self.hardening)

    def echo(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "ifgm":
            out.update(budget=self.ifgm_budget, steps=self.ifgm_steps)
        else:
            out.update(attack=asdict(self.attack), region=asdict(self.region))
            if self.kind == "hit_adv_hardened":
                out["hardening"] = asdict(self.hardening)
        return out


@dataclass
class MetricReport:
    asr: float
    csd_mean: Optional[float]
    chamfer_mean: Optional[float]
    knn_dist_mean: Optional[float]
    examples: List[dict]
    config_echo: dict = field(default_factory=dict)

    @property
    def attempted(self) -> int:
        return len(self.examples)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config_echo": self.config_echo,
            "summary": {"asr": self.asr, "attempted": self.attempted, "csd_mean": self.csd_mean,
                        "chamfer_mean": self.chamfer_mean, "knn_dist_mean": self.knn_dist_mean},
            "examples": self.examples,
        }

    def to_json(self) -> str:
        return json.dumps(_clean_json(self.to_dict()), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        s = d["summary"]
        return cls(s["asr"], s["csd_mean"], s["chamfer_mean"], s["knn_dist_mean"], d["examples"],
                   d.get("config_echo", {}))


def _clean_json(obj):
    if isinstance(obj, dict):
        return {str(k): _clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean_json(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean_json(obj.tolist())
    return obj


def summarize(examples: Sequence[dict], config_echo: Optional[dict] = None) -> MetricReport:
    """Aggregate per-example records; metric means skip records without metrics."""
    if not examples:
        raise ValueError("no examples attempted")

    def mean(key):
        vals = [e["metrics"][key] for e in examples if e.get("metrics")]
        return float(np.mean(vals)) if vals else None

    asr = sum(bool(e["success"]) for e in examples) / len(examples)
    return MetricReport(asr, mean("csd"), mean("chamfer"), mean("knn_dist"), list(examples),
                        config_echo or {})


def generate(model, testset, spec: AttackSpec, limit: Optional[int] = None, progress=None):
    """Attack every correctly classified test cloud; returns ``(cloud_id, clean, result-or-error)``."""
    out = []
    for i, cloud in enumerate(testset.clouds):
        if limit is not None and len(out) >= limit:
            break
        if clf.predict(model, cloud) != cloud.label:
            continue
        try:
            res = spec.run(model, cloud)
        except Exception as exc:  # recorded, never fatal for the batch
            logger.exception("attack failed on cloud %d", i)
            res = exc
        out.append((i, cloud, res))
        if progress is not None:
            progress(i, res)
    return out


def evaluate_suite(model, testset, spec: AttackSpec, defense: DefenseSpec = DefenseSpec(),
                   model_at=None, generated=None, limit: Optional[int] = None) -> MetricReport:
    """Attack on the undefended model, purify, then score on the defended model.

    The defended model is ``model_at`` when given, otherwise ``model``.
    ``generated`` reuses the output of :func:`generate` so several defenses
    can be scored against the same adversarial clouds.
    """
    if not testset.clouds:
        raise ValueError("empty test set")
    generated = generate(model, testset, spec, limit) if generated is None else generated
    victim = model if model_at is None else model_at
    examples = []
    for cid, clean, res in generated:
        rec = {"cloud_id": int(cid), "label": int(clean.label), "defense": defense.kind}
        if isinstance(res, Exception):
            rec.update(success=False, undefended_success=False, error=f"{type(res).__name__}: {res}",
                       metrics=None, prediction=None)
            examples.append(rec)
            continue
        try:
            purified = apply_defense(res.adversarial, defense, seed=defense.seed + cid)
            pred = clf.predict(victim, purified)
            rec.update(success=pred != clean.label, prediction=int(pred),
                       undefended_success=bool(res.success),
                       metrics=dict(res.metrics) if res.success else None,
                       points_after_defense=purified.m)
            if res.final_lambda is not None:
                rec["final_lambda"] = res.final_lambda
        except Exception as exc:
            logger.exception("defense evaluation failed on cloud %d", cid)
            rec.update(success=False, undefended_success=bool(res.success), metrics=None,
                       prediction=None, error=f"{type(exc).__name__}: {exc}")
        examples.append(rec)
    echo = {"attack": spec.echo(), "defense": asdict(defense), "defended_model": (
        "adversarially_trained" if model_at is not None else "undefended"),
        "non_paper_values": ["defense.srs_drop_ratio", "defense.sor_k", "defense.sor_std_mult"]}
    return summarize(examples, echo)
