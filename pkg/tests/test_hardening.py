import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial import Delaunay, cKDTree

import oracles
from shapeadv import classifier as clf
from shapeadv import hardening as H
from shapeadv.attack import AttackConfig, RegionSearchConfig, run_attack
from shapeadv.cloud import PointCloud
from shapeadv.data import FAMILIES, ShapeSpec, gen_dataset, make_cloud
from shapeadv.hardening import HardeningConfig, RigidTransform
from shapeadv.metrics import chamfer_distance

SMALL = dict(binary_search_steps=2, inner_iters=30)
# enough budget for some attacks on the cone/cylinder model to succeed
WORKING = dict(kappa=0.0, binary_search_steps=5, inner_iters=60)


def _random_transform(rng):
    return RigidTransform(rng.uniform(0.5, 2.0), tuple(rng.normal(size=4)), tuple(rng.normal(size=3)))


def _same_rows(a, b):
    return np.array_equal(a[np.lexsort(a.T[::-1])], b[np.lexsort(b.T[::-1])])


@pytest.fixture(scope="module")
def oriented_model():
    """Cone vs cylinder; both shapes are upright, so the network is pose-sensitive."""
    ds = gen_dataset(ShapeSpec("sphere", m=128, jitter=0.01), 20, seed=1, families=("cone", "cylinder"))
    return clf.train(ds, epochs=15, seed=0, batch_size=8), ds


# ------------------------------------------------------------------ transforms


def test_identity_transform_leaves_cloud(star_cloud):
    assert np.array_equal(H.apply_rigid(H.IDENTITY, star_cloud).points, star_cloud.points)


def test_quarter_turn_about_z():
    t = RigidTransform(1.0, tuple(H.axis_angle_quat(np.array([0, 0, np.pi / 2]))))
    np.testing.assert_allclose(t.apply(np.array([[1.0, 0, 0]])), [[0, 1.0, 0]], atol=1e-9)


def test_scale_then_translate_order():
    t = RigidTransform(2.0, (1, 0, 0, 0), (1.0, 0, 0))
    np.testing.assert_allclose(t.apply(np.array([[1.0, 1, 1]])), [[3.0, 2, 2]], atol=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_inverse_round_trip_and_distance_ratios(seed):
    rng = np.random.default_rng(seed)
    t = _random_transform(rng)
    pts = rng.normal(size=(20, 3))
    out = t.apply(pts)
    np.testing.assert_allclose(t.inverse().apply(out), pts, atol=1e-9)
    i, j = rng.integers(0, 20, size=2)
    assert abs(np.linalg.norm(out[i] - out[j]) - t.scale * np.linalg.norm(pts[i] - pts[j])) < 1e-9
    assert abs(np.linalg.norm(t.rotation) - 1.0) < 1e-9


def test_pull_gradient_is_the_chain_rule(rng):
    t = _random_transform(rng)
    pts = rng.normal(size=(6, 3))
    w = rng.normal(size=(6, 3))
    fd = oracles_fd(lambda x: float(np.sum(w * t.apply(x))), pts)
    np.testing.assert_allclose(t.pull_gradient(w), fd, atol=1e-8)


def oracles_fd(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def test_transform_rejects_degenerate_parameters():
    with pytest.raises(ValueError):
        RigidTransform(0.0)
    with pytest.raises(ValueError):
        RigidTransform(1.0, (0, 0, 0, 0))


@pytest.mark.parametrize("kwargs", [{"scale_lo": 1.1}, {"upsample_factor": 0.5}, {"noise": -1}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        HardeningConfig(**kwargs).validate()


def test_random_transform_within_evaluation_bounds(rng):
    cfg = HardeningConfig()
    for _ in range(50):
        t = H.random_transform(cfg, rng, radius=2.0)
        assert cfg.scale_lo <= t.scale <= cfg.scale_hi
        assert np.linalg.norm(t.translation) <= cfg.translation_bound * 2.0 + 1e-12
        angle = 2 * np.degrees(np.arccos(min(1.0, abs(t.rotation[0]))))
        assert angle <= cfg.eval_rotation_deg + 1e-9


# ----------------------------------------------------------------------- MaxOT


def test_maxot_zero_steps_is_identity(tiny_model, star_cloud):
    t = H.maxot_search(tiny_model, star_cloud, HardeningConfig(maxot_steps=0), 0)
    assert t == H.IDENTITY


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 12), st.floats(0.01, 2.0))
def test_maxot_monotone_and_bounded(seed, steps, lr):
    rng = np.random.default_rng(seed)
    model = clf.ClassifierModel.init(3, seed=seed % 100)
    pts = rng.normal(size=(40, 3))
    cfg = HardeningConfig(maxot_steps=steps, maxot_lr=lr)
    trace = []
    t = H.maxot_search(model, pts, cfg, 1, kappa=30.0, trace=trace)
    assert all(b > a for a, b in zip(trace, trace[1:]))
    spec = clf.LossSpec("cw", 30.0)
    at_t = clf.loss_and_grad(clf.logits(model, t.apply(pts)), 1, spec)[0]
    at_id = clf.loss_and_grad(clf.logits(model, pts), 1, spec)[0]
    assert at_t >= at_id and at_t == trace[-1]
    assert cfg.scale_lo <= t.scale <= cfg.scale_hi
    radius = np.linalg.norm(pts - pts.mean(axis=0), axis=1).max()
    assert np.linalg.norm(t.translation) <= cfg.translation_bound * radius + 1e-12


def test_maxot_undoes_an_orientation_fragile_attack(oriented_model):
    model, ds = oriented_model
    restored = 0
    tried = 0
    for c in ds.clouds[::5]:
        # the "attack" is a pose the network happens to get wrong
        for deg in range(10, 181, 10):
            t = RigidTransform(1.0, tuple(H.axis_angle_quat(np.array([np.deg2rad(deg), 0, 0]))))
            fragile = t.apply(c.points)
            if clf.predict(model, fragile) != c.label:
                break
        else:
            continue
        tried += 1
        found = H.maxot_search(model, fragile, HardeningConfig(maxot_steps=60, maxot_lr=0.5), c.label)
        restored += clf.predict(model, found.apply(fragile)) == c.label
    assert tried >= 4 and restored == tried


# ------------------------------------------------------------------ resampling


def test_factor_one_resample_is_permutation(star_cloud):
    out = H.benign_resample(star_cloud, factor=1.0, seed=3)
    assert out.m == star_cloud.m and _same_rows(out.points, star_cloud.points)


def _is_midpoint(q, pts):
    # some pair (i, j), possibly i == j, with p_i + p_j == 2 q
    s = pts[:, None, :] + pts[None, :, :] - 2 * q
    return np.abs(s).max(axis=2).min() <= 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1.0, 4.0))
def test_resample_outputs_midpoints_inside_hull(seed, factor):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(int(rng.integers(8, 60)), 3))
    out = H.benign_resample(PointCloud(pts), factor=factor, seed=seed)
    assert out.m == len(pts)
    assert all(_is_midpoint(q, pts) for q in out.points)
    assert np.all(Delaunay(pts).find_simplex(out.points, tol=1e-9) >= 0)


def test_midpoints_join_near_neighbours(rng):
    pts = rng.normal(size=(50, 3))
    a, b = H.upsample_pairs(pts, 3.0, rng)
    assert len(a) == 150
    nbrs = oracles.knn(pts, 3)
    for i, j in zip(a[50:], b[50:]):
        assert j in nbrs[i]
    assert np.array_equal(a[:50], np.arange(50)) and np.array_equal(b[:50], np.arange(50))


@pytest.mark.parametrize("family", FAMILIES)
def test_resample_is_closer_than_point_spacing(family):
    c = make_cloud(ShapeSpec(family, m=256, jitter=0.005, seed=7))
    out = H.benign_resample(c, 2.0, seed=1)
    spacing = cKDTree(c.points).query(c.points, 2)[0][:, 1].mean()
    assert chamfer_distance(c, out) < spacing


def test_tiny_cloud_resample_warns(caplog):
    c = PointCloud(np.eye(3))
    with caplog.at_level(logging.WARNING):
        out = H.benign_resample(c, 2.0)
    assert out is c and "at least 4" in caplog.text
    with pytest.raises(ValueError):
        H.benign_resample(c, 0.5)


def test_resample_deterministic(star_cloud):
    a = H.benign_resample(star_cloud, 2.0, seed=4)
    b = H.benign_resample(star_cloud, 2.0, seed=4)
    assert np.array_equal(a.points, b.points)


def test_noiseless_unit_rescan_is_permutation(star_cloud):
    out = H.simulate_rescan(star_cloud, HardeningConfig(noise=0.0), seed=2, factor=1.0)
    assert _same_rows(out.points, star_cloud.points)


def test_rescan_keeps_count_and_label(star_cloud):
    out = H.simulate_rescan(star_cloud, HardeningConfig(), seed=2)
    assert out.m == star_cloud.m and out.label == star_cloud.label
    assert not _same_rows(out.points, star_cloud.points)
    with pytest.raises(ValueError):
        H.simulate_rescan(PointCloud(np.eye(3)))


# ------------------------------------------------------------- hardened attack


def test_both_sides_of_chamfer_are_transformed(oriented_model):
    model, ds = oriented_model
    cloud = ds.clouds[0]
    seen = []
    H.hardened_attack(model, cloud, AttackConfig(**SMALL), RegionSearchConfig.for_points(128),
                      HardeningConfig(maxot_steps=3, maxot_lr=0.3),
                      hook=lambda t, c, a: seen.append((t, c, a)))
    assert seen
    moved = 0
    for t, clean_t, adv_t in seen:
        np.testing.assert_allclose(clean_t, t.apply(cloud.points), atol=1e-12)
        assert adv_t.shape == cloud.points.shape
        moved += t != H.IDENTITY
    assert moved > 0


def test_degenerate_hardening_matches_plain_attack(oriented_model):
    model, ds = oriented_model
    rcfg = RegionSearchConfig.for_points(128)
    hcfg = HardeningConfig(maxot_steps=0, upsample_factor=1.0)
    wins = 0
    for cloud in ds.clouds[::10]:
        plain = run_attack(model, cloud, AttackConfig(**WORKING), rcfg)
        hard = H.hardened_attack(model, cloud, AttackConfig(**WORKING), rcfg, hcfg)
        assert plain.success == hard.success
        np.testing.assert_allclose(hard.adversarial.points, plain.adversarial.points, atol=1e-9)
        wins += plain.success
    assert wins > 0


def test_hardened_success_fools_plain_classifier(oriented_model):
    model, ds = oriented_model
    wins = 0
    for cloud in ds.clouds[20::10]:
        res = H.hardened_attack(model, cloud, AttackConfig(**WORKING), RegionSearchConfig.for_points(128))
        assert res.method == "hit_adv_hardened"
        if res.success:
            wins += 1
            assert clf.predict(model, res.adversarial) != cloud.label
    assert wins > 0
