import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from shapeadv.cloud import (CloudFormatError, PointCloud, curvature_std, curvature_stds, curvatures,
                            estimate_normals, fps, knn, load_cloud, local_curvature, save_cloud)
from shapeadv.data import sphere_with_spikes

coords = st.floats(-10, 10, allow_nan=False, allow_infinity=False, width=64)


def cloud_strategy(min_m=2, max_m=40):
    return st.integers(min_m, max_m).flatmap(
        lambda m: arrays(np.float64, (m, 3), elements=coords).map(PointCloud))


# ------------------------------------------------------------------ data model


def test_cloud_rejects_bad_shapes_and_values():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        PointCloud([[0, 0, np.nan]])
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)), attrs={"si": np.zeros(2)})


def test_cloud_arrays_are_read_only():
    c = PointCloud(np.zeros((3, 3)), attrs={"a": np.ones(3)})
    with pytest.raises(ValueError):
        c.points[0, 0] = 1.0
    with pytest.raises(ValueError):
        c.attrs["a"][0] = 2.0


# ------------------------------------------------------------------------ I/O


def test_xyz_three_lines(tmp_path):
    p = tmp_path / "t.xyz"
    p.write_text("0 0 0\n1 0 0\n0 1 0\n")
    assert load_cloud(p).m == 3


def test_xyz_extra_columns_ignored(tmp_path):
    p = tmp_path / "t.xyz"
    p.write_text("0 0 0 9 9\n1 2 3 7\n")
    np.testing.assert_array_equal(load_cloud(p).points, [[0, 0, 0], [1, 2, 3]])


def test_off_vertices_only(tmp_path):
    p = tmp_path / "t.off"
    p.write_text("OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n")
    c = load_cloud(p)
    assert c.m == 4
    np.testing.assert_array_equal(c.points[3], [0, 0, 1])


def test_off_header_with_counts_attached(tmp_path):
    p = tmp_path / "t.off"
    p.write_text("OFF4 0 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n")
    assert load_cloud(p).m == 4


def test_parse_error_names_line(tmp_path):
    p = tmp_path / "t.xyz"
    p.write_text("0 0 0\n1 abc 0\n")
    with pytest.raises(CloudFormatError) as exc:
        load_cloud(p)
    assert exc.value.lineno == 2
    assert ":2:" in str(exc.value)


def test_empty_file_is_an_error(tmp_path):
    p = tmp_path / "t.xyz"
    p.write_text("# nothing\n")
    with pytest.raises(CloudFormatError):
        load_cloud(p)


@pytest.mark.parametrize("fmt", ["xyz", "ply"])
def test_round_trip_100_points(tmp_path, rng, fmt):
    c = PointCloud(rng.normal(size=(100, 3)))
    path = tmp_path / f"c.{fmt}"
    save_cloud(c, path)
    assert np.abs(load_cloud(path).points - c.points).max() < 1e-6


def test_ply_lists_attribute_property(tmp_path, rng):
    c = PointCloud(rng.normal(size=(5, 3)), attrs={"si_score": rng.random(5)})
    path = tmp_path / "c.ply"
    save_cloud(c, path)
    assert "property float si_score" in path.read_text()
    back = load_cloud(path)
    np.testing.assert_allclose(back.attrs["si_score"], c.attrs["si_score"], atol=1e-6)


def test_save_to_missing_directory_raises(tmp_path):
    with pytest.raises(OSError):
        save_cloud(PointCloud(np.zeros((2, 3))), tmp_path / "no" / "such" / "dir" / "c.xyz")


@settings(max_examples=30, deadline=None)
@given(cloud_strategy(1, 30), st.sampled_from(["xyz", "ply"]))
def test_round_trip_property(tmp_path_factory, cloud, fmt):
    path = os.path.join(tmp_path_factory.mktemp("rt"), f"c.{fmt}")
    save_cloud(cloud, path)
    assert np.abs(load_cloud(path).points - cloud.points).max() <= 1e-6


# ------------------------------------------------------------------ neighbours


def test_knn_unit_square_picks_adjacent_corner():
    sq = PointCloud([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
    nb = knn(sq, 1)
    d = nb.distances()[:, 0]
    np.testing.assert_allclose(d, 1.0)
    # ties between the two adjacent corners go to the smaller index
    assert nb.neighbors[:, 0].tolist() == [1, 0, 1, 0]


def test_knn_exhaustive(rng):
    c = PointCloud(rng.normal(size=(12, 3)))
    nb = knn(c, 11)
    for j in range(12):
        assert sorted(nb.neighbors[j]) == [i for i in range(12) if i != j]


def test_knn_k_out_of_range(rng):
    c = PointCloud(rng.normal(size=(5, 3)))
    for k in (0, 5):
        with pytest.raises(ValueError):
            knn(c, k)


def test_knn_matches_brute_force_64(rng):
    c = PointCloud(rng.normal(size=(64, 3)))
    np.testing.assert_array_equal(knn(c, 5).neighbors, oracles.knn(c.points, 5))


def test_knn_large_cloud_with_ties_matches_stable_order(rng):
    # grid points have many equal distances; the partition path must still tie-break by index
    g = np.stack(np.meshgrid(*[np.arange(8.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
    nb = knn(PointCloud(g), 6).neighbors
    d = ((g[:, None, :] - g[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d, np.inf)
    np.testing.assert_array_equal(nb, np.argsort(d, axis=1, kind="stable")[:, :6])


def test_knn_invariants(rng):
    c = PointCloud(rng.normal(size=(50, 3)))
    nb = knn(c, 7)
    assert nb.neighbors.shape == (50, 7)
    assert not np.any(nb.neighbors == np.arange(50)[:, None])
    assert np.all(np.diff(nb.distances(), axis=1) >= 0)


def test_fps_full_returns_every_index(rng):
    c = PointCloud(rng.normal(size=(20, 3)))
    assert sorted(fps(c, 20, seed=3).tolist()) == list(range(20))


def test_fps_collinear():
    c = PointCloud([[0, 0, 0], [0.1, 0, 0], [1, 0, 0]])
    assert fps(c, 2, seed=0).tolist() == [0, 2]


def test_fps_matches_greedy_reference_32(rng):
    c = PointCloud(rng.normal(size=(32, 3)))
    assert fps(c, 8, seed=5).tolist() == oracles.fps(c.points, 8, 5)


def test_fps_seed_sets_first_index(rng):
    c = PointCloud(rng.normal(size=(10, 3)))
    assert fps(c, 3, seed=13)[0] == 3


def test_fps_n_out_of_range(rng):
    c = PointCloud(rng.normal(size=(10, 3)))
    for n in (0, 11):
        with pytest.raises(ValueError):
            fps(c, n)


def test_fps_ties_go_to_lower_index():
    # from the origin both +x and -x are equally far
    c = PointCloud([[0, 0, 0], [1, 0, 0], [-1, 0, 0]])
    assert fps(c, 2, seed=0).tolist() == [0, 1]


# --------------------------------------------------------------------- normals


def test_planar_normals_are_z(rng):
    pts = np.c_[rng.random((10, 2)), np.zeros(10)]
    n = estimate_normals(PointCloud(pts), knn(PointCloud(pts), 5)).normals
    np.testing.assert_allclose(np.abs(n[:, 2]), 1.0, atol=1e-9)


def fibonacci_sphere(m):
    i = np.arange(m) + 0.5
    phi = np.arccos(1 - 2 * i / m)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return np.c_[np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)]


def test_sphere_normals_radial():
    pts = fibonacci_sphere(500)
    c = PointCloud(pts)
    n = estimate_normals(c, knn(c, 8)).normals
    cos = np.abs(np.einsum("ij,ij->i", n, pts))
    assert np.degrees(np.arccos(np.clip(cos, -1, 1))).max() < 15


def test_degenerate_neighbourhood_defaults_to_z():
    c = PointCloud(np.ones((6, 3)))
    nf = estimate_normals(c, knn(c, 3))
    np.testing.assert_array_equal(nf.normals, np.tile([0, 0, 1.0], (6, 1)))
    assert nf.degenerate.all()


def test_normals_match_independent_pca(rng):
    c = PointCloud(rng.normal(size=(40, 3)))
    nb = knn(c, 6)
    n = estimate_normals(c, nb).normals
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-9)
    for j in range(40):
        ref = oracles.pca_normal(c.points[[j] + list(nb.neighbors[j])])
        assert abs(abs(ref @ n[j]) - 1) < 1e-9


# ------------------------------------------------------------------- curvature


def test_planar_curvature_zero(rng):
    pts = np.c_[rng.random((30, 2)), np.zeros(30)]
    c = PointCloud(pts)
    nb = knn(c, 6)
    nf = estimate_normals(c, nb)
    assert np.abs(curvatures(c, nf, nb)).max() < 1e-12


def test_sphere_curvature_closed_form():
    # on a sphere of radius R the chord-normal cosine is c / (2R)
    pts = fibonacci_sphere(400) * 2.0
    c = PointCloud(pts)
    nb = knn(c, 8)
    radial = PointCloud(pts).points / 2.0
    from shapeadv.cloud import NormalField
    nf = NormalField(radial, np.zeros(400, dtype=bool))
    for j in (0, 57, 311):
        chords = np.linalg.norm(pts[nb.neighbors[j]] - pts[j], axis=1)
        expected = np.mean(chords / (2 * 2.0))
        assert abs(local_curvature(c, nf, nb, j) - expected) < 1e-12


def test_curvature_matches_reference_128(rng):
    c = PointCloud(rng.normal(size=(128, 3)))
    nb = knn(c, 10)
    nf = estimate_normals(c, nb)
    vec = curvatures(c, nf, nb)
    for j in range(128):
        ref = oracles.curvature(c.points, nf.normals, nb.neighbors, j)
        assert abs(vec[j] - ref) < 1e-12
        assert abs(local_curvature(c, nf, nb, j) - ref) < 1e-12


def test_curvature_std_hand_value():
    # curvature of the four neighbours is {0, 0, 1, 1}; population std is 0.5
    vals = np.array([0.0, 0.0, 1.0, 1.0])
    assert np.std(vals) == 0.5
    from shapeadv.cloud import NeighborhoodIndex, NormalField
    pts = PointCloud(np.arange(15.0).reshape(5, 3))
    nb = NeighborhoodIndex(pts, 4, np.array([[1, 2, 3, 4], [0, 2, 3, 4], [0, 1, 3, 4],
                                             [0, 1, 2, 4], [0, 1, 2, 3]]))
    curv = np.array([9.0, 0.0, 0.0, 1.0, 1.0])
    nf = NormalField(np.tile([0, 0, 1.0], (5, 1)), np.zeros(5, dtype=bool))
    assert curvature_stds(pts, nf, nb, curv)[0] == 0.5


def test_curvature_std_single_point_agrees(star_cloud):
    nb = knn(star_cloud, 10)
    nf = estimate_normals(star_cloud, nb)
    vec = curvature_stds(star_cloud, nf, nb)
    for j in (0, 17, 99):
        assert abs(curvature_std(star_cloud, nf, nb, j) - vec[j]) < 1e-12


def test_curvature_std_larger_on_spikes():
    c = sphere_with_spikes(m=2048, n_spikes=6, seed=2)
    nb = knn(c, 10)
    nf = estimate_normals(c, nb)
    s2 = curvature_stds(c, nf, nb)
    spike = c.attrs["spike"] > 0
    assert s2[spike].mean() > s2[~spike].mean()


def _curv_stats(pts, k=8):
    c = PointCloud(pts)
    nb = knn(c, k)
    nf = estimate_normals(c, nb)
    cv = curvatures(c, nf, nb)
    return cv, curvature_stds(c, nf, nb, cv)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_curvature_rigid_and_scale_invariant(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(60, 3))
    r = oracles.random_rotation(rng)
    moved = pts @ r.T + rng.normal(size=3) * 3
    scaled = pts * rng.uniform(0.2, 5.0)
    c0, s0 = _curv_stats(pts)
    c1, s1 = _curv_stats(moved)
    c2, s2 = _curv_stats(scaled)
    assert np.abs(c0 - c1).max() < 1e-6 and np.abs(c0 - c2).max() < 1e-6
    assert np.abs(s0 - s1).max() < 1e-6
    assert (s0 >= 0).all()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 40), st.booleans())
def test_knn_fps_match_oracles_property(seed, m, lattice):
    rng = np.random.default_rng(seed)
    if lattice:
        # small integer coordinates: exact arithmetic with many distance ties
        pts = rng.integers(-3, 4, size=(m, 3)).astype(np.float64)
    else:
        pts = rng.normal(size=(m, 3))
    c = PointCloud(pts)
    k = int(rng.integers(1, m))
    np.testing.assert_array_equal(knn(c, k).neighbors, oracles.knn(pts, k))
    n = int(rng.integers(1, m + 1))
    assert fps(c, n, seed).tolist() == oracles.fps(pts, n, seed % m)
