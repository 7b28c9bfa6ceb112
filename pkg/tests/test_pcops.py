import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.core.errors import PointCloudError
from app.core.layers import Mlp
from app.core.pcops import KNN_CHUNK, farthest_point_sample, knn, random_sample, set_conv, set_upconv
from app.core.tensor import ParameterRegistry, Tensor
from app.models.pointcloud import PointCloud


def line_cloud(xs) -> PointCloud:
    return PointCloud.from_array([[x, 0.0, 0.0] for x in xs])


def brute_knn(q: np.ndarray, r: np.ndarray, k: int) -> np.ndarray:
    d = ((q[:, None, :] - r[None, :, :]) ** 2).sum(axis=2)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def test_fps_is_greedy_max_min():
    assert_array_equal(farthest_point_sample(line_cloud([0, 1, 2, 3, 10]), 3), [0, 4, 3])


def test_fps_ties_go_to_lowest_index():
    # 1 and 3 are both 1 away from the start
    assert_array_equal(farthest_point_sample(line_cloud([2, 1, 3]), 2), [0, 1])


def test_fps_picks_distinct_rows(rng):
    pc = PointCloud.from_array(rng.normal(size=(50, 3)))
    idx = farthest_point_sample(pc, 50)
    assert sorted(idx) == list(range(50))


def test_fps_random_start_is_seeded(rng):
    pc = PointCloud.from_array(rng.normal(size=(30, 3)))
    a = farthest_point_sample(pc, 10, start=None, rng=np.random.default_rng(5))
    b = farthest_point_sample(pc, 10, start=None, rng=np.random.default_rng(5))
    assert_array_equal(a, b)


@pytest.mark.parametrize("m", [0, 6])
def test_fps_count_bounds(m):
    with pytest.raises(PointCloudError):
        farthest_point_sample(line_cloud([0, 1, 2, 3, 4]), m)


def test_fps_on_empty_cloud():
    with pytest.raises(PointCloudError):
        farthest_point_sample(PointCloud.from_array(np.zeros((0, 3))), 1)


def test_knn_matches_brute_force_across_chunks(rng):
    q = rng.normal(size=(KNN_CHUNK + 37, 3))
    r = rng.normal(size=(90, 3))
    assert_array_equal(knn(PointCloud.from_array(q), PointCloud.from_array(r), 5), brute_knn(q, r, 5))


def test_knn_ties_by_reference_index():
    ref = line_cloud([1.0, -1.0, 1.0, 5.0])
    assert_array_equal(knn(line_cloud([0.0]), ref, 3), [[0, 1, 2]])


def test_knn_k_bounds():
    with pytest.raises(PointCloudError):
        knn(line_cloud([0.0]), line_cloud([1.0, 2.0]), 3)


def test_set_conv_shapes(rng):
    pc = PointCloud.from_array(rng.normal(size=(20, 3)), rng.normal(size=(20, 2)))
    mlp = Mlp("sc", (3 + 2 + 2, 6, 5))
    registry = ParameterRegistry()
    mlp.init(registry, rng)
    out = set_conv(pc, 8, 4, mlp, registry.constants())
    assert len(out) == 8 and out.features.shape == (8, 5)
    assert_array_equal(out.xyz, pc.xyz[farthest_point_sample(pc, 8)])


def test_set_conv_is_translation_invariant(rng):
    # dyadic coordinates keep every difference exact
    xyz = rng.integers(-64, 64, size=(40, 3)) / 8.0
    mlp = Mlp("sc", (3, 6, 6))
    registry = ParameterRegistry()
    mlp.init(registry, rng)
    params = registry.constants()
    a = set_conv(PointCloud.from_array(xyz), 10, 5, mlp, params)
    b = set_conv(PointCloud.from_array(xyz + [3.0, -2.0, 5.0]), 10, 5, mlp, params)
    assert_array_equal(a.features.data, b.features.data)


def test_set_upconv_covers_every_dense_point(rng):
    dense = PointCloud.from_array(rng.normal(size=(12, 3)), rng.normal(size=(12, 2)))
    sparse = PointCloud.from_array(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)))
    mlp1, mlp2 = Mlp("u1", (6, 4)), Mlp("u2", (4 + 2, 5))
    registry = ParameterRegistry()
    mlp1.init(registry, rng)
    mlp2.init(registry, rng)
    assert set_upconv(dense, sparse, 3, mlp1, mlp2, registry.constants()).shape == (12, 5)


def test_set_upconv_needs_sparse_features(rng):
    dense = PointCloud.from_array(rng.normal(size=(6, 3)))
    with pytest.raises(PointCloudError):
        set_upconv(dense, dense, 2, Mlp("u1", (3, 2)), None, {})


def test_random_sample(rng):
    pc = PointCloud.from_array(rng.normal(size=(10, 3)))
    small = random_sample(pc, 6, seed=2)
    assert len(small) == 6
    assert len({tuple(p) for p in small.xyz}) == 6
    assert_array_equal(small.xyz, random_sample(pc, 6, seed=2).xyz)
    assert len(random_sample(pc, 25, seed=2)) == 25


def test_point_cloud_validation():
    assert len(PointCloud.from_array(np.zeros((0, 3)))) == 0
    with pytest.raises(PointCloudError):
        PointCloud.from_array(np.zeros((2, 3)), np.zeros((3, 1)))
    with pytest.raises(PointCloudError):
        PointCloud.from_array([[0.0, np.nan, 0.0]])


def greedy_oracle(xyz: np.ndarray, m: int) -> list[int]:
    chosen = [0]
    while len(chosen) < m:
        best, best_d = None, -1.0
        for i in range(len(xyz)):
            if i in chosen:
                continue
            d = min(float(np.sum((xyz[i] - xyz[j]) ** 2)) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def test_fps_unit_square_takes_the_opposite_corner():
    square = PointCloud.from_array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
    assert_array_equal(farthest_point_sample(square, 2), [0, 2])
    assert_array_equal(farthest_point_sample(line_cloud([0, 1, 10]), 2), [0, 2])


def test_fps_matches_greedy_oracle(rng):
    for n in (5, 17, 64):
        # a coarse grid forces ties
        xyz = rng.integers(-3, 4, size=(n, 3)).astype(float)
        m = min(n, 12)
        idx = farthest_point_sample(PointCloud.from_array(xyz), m)
        assert list(idx) == greedy_oracle(xyz, m)


def test_fps_max_min_distance_never_grows(rng):
    xyz = rng.normal(size=(64, 3))
    idx = farthest_point_sample(PointCloud.from_array(xyz), 64)
    gaps = [min(np.linalg.norm(xyz[idx[i]] - xyz[j]) for j in idx[:i]) for i in range(1, 64)]
    assert all(a >= b for a, b in zip(gaps, gaps[1:]))


def test_knn_matches_lexsort_oracle(rng):
    for _ in range(100):
        n_q, n_r = rng.integers(1, 257, size=2)
        q = rng.integers(-4, 5, size=(n_q, 3)).astype(float)
        r = rng.integers(-4, 5, size=(n_r, 3)).astype(float)
        k = int(rng.integers(1, n_r + 1))
        d = ((q[:, None, :] - r[None, :, :]) ** 2).sum(axis=2)
        order = np.array([np.lexsort((np.arange(n_r), row))[:k] for row in d])
        assert_array_equal(knn(PointCloud.from_array(q), PointCloud.from_array(r), k), order)


def test_knn_self_match_and_full_neighbourhood(rng):
    r = rng.normal(size=(10, 3))
    ref = PointCloud.from_array(r)
    assert_array_equal(knn(PointCloud.from_array(r[[3, 7]]), ref, 1), [[3], [7]])
    full = knn(PointCloud.from_array(r[:1]), ref, 10)
    assert sorted(full[0]) == list(range(10))


def test_set_conv_ignores_input_order_with_fixed_centers(rng):
    xyz, f = rng.normal(size=(30, 3)), rng.normal(size=(30, 2))
    mlp = Mlp("sc", (3 + 2 + 2, 6, 5))
    registry = ParameterRegistry()
    mlp.init(registry, rng)
    params = registry.constants()
    centers = np.array([4, 11, 20, 27])
    perm = rng.permutation(30)
    where = np.argsort(perm)
    a = set_conv(PointCloud.from_array(xyz, f), 4, 6, mlp, params, centers=centers)
    b = set_conv(PointCloud.from_array(xyz[perm], f[perm]), 4, 6, mlp, params, centers=where[centers])
    assert_allclose(b.features.data, a.features.data, atol=1e-6)
    assert_array_equal(b.xyz, a.xyz)


def test_set_conv_single_self_neighbour(rng):
    xyz, f = rng.normal(size=(8, 3)), rng.normal(size=(8, 2))
    mlp = Mlp("sc", (3 + 2 + 2, 4))
    registry = ParameterRegistry()
    mlp.init(registry, rng)
    params = registry.constants()
    centers = np.array([1, 5])
    out = set_conv(PointCloud.from_array(xyz, f), 2, 1, mlp, params, centers=centers)
    own = np.concatenate([np.zeros((2, 3)), f[centers], f[centers]], axis=1)
    assert_allclose(out.features.data, mlp(params, Tensor(own)).data, atol=1e-12)


def test_set_upconv_onto_itself_with_one_neighbour(rng):
    pc = PointCloud.from_array(rng.normal(size=(6, 3)), rng.normal(size=(6, 2)))
    mlp1 = Mlp("u1", (3 + 2, 4))
    registry = ParameterRegistry()
    mlp1.init(registry, rng)
    params = registry.constants()
    out = set_upconv(pc, pc, 1, mlp1, None, params)
    own = mlp1(params, Tensor(np.concatenate([np.zeros((6, 3)), pc.features.data], axis=1))).data
    assert_allclose(out.data, np.concatenate([own, pc.features.data], axis=1), atol=1e-12)
