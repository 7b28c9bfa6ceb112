import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.core.costvol import CostVolumeParams, attention_weights, attentive_cost_volume, edge_features
from app.core.errors import PointCloudError, ShapeError
from app.core.geom import axis_angle_to_quat, pose_to_matrix, transform_points
from app.core.pcops import knn
from app.core.tensor import ParameterRegistry, Tensor
from app.models.pointcloud import PointCloud
from app.models.pose import Pose


@pytest.fixture
def volume(rng):
    cv = CostVolumeParams.build("cv", 3, 4, feature_width=2, hidden=6, out=5)
    registry = ParameterRegistry()
    cv.init(registry, rng)
    return cv, registry.constants()


def cloud(rng, n):
    return rng.normal(size=(n, 3)), rng.normal(size=(n, 2))


def test_one_embedding_per_pc1_point(rng, volume):
    cv, params = volume
    pc1 = PointCloud.from_array(*cloud(rng, 9))
    pc2 = PointCloud.from_array(*cloud(rng, 7))
    assert attentive_cost_volume(pc1, pc2, cv, params).shape == (9, 5)


def test_pc2_row_order_does_not_matter(rng, volume):
    cv, params = volume
    xyz1, f1 = cloud(rng, 10)
    xyz2, f2 = cloud(rng, 12)
    perm = rng.permutation(12)
    a = attentive_cost_volume(PointCloud.from_array(xyz1, f1), PointCloud.from_array(xyz2, f2), cv, params)
    b = attentive_cost_volume(PointCloud.from_array(xyz1, f1), PointCloud.from_array(xyz2[perm], f2[perm]),
                              cv, params)
    assert_allclose(a.data, b.data, atol=1e-12)


def test_pc1_permutation_permutes_rows(rng, volume):
    cv, params = volume
    xyz1, f1 = cloud(rng, 10)
    pc2 = PointCloud.from_array(*cloud(rng, 8))
    perm = rng.permutation(10)
    a = attentive_cost_volume(PointCloud.from_array(xyz1, f1), pc2, cv, params)
    b = attentive_cost_volume(PointCloud.from_array(xyz1[perm], f1[perm]), pc2, cv, params)
    assert_allclose(b.data, a.data[perm], atol=1e-12)


def test_uniform_weights_average_the_neighbours():
    w = attention_weights(Tensor(np.random.default_rng(0).normal(size=(3, 4, 2))), attentive=False)
    assert_allclose(w.data, 0.25)
    w = attention_weights(Tensor(np.random.default_rng(0).normal(size=(3, 4, 2))))
    assert_allclose(w.data.sum(axis=1), 1.0)


def test_edge_features_layout():
    center = Tensor(np.zeros((1, 3)))
    neighbor = Tensor([[[3.0, 4.0, 0.0]]])
    out = edge_features(center, neighbor, Tensor([[7.0]]), Tensor([[[8.0, 9.0]]]))
    assert_allclose(out.data, [[[3.0, 4.0, 0.0, 5.0, 7.0, 8.0, 9.0]]])


def test_edge_features_shape_mismatch():
    with pytest.raises(ShapeError):
        edge_features(Tensor(np.zeros((2, 3))), Tensor(np.zeros((1, 2, 3))), Tensor(np.zeros((2, 1))),
                      Tensor(np.zeros((1, 2, 1))))


def test_neighbour_counts_are_bounded(rng, volume):
    cv, params = volume
    pc1 = PointCloud.from_array(*cloud(rng, 9))
    with pytest.raises(PointCloudError):
        attentive_cost_volume(pc1, PointCloud.from_array(*cloud(rng, 2)), cv, params)


def test_features_are_required(rng, volume):
    cv, params = volume
    with pytest.raises(PointCloudError):
        attentive_cost_volume(PointCloud.from_array(rng.normal(size=(9, 3))),
                              PointCloud.from_array(*cloud(rng, 9)), cv, params)


def test_single_neighbour_finds_the_true_correspondence(rng):
    # unit grid, motion well under half the spacing
    grid = np.stack(np.meshgrid(*[np.arange(-2.0, 3.0)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    motion = pose_to_matrix(Pose(axis_angle_to_quat((0.2, 1.0, 0.1), np.deg2rad(2.0)), [0.05, -0.03, 0.08]))
    perm = rng.permutation(len(grid))
    moved = transform_points(motion, grid)[perm]
    f = rng.normal(size=(len(grid), 2))
    pc1, pc2 = PointCloud.from_array(grid, f), PointCloud.from_array(moved, f[perm])
    assert_array_equal(perm[knn(pc1, pc2, 1)[:, 0]], np.arange(len(grid)))

    cv = CostVolumeParams.build("cv", 1, 4, feature_width=2, hidden=6, out=5)
    registry = ParameterRegistry()
    cv.init(registry, rng)
    params = registry.constants()
    ordered = PointCloud.from_array(transform_points(motion, grid), f)
    assert_allclose(attentive_cost_volume(pc1, pc2, cv, params).data,
                    attentive_cost_volume(pc1, ordered, cv, params).data, atol=1e-12)


def test_one_neighbour_gets_all_the_weight(rng):
    assert_array_equal(attention_weights(Tensor(rng.normal(size=(4, 1, 3)))).data, np.ones((4, 1, 3)))


def test_attention_ignores_a_per_channel_shift(rng):
    logits = rng.normal(size=(5, 4, 3))
    shift = rng.normal(scale=10.0, size=(5, 1, 3))
    assert_allclose(attention_weights(Tensor(logits + shift)).data, attention_weights(Tensor(logits)).data,
                    atol=1e-12)
