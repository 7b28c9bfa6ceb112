import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.core import geom, headmask
from app.core.errors import ConfigError, ShapeError
from app.core.gradcheck import toy_refine_params
from app.core.headmask import LevelState, PoseHead, make_mask, pose_head, uniform_mask, warp_refine
from app.core.layers import Mlp
from app.core.net import PwcloNet
from app.core.tensor import ParameterRegistry, Tensor
from app.models.pointcloud import PointCloud
from app.models.pose import Quaternion


@pytest.fixture
def coarse_level(tiny_run, tiny_pairs):
    net = PwcloNet(tiny_run.net)
    params = net.init_parameters(0).constants()
    pair = tiny_pairs[0]
    p1 = net.build_pyramid(pair.pc1, params)
    p2 = net.build_pyramid(pair.pc2, params)
    return net, params, p1, p2, net.initial_state(p1, p2, params)


def test_mask_columns_sum_to_one(rng):
    mlp = Mlp("m", (5 + 3, 6, 5), activate_last=False)
    registry = ParameterRegistry()
    mlp.init(registry, rng)
    mask = make_mask(Tensor(rng.normal(size=(11, 5))), Tensor(rng.normal(size=(11, 3))), None, mlp,
                     registry.constants())
    assert mask.shape == (11, 5)
    assert np.all(mask.data > 0)
    assert_allclose(mask.data.sum(axis=0), 1.0)


def test_mask_prior_rows_must_match(rng):
    mlp = Mlp("m", (2 + 2 + 1, 2))
    with pytest.raises(ShapeError):
        make_mask(Tensor(np.zeros((4, 2))), Tensor(np.zeros((4, 1))), Tensor(np.zeros((3, 2))), mlp, {})


def test_uniform_mask():
    assert_allclose(uniform_mask(4, 3).data, 0.25)


def test_fresh_pose_head_is_near_identity(rng):
    head = PoseHead.build("h", 6, (8, 8))
    registry = ParameterRegistry()
    head.init(registry, rng)
    embedding = Tensor(rng.normal(size=(10, 6)))
    q, t = pose_head(embedding, uniform_mask(10, 6), head, registry.constants())
    assert np.linalg.norm(q.data) == pytest.approx(1.0)
    pose = geom.pose_from_tensors(q, t)
    assert geom.quat_angle_between(pose.q, Quaternion.identity()) < 0.1
    assert np.linalg.norm(t.data) < 0.1


def test_pose_head_checks_mask_shape():
    head = PoseHead.build("h", 4, (4,))
    with pytest.raises(ShapeError):
        pose_head(Tensor(np.zeros((5, 4))), Tensor(np.zeros((5, 3))), head, {})


def test_pose_head_output_widths():
    with pytest.raises(ShapeError):
        PoseHead(Mlp("q", (4, 3)), Mlp("t", (4, 3)))


def test_refined_level_state(coarse_level):
    net, params, p1, p2, coarse = coarse_level
    state = warp_refine(coarse, p1.levels[2], p2.levels[2], net.refine[3], params)
    n, emb = len(p1.levels[2]), net.config.embedding_channels
    assert state.embedding.shape == (n, emb)
    assert_allclose(state.mask.data.sum(axis=0), 1.0)
    assert np.linalg.norm(state.q.data) == pytest.approx(1.0)
    weights = state.mask_weights()
    assert weights.shape == (n, 4)
    assert weights[:, 3].sum() == pytest.approx(emb)


def test_identity_coarse_pose_makes_warping_a_no_op(coarse_level):
    net, params, p1, p2, coarse = coarse_level
    coarse = dataclasses.replace(coarse, q=Tensor([1.0, 0.0, 0.0, 0.0]), t=Tensor(np.zeros(3)))
    warped = warp_refine(coarse, p1.levels[2], p2.levels[2], net.refine[3], params, warp=True)
    plain = warp_refine(coarse, p1.levels[2], p2.levels[2], net.refine[3], params, warp=False)
    assert_allclose(warped.embedding.data, plain.embedding.data)
    assert_allclose(warped.q.data, plain.q.data)


def test_mask_off_pools_uniformly(coarse_level):
    net, params, p1, p2, coarse = coarse_level
    state = warp_refine(coarse, p1.levels[2], p2.levels[2], net.refine[3], params, mask_mode="off")
    assert_allclose(state.mask.data, 1.0 / len(p1.levels[2]))


def test_unknown_mask_mode(coarse_level):
    net, params, p1, p2, coarse = coarse_level
    with pytest.raises(ConfigError, match="sometimes"):
        warp_refine(coarse, p1.levels[2], p2.levels[2], net.refine[3], params, mask_mode="sometimes")


def test_level_state_rows_must_agree(coarse_level):
    *_, coarse = coarse_level
    with pytest.raises(ShapeError):
        LevelState(coarse.pc1, coarse.pc2, coarse.embedding, uniform_mask(1, 1), coarse.q, coarse.t)


@pytest.fixture
def toy_level(rng, tiny_pairs):
    """A 16-point coarse level over a 64-point rigid pair, coarse pose set to the ground truth."""
    pair = tiny_pairs[0]
    wr = toy_refine_params(c=3, emb=4)
    registry = ParameterRegistry()
    wr.init(registry, rng)
    pc1 = pair.pc1.with_features(Tensor(rng.normal(size=(64, 3))))
    pc2 = pair.pc2.with_features(Tensor(rng.normal(size=(64, 3))))
    sparse = PointCloud(pair.pc1.select(np.arange(0, 64, 4)).coords)
    coarse = LevelState(sparse, sparse, Tensor(rng.normal(size=(16, 4))), uniform_mask(16, 4),
                        Tensor(pair.gt.q.as_array()), Tensor(pair.gt.t))
    return pair, wr, registry.constants(), pc1, pc2, coarse


def test_pose_head_ignores_joint_row_order(rng):
    head = PoseHead.build("h", 6, (8, 8))
    registry = ParameterRegistry()
    head.init(registry, rng)
    params = registry.constants()
    embedding = rng.normal(size=(12, 6))
    mask = rng.uniform(0.1, 1.0, size=(12, 6))
    mask /= mask.sum(axis=0)
    perm = rng.permutation(12)
    q, t = pose_head(Tensor(embedding), Tensor(mask), head, params)
    q_p, t_p = pose_head(Tensor(embedding[perm]), Tensor(mask[perm]), head, params)
    assert_allclose(q_p.data, q.data, atol=1e-9)
    assert_allclose(t_p.data, t.data, atol=1e-9)


def test_ground_truth_coarse_pose_warps_pc1_onto_pc2(toy_level, monkeypatch):
    pair, wr, params, pc1, pc2, coarse = toy_level
    seen = []
    original = headmask.attentive_cost_volume

    def recording(first, second, cv, p):
        seen.append(first.xyz.copy())
        return original(first, second, cv, p)

    monkeypatch.setattr(headmask, "attentive_cost_volume", recording)
    warp_refine(coarse, pc1, pc2, wr, params)
    assert len(seen) == 1
    assert_allclose(seen[0], pair.pc2.xyz, rtol=0, atol=1e-9)


def test_refined_pose_is_residual_after_coarse(toy_level, rng):
    _, wr, params, pc1, pc2, coarse = toy_level
    state = warp_refine(coarse, pc1, pc2, wr, params)
    dq, dt = pose_head(state.embedding, state.mask, wr.head, params)
    residual = geom.pose_from_tensors(dq, dt)
    expected = geom.pose_compose(residual, coarse.pose)
    assert_allclose(state.pose.q.as_array(), expected.q.as_array(), atol=1e-9)
    assert_allclose(state.pose.t, expected.t, atol=1e-9)

    points = rng.normal(size=(5, 3))
    stepwise = geom.rotate_point(residual.q, residual.t, geom.rotate_point(coarse.pose.q, coarse.pose.t, points))
    assert_allclose(geom.rotate_point(state.pose.q, state.pose.t, points), stepwise, atol=1e-9)
