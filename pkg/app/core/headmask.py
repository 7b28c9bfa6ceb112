import logging
from dataclasses import dataclass

import numpy as np

from app.core import tensor as T
from app.core.costvol import CostVolumeParams, attentive_cost_volume
from app.core.errors import ConfigError, ShapeError
from app.core.geom import compose_tensors, normalize_quat, pose_from_tensors, warp_points
from app.core.layers import Mlp
from app.core.pcops import set_upconv
from app.core.tensor import Tensor
from app.models.pointcloud import PointCloud
from app.models.pose import Pose

logger = logging.getLogger(__name__)

MASK_MODES = ("hierarchical", "independent", "off")

# q-head starts near the identity rotation
Q_HEAD_BIAS = (1.0, 0.0, 0.0, 0.0)
HEAD_LAST_SCALE = 0.01


def _require_rows(what: str, *tensors: Tensor) -> None:
    rows = {t.shape[0] for t in tensors}
    if len(rows) > 1:
        raise ShapeError(f"{what}: row counts differ: {[t.shape for t in tensors]}")


def make_mask(embedding: Tensor, f1: Tensor, prior: Tensor | None, mlp: Mlp, params) -> Tensor:
    """Per-point, per-channel weights; every column sums to 1 over the points."""
    parts = [embedding] if prior is None else [embedding, prior]
    parts.append(f1)
    _require_rows("make_mask", *parts)
    return T.softmax(mlp(params, T.concat(parts, axis=1)), axis=0)


def uniform_mask(n: int, c: int) -> Tensor:
    """Average-pooling stand-in for a disabled mask."""
    return Tensor(np.full((n, c), 1.0 / n))


@dataclass(frozen=True)
class PoseHead:
    fc_q: Mlp
    fc_t: Mlp

    def __post_init__(self):
        if self.fc_q.out_width != 4 or self.fc_t.out_width != 3:
            raise ShapeError(
                f"pose head outputs must be 4 and 3 wide, got {self.fc_q.out_width} and {self.fc_t.out_width}"
            )

    @classmethod
    def build(cls, name: str, width: int, hidden: tuple[int, ...]) -> "PoseHead":
        return cls(
            Mlp(f"{name}.fc_q", (width, *hidden, 4), activate_last=False),
            Mlp(f"{name}.fc_t", (width, *hidden, 3), activate_last=False),
        )

    def init(self, registry, rng: np.random.Generator) -> None:
        self.fc_q.init(registry, rng, last_scale=HEAD_LAST_SCALE, last_bias=Q_HEAD_BIAS)
        self.fc_t.init(registry, rng, last_scale=HEAD_LAST_SCALE)


def pose_head(embedding: Tensor, mask: Tensor, head: PoseHead, params) -> tuple[Tensor, Tensor]:
    """Mask-weighted sum of embeddings through the q and t FC stacks; q is unit norm."""
    if embedding.shape != mask.shape:
        raise ShapeError(f"pose_head: embedding {embedding.shape} vs mask {mask.shape}")
    pooled = T.reduce_sum(embedding * mask, axis=0, keepdims=True)
    q = normalize_quat(T.reshape(head.fc_q(params, pooled), (4,)))
    t = T.reshape(head.fc_t(params, pooled), (3,))
    return q, t


@dataclass(frozen=True)
class LevelState:
    """Everything one pyramid level hands to the next finer one."""

    pc1: PointCloud
    pc2: PointCloud
    embedding: Tensor
    mask: Tensor
    q: Tensor
    t: Tensor

    def __post_init__(self):
        _require_rows("level state", self.pc1.coords, self.embedding, self.mask)

    @property
    def pose(self) -> Pose:
        return pose_from_tensors(self.q, self.t)

    def mask_weights(self) -> np.ndarray:
        """(n,4): coordinates and the channel-summed mask weight per point."""
        return np.column_stack([self.pc1.xyz, self.mask.data.sum(axis=1)])


@dataclass(frozen=True)
class WarpRefineParams:
    """Blocks of one refinement level; mask blocks are None when the mode does not use them."""

    upconv_e1: Mlp
    upconv_e2: Mlp
    k_up: int
    cost: CostVolumeParams
    embed_mlp: Mlp
    head: PoseHead
    mask_mlp: Mlp | None = None
    upconv_m1: Mlp | None = None
    upconv_m2: Mlp | None = None

    def init(self, registry, rng: np.random.Generator) -> None:
        self.upconv_e1.init(registry, rng)
        self.upconv_e2.init(registry, rng)
        self.cost.init(registry, rng)
        self.embed_mlp.init(registry, rng)
        for block in (self.mask_mlp, self.upconv_m1, self.upconv_m2):
            if block is not None:
                block.init(registry, rng)
        self.head.init(registry, rng)


def warp_refine(coarse: LevelState, pc1: PointCloud, pc2: PointCloud, wr: WarpRefineParams, params,
                warp: bool = True, mask_mode: str = "hierarchical") -> LevelState:
    """
    One refinement level: propagate the coarse embedding and mask up, warp PC1
    by the coarse pose, re-associate, refine the embedding and mask, regress a
    residual pose and compose it onto the coarse one.

    `pc1` carries the level's pyramid features; the upward propagation runs on
    the unwarped frame-1 coordinates of both levels.
    """
    if mask_mode not in MASK_MODES:
        raise ConfigError(f"unknown mask mode '{mask_mode}'")

    coarse_embedding = PointCloud(coarse.pc1.coords, coarse.embedding)
    ce = set_upconv(pc1, coarse_embedding, wr.k_up, wr.upconv_e1, wr.upconv_e2, params)

    warped = warp_points(coarse.q, coarse.t, pc1.coords) if warp else pc1.coords
    re = attentive_cost_volume(pc1.with_coords(warped), pc2, wr.cost, params)

    embedding = wr.embed_mlp(params, T.concat([ce, re, pc1.features], axis=1))

    if mask_mode == "off":
        mask = uniform_mask(*embedding.shape)
    else:
        if wr.mask_mlp is None:
            raise ConfigError(f"mask mode '{mask_mode}' needs a mask block")
        prior = None
        if mask_mode == "hierarchical":
            if wr.upconv_m1 is None:
                raise ConfigError("hierarchical mask needs the mask set upconv blocks")
            prior = set_upconv(pc1, PointCloud(coarse.pc1.coords, coarse.mask), wr.k_up,
                               wr.upconv_m1, wr.upconv_m2, params)
        mask = make_mask(embedding, pc1.features, prior, wr.mask_mlp, params)

    dq, dt = pose_head(embedding, mask, wr.head, params)
    q, t = compose_tensors(dq, dt, coarse.q, coarse.t)
    return LevelState(pc1, pc2, embedding, mask, q, t)
