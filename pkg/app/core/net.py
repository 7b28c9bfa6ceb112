import logging
from dataclasses import dataclass

import numpy as np

from app.core.costvol import CostVolumeParams, attentive_cost_volume
from app.core.errors import ConfigError, PointCloudError
from app.core.headmask import (
    LevelState,
    PoseHead,
    WarpRefineParams,
    make_mask,
    pose_head,
    uniform_mask,
    warp_refine,
)
from app.core.layers import Mlp
from app.core.pcops import farthest_point_sample, set_conv
from app.core.tensor import ParameterRegistry
from app.models.config import NetConfig
from app.models.pointcloud import PointCloud
from app.models.pose import Pose

logger = logging.getLogger(__name__)

# Registry entries with this prefix belong to the loss, not the network
LOSS_PREFIX = "loss."


@dataclass(frozen=True)
class NetOutput:
    """Level states from the coarsest output to the finest."""

    levels: list[LevelState]

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def finest(self) -> LevelState:
        return self.levels[-1]

    @property
    def coarsest(self) -> LevelState:
        return self.levels[0]

    def level(self, l: int) -> LevelState:
        """Output level `l`, 1 being the finest."""
        if not 1 <= l <= len(self.levels):
            raise IndexError(f"no output level {l} (have {len(self.levels)})")
        return self.levels[len(self.levels) - l]

    @property
    def poses(self) -> list[Pose]:
        """Poses by level, finest (l = 1) first."""
        return [self.level(l).pose for l in range(1, len(self.levels) + 1)]


@dataclass(frozen=True)
class Pyramid:
    levels: list[PointCloud]
    centers: list[np.ndarray]


def count_parameters(registry: ParameterRegistry) -> int:
    return registry.num_trainable()


class PwcloNet:
    """
    Siamese four-level point pyramid, an initial embedding with mask and pose,
    and warp-refinement down to the finest level.
    """

    def __init__(self, config: NetConfig):
        self.config = config
        c = config.level_channels
        emb = config.embedding_channels
        attentive = config.cost_volume == "attentive"

        self.pyramid = [Mlp("pyramid.1", (3, c[0], c[0]))]
        for l in range(1, 4):
            self.pyramid.append(Mlp(f"pyramid.{l + 1}", (3 + 2 * c[l - 1], c[l], c[l])))

        first = config.first_level
        self.first_cost = CostVolumeParams.build(
            f"cost.{first}", config.cost_k1, config.cost_k2, c[first - 1], config.cost_hidden, emb, attentive
        )
        self.initial_embed = None
        if first == 3:
            self.initial_embed = Mlp("initial.embed", (3 + 2 * emb, emb, emb))
        self.initial_mask = None
        if config.mask_enabled:
            self.initial_mask = Mlp("initial.mask", (emb + c[3], config.mask_hidden, emb), activate_last=False)
        self.initial_head = PoseHead.build("initial.head", emb, config.fc_hidden)

        self.refine: dict[int, WarpRefineParams] = {}
        if config.refinement_enabled:
            for l in (3, 2, 1):
                self.refine[l] = self._refine_blocks(l)

    def _refine_blocks(self, l: int) -> WarpRefineParams:
        cfg = self.config
        c = cfg.level_channels[l - 1]
        emb = cfg.embedding_channels
        name = f"refine.{l}"
        mode = cfg.mask_mode
        mask_mlp = upconv_m1 = upconv_m2 = None
        if mode != "off":
            prior = emb if mode == "hierarchical" else 0
            mask_mlp = Mlp(f"{name}.mask", (emb + prior + c, cfg.mask_hidden, emb), activate_last=False)
        if mode == "hierarchical":
            upconv_m1 = Mlp(f"{name}.up_m1", (3 + emb, emb, emb))
            upconv_m2 = Mlp(f"{name}.up_m2", (emb + c, emb))
        return WarpRefineParams(
            upconv_e1=Mlp(f"{name}.up_e1", (3 + emb, emb, emb)),
            upconv_e2=Mlp(f"{name}.up_e2", (emb + c, emb)),
            k_up=cfg.upconv_k,
            cost=CostVolumeParams.build(f"{name}.cost", cfg.cost_k1, cfg.cost_k2, c, cfg.cost_hidden, emb,
                                        cfg.cost_volume == "attentive"),
            embed_mlp=Mlp(f"{name}.embed", (2 * emb + c, emb, emb)),
            head=PoseHead.build(f"{name}.head", emb, cfg.fc_hidden),
            mask_mlp=mask_mlp,
            upconv_m1=upconv_m1,
            upconv_m2=upconv_m2,
        )

    def init_parameters(self, rng: np.random.Generator | int = 0) -> ParameterRegistry:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        registry = ParameterRegistry()
        for block in self.pyramid:
            block.init(registry, rng)
        self.first_cost.init(registry, rng)
        for block in (self.initial_embed, self.initial_mask):
            if block is not None:
                block.init(registry, rng)
        self.initial_head.init(registry, rng)
        for l in sorted(self.refine, reverse=True):
            self.refine[l].init(registry, rng)
        return registry

    def check_parameters(self, registry: ParameterRegistry) -> None:
        """Reject a registry whose network entries differ from this config's layout."""
        expected = self.init_parameters(0).shapes()
        found = {k: v for k, v in registry.shapes().items() if not k.startswith(LOSS_PREFIX)}
        diff = [f"missing {k} {expected[k]}" for k in expected if k not in found]
        diff += [f"unexpected {k} {found[k]}" for k in found if k not in expected]
        diff += [
            f"{k}: checkpoint {found[k]} vs config {expected[k]}"
            for k in expected if k in found and found[k] != expected[k]
        ]
        if diff:
            shown = "; ".join(diff[:8]) + (f"; ... {len(diff) - 8} more" if len(diff) > 8 else "")
            raise ConfigError(f"parameters do not match the network config: {shown}")

    def build_pyramid(self, pc: PointCloud, params, rng: np.random.Generator | None = None) -> Pyramid:
        cfg = self.config
        start = None if cfg.fps_random_start else 0
        cloud = PointCloud(pc.coords)
        levels, centers = [], []
        for n, block in zip(cfg.level_points, self.pyramid):
            idx = farthest_point_sample(cloud, n, start, rng)
            cloud = set_conv(cloud, n, cfg.pyramid_k, block, params, centers=idx)
            levels.append(cloud)
            centers.append(idx)
        return Pyramid(levels, centers)

    def initial_state(self, p1: Pyramid, p2: Pyramid, params) -> LevelState:
        cfg = self.config
        pc1, pc2 = p1.levels[3], p2.levels[3]
        if self.initial_embed is not None:
            pc1_3 = p1.levels[2]
            e3 = attentive_cost_volume(pc1_3, p2.levels[2], self.first_cost, params)
            carried = set_conv(pc1_3.with_features(e3), len(pc1), cfg.pyramid_k, self.initial_embed, params,
                               centers=p1.centers[3])
            embedding = carried.features
        else:
            embedding = attentive_cost_volume(pc1, pc2, self.first_cost, params)

        if self.initial_mask is None:
            mask = uniform_mask(*embedding.shape)
        else:
            mask = make_mask(embedding, pc1.features, None, self.initial_mask, params)
        q, t = pose_head(embedding, mask, self.initial_head, params)
        return LevelState(pc1, pc2, embedding, mask, q, t)

    def forward(self, pc1: PointCloud, pc2: PointCloud, params,
                rng: np.random.Generator | None = None) -> NetOutput:
        cfg = self.config
        for name, pc in (("pc1", pc1), ("pc2", pc2)):
            if len(pc) != cfg.n_points:
                raise PointCloudError(f"{name} has {len(pc)} points, the network expects {cfg.n_points}")
        p1 = self.build_pyramid(pc1, params, rng)
        p2 = self.build_pyramid(pc2, params, rng)

        state = self.initial_state(p1, p2, params)
        levels = [state]
        for l in sorted(self.refine, reverse=True):
            state = warp_refine(state, p1.levels[l - 1], p2.levels[l - 1], self.refine[l], params,
                                warp=cfg.warp_enabled, mask_mode=cfg.mask_mode)
            levels.append(state)
        return NetOutput(levels)

    def infer(self, pc1: PointCloud, pc2: PointCloud, registry: ParameterRegistry,
              rng: np.random.Generator | None = None) -> NetOutput:
        return self.forward(pc1, pc2, registry.constants(), rng)
