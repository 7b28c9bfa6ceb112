"""
Two-stage attentive cost volume.

Stage one attends from every point of PC1 to its k1 nearest neighbours in
PC2 and produces point-to-point embeddings; stage two attends over the k2
nearest PC1 neighbours of every point to aggregate those embeddings into the
final per-point embedding features, in PC1 row order.
"""

from dataclasses import dataclass

import numpy as np

from app.core import tensor as T
from app.core.errors import PointCloudError, ShapeError
from app.core.layers import Mlp
from app.core.pcops import knn, repeat_rows
from app.core.tensor import Tensor
from app.models.pointcloud import PointCloud


@dataclass(frozen=True)
class CostVolumeParams:
    k1: int
    k2: int
    u1: Mlp
    v1: Mlp
    u2: Mlp
    v2: Mlp
    attentive: bool = True

    @classmethod
    def build(cls, name: str, k1: int, k2: int, feature_width: int, hidden: int, out: int,
              attentive: bool = True) -> "CostVolumeParams":
        """Blocks for clouds carrying `feature_width` features; outputs `out` channels."""
        stage1_in = edge_width(feature_width, feature_width)
        stage2_in = edge_width(feature_width, out)
        return cls(
            k1, k2,
            u1=Mlp(f"{name}.u1", (stage1_in, hidden, out), activate_last=False),
            v1=Mlp(f"{name}.v1", (stage1_in, hidden, out)),
            u2=Mlp(f"{name}.u2", (stage2_in, hidden, out), activate_last=False),
            v2=Mlp(f"{name}.v2", (stage2_in, hidden, out)),
            attentive=attentive,
        )

    def blocks(self) -> tuple[Mlp, ...]:
        return self.u1, self.v1, self.u2, self.v2

    def init(self, registry, rng: np.random.Generator) -> None:
        for block in self.blocks():
            block.init(registry, rng)


def edge_width(center_features: int, neighbor_features: int) -> int:
    return 3 + 1 + center_features + neighbor_features


def edge_features(center: Tensor, neighbor: Tensor, f_center: Tensor, f_neighbor: Tensor) -> Tensor:
    """(neighbor - center) ⊕ |neighbor - center| ⊕ f_center ⊕ f_neighbor, shape (m,k,w)."""
    m, k = neighbor.shape[0], neighbor.shape[1]
    if center.shape != (m, 3) or f_center.shape[0] != m or f_neighbor.shape[:2] != (m, k):
        raise ShapeError(
            f"edge inputs disagree: center {center.shape}, neighbor {neighbor.shape}, "
            f"f_center {f_center.shape}, f_neighbor {f_neighbor.shape}"
        )
    rel = neighbor - T.reshape(center, (m, 1, 3))
    return T.concat([rel, T.norm(rel, axis=2, keepdims=True), repeat_rows(f_center, k), f_neighbor], axis=2)


def attention_encode_u(center: Tensor, neighbor: Tensor, f_center: Tensor, f_neighbor: Tensor,
                       u: Mlp, params) -> Tensor:
    """Per-channel attention logits (m,k,c)."""
    return u(params, edge_features(center, neighbor, f_center, f_neighbor))


def feature_encode_v(center: Tensor, neighbor: Tensor, f_center: Tensor, f_neighbor: Tensor,
                     v: Mlp, params) -> Tensor:
    return v(params, edge_features(center, neighbor, f_center, f_neighbor))


def attention_weights(logits: Tensor, attentive: bool = True) -> Tensor:
    """Softmax over the neighbour axis; the non-attentive variant weights every neighbour 1/k."""
    if attentive:
        return T.softmax(logits, axis=1)
    return Tensor(np.full(logits.shape, 1.0 / logits.shape[1]))


def _attend(center: Tensor, neighbor: Tensor, f_center: Tensor, f_neighbor: Tensor,
            u: Mlp, v: Mlp, attentive: bool, params) -> Tensor:
    edges = edge_features(center, neighbor, f_center, f_neighbor)
    weights = attention_weights(u(params, edges), attentive)
    return T.reduce_sum(weights * v(params, edges), axis=1)


def attentive_cost_volume(pc1: PointCloud, pc2: PointCloud, cv: CostVolumeParams, params) -> Tensor:
    if len(pc1) == 0 or len(pc2) == 0:
        raise PointCloudError("cost volume needs two non-empty clouds")
    if pc1.features is None or pc2.features is None:
        raise PointCloudError("cost volume needs features on both clouds")
    if cv.k1 > len(pc2) or cv.k2 > len(pc1):
        raise PointCloudError(
            f"cost volume neighbours k1={cv.k1}, k2={cv.k2} exceed cloud sizes {len(pc2)}, {len(pc1)}"
        )

    # point-to-point: PC1 centers over PC2 neighbours
    nbr = knn(pc1, pc2, cv.k1)
    pe = _attend(pc1.coords, T.gather_rows(pc2.coords, nbr), pc1.features,
                 T.gather_rows(pc2.features, nbr), cv.u1, cv.v1, cv.attentive, params)

    # patch-to-patch: aggregate pe over PC1 neighbourhoods (coordinate space)
    nbr = knn(pc1, pc1, cv.k2)
    return _attend(pc1.coords, T.gather_rows(pc1.coords, nbr), pc1.features,
                   T.gather_rows(pe, nbr), cv.u2, cv.v2, cv.attentive, params)
