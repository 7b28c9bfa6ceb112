import logging

import numpy as np

from app.core import tensor as T
from app.core.errors import PointCloudError
from app.core.layers import Mlp
from app.core.tensor import Tensor
from app.models.pointcloud import PointCloud

logger = logging.getLogger(__name__)

# Query rows per distance block in knn
KNN_CHUNK = 512


def _require_points(pc: PointCloud, what: str) -> None:
    if len(pc) == 0:
        raise PointCloudError(f"{what}: point cloud is empty")


def farthest_point_sample(pc: PointCloud, m: int, start: int | None = 0,
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """
    Greedy max-min subset of `m` row indices.

    `start=None` draws the first pick from `rng`; otherwise the first pick is
    `start`. Later picks maximise the distance to the chosen set, lowest index
    on ties.
    """
    _require_points(pc, "farthest_point_sample")
    n = len(pc)
    if not 1 <= m <= n:
        raise PointCloudError(f"farthest_point_sample: m={m} outside [1, {n}]")
    if start is None:
        start = int((rng or np.random.default_rng()).integers(n))
    if not 0 <= start < n:
        raise PointCloudError(f"farthest_point_sample: start {start} outside [0, {n})")

    xyz = pc.xyz
    chosen = np.empty(m, dtype=np.intp)
    chosen[0] = start
    dist = np.full(n, np.inf)
    for i in range(1, m):
        d = np.sum((xyz - xyz[chosen[i - 1]]) ** 2, axis=1)
        np.minimum(dist, d, out=dist)
        dist[chosen[:i]] = -1.0
        chosen[i] = int(np.argmax(dist))
    return chosen


def knn(query: PointCloud, reference: PointCloud, k: int) -> np.ndarray:
    """Exact Euclidean k nearest reference rows per query row, nearest first, ties by index."""
    _require_points(query, "knn")
    _require_points(reference, "knn")
    if not 1 <= k <= len(reference):
        raise PointCloudError(f"knn: k={k} outside [1, {len(reference)}]")
    q, r = query.xyz, reference.xyz
    out = np.empty((len(q), k), dtype=np.intp)
    for lo in range(0, len(q), KNN_CHUNK):
        block = q[lo:lo + KNN_CHUNK]
        d = np.sum((block[:, None, :] - r[None, :, :]) ** 2, axis=2)
        out[lo:lo + KNN_CHUNK] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def group_relative(coords: Tensor, neighbors: np.ndarray, centers: Tensor) -> Tensor:
    """(m,k,3) neighbour coordinates relative to their center."""
    m = centers.shape[0]
    return T.gather_rows(coords, neighbors) - T.reshape(centers, (m, 1, 3))


def repeat_rows(x: Tensor, k: int) -> Tensor:
    """(m,c) -> (m,k,c), each row repeated for its k neighbours."""
    m, c = x.shape
    return T.broadcast_to(T.reshape(x, (m, 1, c)), (m, k, c))


def set_conv(pc: PointCloud, m: int, k: int, mlp: Mlp, params,
             centers: np.ndarray | None = None, fps_start: int | None = 0,
             rng: np.random.Generator | None = None) -> PointCloud:
    """
    Sample `m` centers (FPS unless `centers` is given), group `k` neighbours,
    encode (x_k - x) ⊕ f_k ⊕ f_c with a shared MLP and max-pool over the group.
    """
    _require_points(pc, "set_conv")
    if centers is None:
        centers = farthest_point_sample(pc, m, fps_start, rng)
    centers = np.asarray(centers, dtype=np.intp)
    center_pc = pc.select(centers)
    neighbors = knn(center_pc, pc, k)

    parts = [group_relative(pc.coords, neighbors, center_pc.coords)]
    if pc.features is not None:
        parts.append(T.gather_rows(pc.features, neighbors))
        parts.append(repeat_rows(center_pc.features, k))
    grouped = T.concat(parts, axis=2) if len(parts) > 1 else parts[0]
    return PointCloud(center_pc.coords, T.reduce_max(mlp(params, grouped), axis=1))


def set_upconv(dense: PointCloud, sparse: PointCloud, k: int, mlp1: Mlp, mlp2: Mlp | None,
               params) -> Tensor:
    """Carry sparse features onto every dense point; returns (len(dense), c)."""
    _require_points(dense, "set_upconv")
    _require_points(sparse, "set_upconv")
    if sparse.features is None:
        raise PointCloudError("set_upconv: sparse cloud has no features")
    neighbors = knn(dense, sparse, k)
    grouped = T.concat([
        group_relative(sparse.coords, neighbors, dense.coords),
        T.gather_rows(sparse.features, neighbors),
    ], axis=2)
    h = T.reduce_max(mlp1(params, grouped), axis=1)
    if dense.features is not None:
        h = T.concat([h, dense.features], axis=1)
    return h if mlp2 is None else mlp2(params, h)


def random_sample(pc: PointCloud, n: int, seed=None, rng: np.random.Generator | None = None) -> PointCloud:
    """Uniform rows, without replacement when the cloud is large enough."""
    if len(pc) == 0:
        raise PointCloudError("random_sample: point cloud is empty")
    if n < 1:
        raise PointCloudError(f"random_sample: n={n} must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(seed)
    replace = len(pc) < n
    idx = rng.choice(len(pc), size=n, replace=replace)
    return pc.select(idx)
