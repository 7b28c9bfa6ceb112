"""
Synthetic rigid-motion frame pairs for desk-scale training.

A dataset directory holds `index.txt` and one text point list per frame:

    PWCLO-SYNTH 1
    count <n>
    <id> <pc1 file> <pc2 file> <qw> <qx> <qy> <qz> <tx> <ty> <tz>
    ...

Point files have one `x y z` row per point. Values are written with 17
significant digits so a dataset reads back bit-exactly.
"""

import io
import logging
import os
from pathlib import Path

import numpy as np

from app.core.errors import DataFormatError, GeometryError, PointCloudError
from app.core.geom import axis_angle_to_quat, pose_to_matrix, transform_points
from app.core.util import atomic_write_text
from app.models.pointcloud import FramePair, PointCloud
from app.models.pose import Pose, Quaternion

logger = logging.getLogger(__name__)

INDEX_NAME = "index.txt"
INDEX_MAGIC = "PWCLO-SYNTH"
INDEX_VERSION = 1

SCENE_HALF_WIDTH = 10.0
PLANE_HALF_SIZE = 5.0
NUM_PLANES = 3
PLANE_FRACTION = 0.7


def _scene_points(n: int, rng: np.random.Generator) -> np.ndarray:
    n_plane = int(n * PLANE_FRACTION)
    counts = np.full(NUM_PLANES, n_plane // NUM_PLANES)
    counts[: n_plane % NUM_PLANES] += 1
    chunks = []
    for count in counts:
        center = rng.uniform(-SCENE_HALF_WIDTH / 2, SCENE_HALF_WIDTH / 2, size=3)
        normal = rng.normal(size=3)
        normal /= np.linalg.norm(normal)
        u = np.cross(normal, [1.0, 0.0, 0.0] if abs(normal[0]) < 0.9 else [0.0, 1.0, 0.0])
        u /= np.linalg.norm(u)
        v = np.cross(normal, u)
        ab = rng.uniform(-PLANE_HALF_SIZE, PLANE_HALF_SIZE, size=(count, 2))
        chunks.append(center + ab[:, :1] * u + ab[:, 1:] * v)
    chunks.append(rng.uniform(-SCENE_HALF_WIDTH, SCENE_HALF_WIDTH, size=(n - n_plane, 3)))
    return np.concatenate(chunks, axis=0)


def synth_scene(n_points: int, max_rot_deg: float, max_trans: float, noise_sigma: float = 0.0,
                seed=None, dropout: float = 0.0) -> FramePair:
    """
    Planes plus clutter as PC1; PC2 is PC1 moved by a random pose within the
    bounds, with optional Gaussian noise and point dropout on PC2.
    Without noise and dropout, row i of PC2 is row i of PC1 moved by `gt`.
    """
    if n_points < 8:
        raise PointCloudError(f"synth_scene needs at least 8 points, got {n_points}")
    if not 0.0 <= dropout < 1.0:
        raise PointCloudError(f"dropout {dropout} outside [0, 1)")
    rng = np.random.default_rng(seed)
    pc1 = _scene_points(n_points, rng)

    angle = np.deg2rad(max_rot_deg) * rng.uniform(-1.0, 1.0)
    q = axis_angle_to_quat(rng.normal(size=3), angle) if angle else Quaternion.identity()
    direction = rng.normal(size=3)
    t = direction / np.linalg.norm(direction) * rng.uniform(0.0, max_trans)
    gt = Pose(q, t)

    pc2 = transform_points(pose_to_matrix(gt), pc1)
    if noise_sigma > 0:
        pc2 = pc2 + rng.normal(0.0, noise_sigma, size=pc2.shape)
    if dropout > 0:
        keep = rng.random(len(pc2)) >= dropout
        if not keep.any():
            keep[0] = True
        pc2 = pc2[keep]
    return FramePair(PointCloud.from_array(pc1), PointCloud.from_array(pc2), gt, "synth", 0)


def generate_dataset(count: int, seed: int, n_points: int, max_rot_deg: float, max_trans: float,
                     noise_sigma: float = 0.0, dropout: float = 0.0) -> list[FramePair]:
    pairs = []
    for i in range(count):
        pair = synth_scene(n_points, max_rot_deg, max_trans, noise_sigma, seed=[seed, i], dropout=dropout)
        pairs.append(FramePair(pair.pc1, pair.pc2, pair.gt, "synth", i))
    return pairs


def _points_text(xyz: np.ndarray) -> str:
    buf = io.StringIO()
    np.savetxt(buf, xyz, fmt="%.17g")
    return buf.getvalue()


def write_synth_dataset(out_dir: str | os.PathLike, pairs: list[FramePair]) -> Path:
    out = Path(out_dir)
    (out / "points").mkdir(parents=True, exist_ok=True)
    lines = [f"{INDEX_MAGIC} {INDEX_VERSION}", f"count {len(pairs)}"]
    for i, pair in enumerate(pairs):
        names = []
        for which, pc in (("1", pair.pc1), ("2", pair.pc2)):
            name = f"points/{i:06d}_{which}.txt"
            atomic_write_text(out / name, _points_text(pc.xyz))
            names.append(name)
        values = (*pair.gt.q.as_array(), *pair.gt.t)
        lines.append(f"{i:06d} {names[0]} {names[1]} " + " ".join(f"{v:.17g}" for v in values))
    atomic_write_text(out / INDEX_NAME, "\n".join(lines) + "\n")
    logger.info("wrote %d synthetic pairs to %s", len(pairs), out)
    return out / INDEX_NAME


def _read_points(path: Path) -> PointCloud:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e
    if not text.strip():
        return PointCloud.from_array(np.zeros((0, 3)))
    try:
        xyz = np.loadtxt(io.StringIO(text), dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise DataFormatError(f"{path}: {e}") from None
    if xyz.shape[1] != 3:
        raise DataFormatError(f"{path}: rows have {xyz.shape[1]} values, expected 3")
    try:
        return PointCloud.from_array(xyz)
    except PointCloudError as e:
        raise DataFormatError(f"{path}: {e.detail}") from None


def read_synth_dataset(root: str | os.PathLike) -> list[FramePair]:
    root = Path(root)
    index = root / INDEX_NAME
    try:
        lines = index.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataFormatError(f"cannot read {index}: {e}") from e
    if not lines or lines[0].split() != [INDEX_MAGIC, str(INDEX_VERSION)]:
        raise DataFormatError(f"{index}: missing '{INDEX_MAGIC} {INDEX_VERSION}' header")
    head = lines[1].split() if len(lines) > 1 else []
    if len(head) != 2 or head[0] != "count" or not head[1].isdigit():
        raise DataFormatError(f"{index}: malformed count line")
    count = int(head[1])
    body = [line for line in lines[2:] if line.strip()]
    if len(body) != count:
        raise DataFormatError(f"{index}: header says {count} pairs, found {len(body)}")

    pairs = []
    for i, line in enumerate(body):
        parts = line.split()
        if len(parts) != 10:
            raise DataFormatError(f"{index}: pair line {i} has {len(parts)} fields, expected 10")
        try:
            values = [float(v) for v in parts[3:]]
            gt = Pose(Quaternion(*values[:4]), values[4:])
        except ValueError:
            raise DataFormatError(f"{index}: pair line {i} has a non-numeric pose") from None
        except GeometryError as e:
            raise DataFormatError(f"{index}: pair line {i}: {e}") from None
        pairs.append(FramePair(_read_points(root / parts[1]), _read_points(root / parts[2]), gt, "synth", i))
    return pairs
