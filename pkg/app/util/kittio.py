"""
KITTI odometry files: Velodyne scans, calibration, ground-truth poses.

Layout under a dataset root:

    sequences/NN/velodyne/FFFFFF.bin
    sequences/NN/calib.txt
    poses/NN.txt
"""

import logging
import os
from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from app.core.errors import DataFormatError, GeometryError
from app.core.geom import (
    check_transform,
    euler_to_quat,
    matrix_to_pose,
    pose_compose,
    pose_inverse,
    pose_to_matrix,
    transform_points,
)
from app.core.util import atomic_write_text
from app.models.config import DataConfig
from app.models.pointcloud import FramePair, PointCloud
from app.models.pose import Pose

logger = logging.getLogger(__name__)

# KITTI text files carry about seven significant digits
CALIB_TOL = 1e-4

POINT_BYTES = 16

SPLITS: dict[str, tuple[list[int], list[int]]] = {
    "standard": (list(range(0, 7)), list(range(7, 11))),
    "lodonet": ([0, 1, 2, 3, 4, 5, 6, 9, 10], [7, 8]),
    "deeppco": ([0, 1, 2, 3, 5, 6, 7, 8, 9], [4, 10]),
    "unsupervised": (list(range(0, 9)), [9, 10]),
}


@dataclass(frozen=True)
class Calibration:
    """Velodyne to left-camera transform."""

    tr: np.ndarray

    @classmethod
    def identity(cls) -> "Calibration":
        return cls(np.eye(4))


def read_velodyne_bin(path: str | os.PathLike) -> PointCloud:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e
    if len(raw) % POINT_BYTES:
        raise DataFormatError(f"{path}: {len(raw)} bytes is not a whole number of points")
    xyz = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)[:, :3].astype(np.float64)
    finite = np.all(np.isfinite(xyz), axis=1)
    dropped = int(len(xyz) - finite.sum())
    if dropped:
        logger.warning("%s: dropped %d points with non-finite coordinates", path, dropped)
    return PointCloud.from_array(xyz[finite])


def _floats(values: list[str], where: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in values], dtype=np.float64)
    except ValueError:
        raise DataFormatError(f"{where}: non-numeric value") from None


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e


def _homogenize(values: np.ndarray, where: str) -> np.ndarray:
    m = np.eye(4)
    m[:3, :] = values.reshape(3, 4)
    try:
        return check_transform(m, CALIB_TOL)
    except GeometryError as e:
        raise DataFormatError(f"{where}: {e.detail}") from None


def read_calib(path: str | os.PathLike) -> Calibration:
    for lineno, line in enumerate(_read_text(path).splitlines(), 1):
        key, _, rest = line.partition(":")
        if key.strip() not in ("Tr", "Tr_velo_to_cam"):
            continue
        values = _floats(rest.split(), f"{path}:{lineno}")
        if values.size != 12:
            raise DataFormatError(f"{path}:{lineno}: Tr row has {values.size} values, expected 12")
        return Calibration(_homogenize(values, f"{path}:{lineno}"))
    raise DataFormatError(f"{path}: no 'Tr:' row")


def read_poses(path: str | os.PathLike) -> list[np.ndarray]:
    poses = []
    for lineno, line in enumerate(_read_text(path).splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 12:
            raise DataFormatError(f"{path}:{lineno}: {len(parts)} values, expected 12")
        m = np.eye(4)
        m[:3, :] = _floats(parts, f"{path}:{lineno}").reshape(3, 4)
        poses.append(m)
    return poses


def format_poses(poses: Sequence[np.ndarray | Pose]) -> str:
    lines = []
    for p in poses:
        m = pose_to_matrix(p) if isinstance(p, Pose) else np.asarray(p, dtype=np.float64)
        lines.append(" ".join(f"{v:.9e}" for v in m[:3, :].reshape(12)))
    return "".join(line + "\n" for line in lines)


def write_poses(path: str | os.PathLike, poses: Sequence[np.ndarray | Pose]) -> None:
    """KITTI pose file: one row-major 3x4 matrix per line."""
    atomic_write_text(path, format_poses(poses))


def filter_camera_points(xyz: np.ndarray, data: DataConfig = DataConfig()) -> np.ndarray:
    """Crop to the square around the vehicle and drop ground points (camera y points down)."""
    hw = data.crop_half_width
    keep = (np.abs(xyz[:, 0]) <= hw) & (np.abs(xyz[:, 2]) <= hw)
    if data.remove_ground:
        keep &= xyz[:, 1] <= data.sensor_height - data.ground_threshold
    return xyz[keep]


def preprocess(raw: PointCloud, calib: Calibration, data: DataConfig = DataConfig()) -> PointCloud:
    """Velodyne scan to cropped, ground-free camera-frame cloud (possibly empty)."""
    cam = transform_points(calib.tr, raw.xyz)
    return PointCloud.from_array(filter_camera_points(cam, data))


def rigid_inverse(m: np.ndarray) -> np.ndarray:
    inv = np.eye(4)
    r = m[:3, :3]
    inv[:3, :3] = r.T
    inv[:3, 3] = -(r.T @ m[:3, 3])
    return inv


def relative_gt(pose_i: np.ndarray, pose_j: np.ndarray) -> Pose:
    """Pose mapping frame-i coordinates into frame j: pose_j^-1 . pose_i."""
    return matrix_to_pose(rigid_inverse(np.asarray(pose_j)) @ np.asarray(pose_i), CALIB_TOL)


def augment(pair: FramePair, sigma_rot: float, sigma_trans: float, seed=None,
            rng: np.random.Generator | None = None) -> FramePair:
    """
    Random rigid motion applied to PC1 (angles in radians).

    PC1 becomes T_aug PC1, so the pose taking it onto PC2 is gt . T_aug^-1.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    yaw, pitch, roll = rng.normal(0.0, sigma_rot, size=3)
    t_aug = Pose(euler_to_quat(yaw, pitch, roll), rng.normal(0.0, sigma_trans, size=3))
    pc1 = PointCloud.from_array(transform_points(pose_to_matrix(t_aug), pair.pc1.xyz))
    gt = pose_compose(pair.gt, pose_inverse(t_aug))
    return FramePair(pc1, pair.pc2, gt, pair.sequence_id, pair.frame_index)


def split_sequences(name: str) -> tuple[list[str], list[str]]:
    """Train and test sequence ids of a named split."""
    try:
        train, test = SPLITS[name]
    except KeyError:
        raise DataFormatError(f"unknown split '{name}'") from None
    return [f"{s:02d}" for s in train], [f"{s:02d}" for s in test]


class KittiSequence(Sequence[FramePair]):
    """
    Consecutive frame pairs of one sequence, loaded on access.

    Without a poses file the pairs carry an identity ground truth and
    `has_ground_truth` is False.
    """

    def __init__(self, root: str | os.PathLike, sequence: str, data: DataConfig = DataConfig()):
        self.root = Path(root)
        self.sequence = sequence
        self.data = data
        self.seq_dir = self.root / "sequences" / sequence
        self.scans = sorted((self.seq_dir / "velodyne").glob("*.bin"))
        if not self.scans:
            raise DataFormatError(f"no velodyne scans under {self.seq_dir / 'velodyne'}")
        self.poses_path = self.root / "poses" / f"{sequence}.txt"

    @cached_property
    def calib(self) -> Calibration:
        path = self.seq_dir / "calib.txt"
        if not path.exists():
            logger.warning("%s missing, using identity calibration", path)
            return Calibration.identity()
        return read_calib(path)

    @cached_property
    def poses(self) -> list[np.ndarray] | None:
        if not self.poses_path.exists():
            return None
        poses = read_poses(self.poses_path)
        if len(poses) != len(self.scans):
            raise DataFormatError(
                f"{self.poses_path}: {len(poses)} poses for {len(self.scans)} scans"
            )
        return poses

    @property
    def has_ground_truth(self) -> bool:
        return self.poses is not None

    @property
    def num_frames(self) -> int:
        return len(self.scans)

    def frame(self, i: int) -> PointCloud:
        return preprocess(read_velodyne_bin(self.scans[i]), self.calib, self.data)

    def __len__(self) -> int:
        return max(len(self.scans) - 1, 0)

    def __getitem__(self, i: int) -> FramePair:
        if not -len(self) <= i < len(self):
            raise IndexError(i)
        i %= len(self)
        gt = Pose.identity() if self.poses is None else relative_gt(self.poses[i], self.poses[i + 1])
        return FramePair(self.frame(i), self.frame(i + 1), gt, self.sequence, i)


class KittiPairs(Sequence[FramePair]):
    """Frame pairs of several sequences back to back."""

    def __init__(self, root: str | os.PathLike, sequences: Sequence[str], data: DataConfig = DataConfig()):
        self.parts = [KittiSequence(root, s, data) for s in sequences]
        self.offsets = np.cumsum([0] + [len(p) for p in self.parts])

    def __len__(self) -> int:
        return int(self.offsets[-1])

    def __getitem__(self, i: int) -> FramePair:
        if not 0 <= i < len(self):
            raise IndexError(i)
        part = int(np.searchsorted(self.offsets, i, side="right")) - 1
        return self.parts[part][i - int(self.offsets[part])]
