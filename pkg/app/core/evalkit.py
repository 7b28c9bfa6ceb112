"""
Trajectory accumulation and KITTI odometry error metrics.

For every start frame and every subsequence length L, the end frame is the
first one whose ground-truth arc length exceeds start + L. The relative pose
error over that segment gives a translational error (percent of L) and a
rotational error (degrees per 100 m). Errors are averaged per length and the
per-length averages are averaged again.
"""

import csv
import logging
import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from app.core.errors import EvaluationError
from app.core.geom import pose_inverse, pose_to_matrix, rotation_angle
from app.models.pose import Pose
from app.models.response import EvaluationSummary, LengthError, SequenceMetrics, TrajectoryMetrics
from app.util.kittio import rigid_inverse

logger = logging.getLogger(__name__)

LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)

TRAJECTORY_COLUMNS = ["frame", "r00", "r01", "r02", "tx", "r10", "r11", "r12", "ty", "r20", "r21", "r22", "tz"]
PATH2D_COLUMNS = ["frame", "x", "z"]
PATH3D_COLUMNS = ["frame", "x", "y", "z"]
LENGTH_COLUMNS = ["length", "t_err_pct", "r_err_deg_per_100m", "segments"]
MASK_COLUMNS = ["x", "y", "z", "weight"]


@dataclass(frozen=True)
class Trajectory:
    """Absolute 4x4 poses, first frame at the origin of the shared frame."""

    poses: tuple[np.ndarray, ...]

    @classmethod
    def from_matrices(cls, poses: Sequence[np.ndarray]) -> "Trajectory":
        return cls(tuple(np.asarray(p, dtype=np.float64) for p in poses))

    def __len__(self) -> int:
        return len(self.poses)

    @cached_property
    def arc_lengths(self) -> np.ndarray:
        """Cumulative distance travelled up to each frame, meters."""
        if not self.poses:
            return np.zeros(0)
        positions = np.array([p[:3, 3] for p in self.poses])
        steps = np.linalg.norm(np.diff(positions, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(steps)])

    @property
    def positions(self) -> np.ndarray:
        return np.array([p[:3, 3] for p in self.poses]).reshape(-1, 3)


def accumulate(relatives: Sequence[Pose]) -> Trajectory:
    """Chain relative poses (frame k into frame k+1) into absolutes starting at identity."""
    if not relatives:
        raise EvaluationError("no relative poses to accumulate")
    poses = [np.eye(4)]
    for rel in relatives:
        poses.append(poses[-1] @ pose_to_matrix(pose_inverse(rel)))
    return Trajectory(tuple(poses))


def _end_frame(dist: np.ndarray, first: int, length: float) -> int | None:
    # first frame strictly beyond the target arc length
    idx = int(np.searchsorted(dist, dist[first] + length, side="right"))
    return idx if idx < len(dist) else None


def kitti_errors(estimated: Trajectory, ground_truth: Trajectory, lengths: Sequence[float] = LENGTHS,
                 step_size: int = 1) -> TrajectoryMetrics:
    if len(estimated) != len(ground_truth):
        raise EvaluationError(
            f"trajectories differ in length: {len(estimated)} estimated vs {len(ground_truth)} ground truth"
        )
    if len(ground_truth) == 0:
        raise EvaluationError("empty trajectory")
    if step_size < 1:
        raise EvaluationError(f"step_size must be >= 1, got {step_size}")

    dist = ground_truth.arc_lengths
    per_length = []
    for length in lengths:
        t_errs, r_errs = [], []
        for first in range(0, len(ground_truth), step_size):
            last = _end_frame(dist, first, length)
            if last is None:
                continue
            gt_rel = rigid_inverse(ground_truth.poses[first]) @ ground_truth.poses[last]
            est_rel = rigid_inverse(estimated.poses[first]) @ estimated.poses[last]
            err = rigid_inverse(gt_rel) @ est_rel
            t_errs.append(np.linalg.norm(err[:3, 3]) / length)
            r_errs.append(rotation_angle(err) / length)
        if t_errs:
            per_length.append(LengthError(
                length=float(length),
                t_err=float(np.mean(t_errs)) * 100.0,
                r_err=float(np.rad2deg(np.mean(r_errs))) * 100.0,
                segments=len(t_errs),
            ))

    if not per_length:
        logger.warning("trajectory covers %.1f m, shorter than the smallest subsequence length %.0f m",
                       dist[-1], min(lengths))
        return TrajectoryMetrics(t_rel=0.0, r_rel=0.0, per_length=[], frames=len(ground_truth),
                                 insufficient_length=True)
    return TrajectoryMetrics(
        t_rel=float(np.mean([e.t_err for e in per_length])),
        r_rel=float(np.mean([e.r_err for e in per_length])),
        per_length=per_length,
        frames=len(ground_truth),
    )


def pooled_length_errors(metrics: Iterable[TrajectoryMetrics]) -> list[LengthError]:
    """Per-length errors over several sequences, every segment counted once."""
    pooled: dict[float, list[LengthError]] = {}
    for m in metrics:
        for e in m.per_length:
            pooled.setdefault(e.length, []).append(e)
    rows = []
    for length in sorted(pooled):
        group = pooled[length]
        n = sum(e.segments for e in group)
        rows.append(LengthError(
            length=length,
            t_err=sum(e.t_err * e.segments for e in group) / n,
            r_err=sum(e.r_err * e.segments for e in group) / n,
            segments=n,
        ))
    return rows


def summarize(metrics: Mapping[str, TrajectoryMetrics]) -> EvaluationSummary:
    """Per-sequence metrics and their mean over sequences long enough to score."""
    rows = [SequenceMetrics(sequence=name, metrics=m) for name, m in metrics.items()]
    scored = [m for m in metrics.values() if not m.insufficient_length]
    if not scored:
        return EvaluationSummary(sequences=rows)
    return EvaluationSummary(
        sequences=rows,
        mean_t_rel=float(np.mean([m.t_rel for m in scored])),
        mean_r_rel=float(np.mean([m.r_rel for m in scored])),
    )


def _write_csv(path: Path, header: list[str], rows, failures: list[str]) -> bool:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            writer.writerows(rows)
        return True
    except OSError as e:
        logger.error("cannot write %s: %s", path, e)
        failures.append(f"{path}: {e}")
        return False


@dataclass(frozen=True)
class PlotReport:
    written: list[Path]
    failed: list[str]


class _Emitter:
    def __init__(self, out_dir: str | os.PathLike):
        self.out = Path(out_dir)
        self.written: list[Path] = []
        self.failed: list[str] = []

    def __call__(self, name: str, header: list[str], rows) -> None:
        if _write_csv(self.out / name, header, rows, self.failed):
            self.written.append(self.out / name)

    def report(self) -> PlotReport:
        return PlotReport(self.written, self.failed)


def _emit_masks(emit: _Emitter, masks: Mapping[str, np.ndarray]) -> None:
    for name, table in masks.items():
        emit(f"mask_{name}.csv", MASK_COLUMNS, ([repr(float(v)) for v in row] for row in np.asarray(table)))


def emit_masks(out_dir: str | os.PathLike, masks: Mapping[str, np.ndarray]) -> PlotReport:
    """mask_<name>.csv per entry: x, y, z and the point's summed mask weight."""
    emit = _Emitter(out_dir)
    _emit_masks(emit, masks)
    return emit.report()


def emit_plot_data(out_dir: str | os.PathLike, trajectories: Mapping[str, Trajectory],
                   lengths: Sequence[LengthError] | None = None,
                   masks: Mapping[str, np.ndarray] | None = None) -> PlotReport:
    """
    Write trajectory_<name>.csv, path2d_<name>.csv, path3d_<name>.csv,
    errors_by_length.csv and mask_<name>.csv tables under `out_dir`.
    A file that cannot be written is logged and listed; the others still go out.
    """
    emit = _Emitter(out_dir)
    for name, traj in trajectories.items():
        emit(f"trajectory_{name}.csv", TRAJECTORY_COLUMNS,
             ([i, *(repr(float(v)) for v in p[:3, :].reshape(12))] for i, p in enumerate(traj.poses)))
        emit(f"path2d_{name}.csv", PATH2D_COLUMNS,
             ([i, repr(float(p[0])), repr(float(p[2]))] for i, p in enumerate(traj.positions)))
        emit(f"path3d_{name}.csv", PATH3D_COLUMNS,
             ([i, *(repr(float(v)) for v in p)] for i, p in enumerate(traj.positions)))

    emit("errors_by_length.csv", LENGTH_COLUMNS,
         ([repr(e.length), repr(e.t_err), repr(e.r_err), e.segments] for e in lengths or []))
    _emit_masks(emit, masks or {})
    return emit.report()


def _read_rows(path: str | os.PathLike, header: list[str]) -> list[list[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise EvaluationError(f"cannot read {path}: {e}") from e
    if not rows or rows[0] != header:
        raise EvaluationError(f"{path}: unexpected header {rows[0] if rows else None}")
    return rows[1:]


def read_trajectory_csv(path: str | os.PathLike) -> Trajectory:
    poses = []
    for row in _read_rows(path, TRAJECTORY_COLUMNS):
        m = np.eye(4)
        m[:3, :] = np.array([float(v) for v in row[1:]]).reshape(3, 4)
        poses.append(m)
    return Trajectory(tuple(poses))


def read_length_table(path: str | os.PathLike) -> list[LengthError]:
    return [
        LengthError(length=float(r[0]), t_err=float(r[1]), r_err=float(r[2]), segments=int(r[3]))
        for r in _read_rows(path, LENGTH_COLUMNS)
    ]
