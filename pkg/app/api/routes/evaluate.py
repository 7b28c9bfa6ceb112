import logging
from pathlib import Path

from app.api.deps import CommandRouter, arg, comma_list, output_dir, run_manifest
from app.core.errors import EXIT_OK, ConfigError, DataFormatError
from app.core.evalkit import LENGTHS, Trajectory, emit_plot_data, kitti_errors, pooled_length_errors, summarize
from app.core.util import atomic_write_text
from app.models.response import EvaluationSummary
from app.util.kittio import read_poses

logger = logging.getLogger(__name__)

router = CommandRouter()

SUMMARY_NAME = "summary.json"


def _pairs(est: Path, gt: Path, sequences: str | None) -> list[tuple[str, Path, Path]]:
    if gt.is_dir():
        if not est.is_dir():
            raise ConfigError("--gt is a directory, so --est must be one too")
        names = comma_list(sequences) if sequences else sorted(p.stem for p in gt.glob("*.txt"))
        if not names:
            raise DataFormatError(f"no pose files in {gt}")
        return [(name, est / f"{name}.txt", gt / f"{name}.txt") for name in names]
    return [(gt.stem, est, gt)]


def format_summary(summary: EvaluationSummary) -> str:
    lines = [f"{'sequence':<10} {'t_rel(%)':>10} {'r_rel(deg/100m)':>16} {'frames':>7}"]
    for row in summary.sequences:
        m = row.metrics
        if m.insufficient_length:
            lines.append(f"{row.sequence:<10} {'n/a':>10} {'n/a':>16} {m.frames:>7}  (too short)")
        else:
            lines.append(f"{row.sequence:<10} {m.t_rel:>10.2f} {m.r_rel:>16.2f} {m.frames:>7}")
    if summary.mean_t_rel is not None:
        lines.append(f"{'mean':<10} {summary.mean_t_rel:>10.2f} {summary.mean_r_rel:>16.2f}")
    return "\n".join(lines)


@router.command("eval", help="KITTI odometry errors of estimated trajectories", arguments=[
    arg("--est", required=True, help="estimated pose file, or a directory of NN.txt files"),
    arg("--gt", required=True, help="ground-truth pose file, or a directory of NN.txt files"),
    arg("--sequences", default=None, help="sequence names when comparing directories"),
    arg("--lengths", default=None, help="subsequence lengths in meters, comma separated"),
    arg("--step-size", type=int, default=1, help="frames between segment starts"),
    arg("--out", default=None, help="directory for the summary and plot data"),
])
def evaluate(args) -> int:
    try:
        lengths = tuple(float(v) for v in comma_list(args.lengths)) if args.lengths else LENGTHS
    except ValueError:
        raise ConfigError(f"--lengths must be numbers, got {args.lengths!r}") from None
    out = output_dir(args.out, "eval")
    with run_manifest("eval", out):
        metrics, trajectories = {}, {}
        for name, est_path, gt_path in _pairs(Path(args.est), Path(args.gt), args.sequences):
            est = Trajectory.from_matrices(read_poses(est_path))
            gt = Trajectory.from_matrices(read_poses(gt_path))
            metrics[name] = kitti_errors(est, gt, lengths, args.step_size)
            trajectories[name] = est
            trajectories[f"{name}_gt"] = gt
        summary = summarize(metrics)
        print(format_summary(summary))
        atomic_write_text(out / SUMMARY_NAME, summary.model_dump_json(indent=2) + "\n")
        report = emit_plot_data(out, trajectories, pooled_length_errors(metrics.values()))
        if report.failed:
            logger.warning("%d plot tables could not be written", len(report.failed))
    return EXIT_OK
