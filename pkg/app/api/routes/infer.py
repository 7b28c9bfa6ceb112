import logging
from pathlib import Path

import numpy as np
from tqdm import tqdm

from app.api.deps import CommandRouter, arg, comma_list, load_run_config, output_dir, run_manifest
from app.api.routes.train import CONFIG_NAME
from app.core.errors import EXIT_OK
from app.core.evalkit import accumulate, emit_masks
from app.core.net import PwcloNet
from app.core.pcops import random_sample
from app.core.tensor import ParameterRegistry, load_checkpoint
from app.models.config import ABLATIONS, PRESETS, RunConfig, config_hash
from app.util.kittio import KittiSequence, split_sequences, write_poses
from app.util.synth import INDEX_NAME, read_synth_dataset

logger = logging.getLogger(__name__)

router = CommandRouter()


def infer_sequence(net: PwcloNet, registry: ParameterRegistry, pairs, seed: int, name: str,
                   masks: dict[str, np.ndarray] | None = None, progress: bool = False) -> list[np.ndarray]:
    """Absolute poses, one per frame, the first at the identity."""
    n = net.config.n_points
    relatives = []
    for i, pair in enumerate(tqdm(pairs, desc=name, disable=not progress)):
        rng = np.random.default_rng([seed, i])
        pc1 = random_sample(pair.pc1, n, rng=rng)
        pc2 = random_sample(pair.pc2, n, rng=rng)
        out = net.infer(pc1, pc2, registry, rng)
        relatives.append(out.finest.pose)
        if masks is not None:
            masks[f"{name}_{i:06d}"] = out.finest.mask_weights()
    if not relatives:
        return [np.eye(4)]
    return list(accumulate(relatives).poses)


def _sources(root: Path, run: RunConfig, sequences: str | None) -> list[tuple[str, object]]:
    if (root / INDEX_NAME).is_file():
        return [("synth", read_synth_dataset(root))]
    names = comma_list(sequences) if sequences else split_sequences(run.data.split)[1]
    return [(s, KittiSequence(root, s, run.data)) for s in names]


@router.command("infer", help="estimate a trajectory with a trained checkpoint", arguments=[
    arg("--root", required=True, help="KITTI root or synthetic dataset directory"),
    arg("--sequences", "--sequence", dest="sequences", default=None,
        help="KITTI sequences, comma separated (default: the split's test part)"),
    arg("--checkpoint", required=True),
    arg("--preset", choices=sorted(PRESETS), default="desk"),
    arg("--config", default=None, help="defaults to config.txt next to the checkpoint"),
    arg("--ablation", action="append", choices=sorted(ABLATIONS), default=[]),
    arg("--seed", type=int, default=0, help="point sampling and FPS start seed"),
    arg("--export-mask", action="store_true", help="write finest-level mask weights per frame pair"),
    arg("--out", default=None),
    arg("--no-progress", action="store_true"),
])
def infer(args) -> int:
    config_path = args.config
    sibling = Path(args.checkpoint).parent / CONFIG_NAME
    if config_path is None and sibling.is_file():
        logger.info("using %s", sibling)
        config_path = sibling
    run = load_run_config(args.preset, config_path, args.ablation)
    out = output_dir(args.out, "infer")
    with run_manifest("infer", out, config_path, args.seed, config_hash(run)):
        net = PwcloNet(run.net)
        registry = load_checkpoint(args.checkpoint).registry
        net.check_parameters(registry)
        for name, pairs in _sources(Path(args.root), run, args.sequences):
            masks = {} if args.export_mask else None
            poses = infer_sequence(net, registry, pairs, args.seed, name, masks, progress=not args.no_progress)
            write_poses(out / f"{name}.txt", poses)
            logger.info("%s: %d poses written to %s", name, len(poses), out / f"{name}.txt")
            if masks:
                report = emit_masks(out / "masks", masks)
                if report.failed:
                    logger.warning("%d mask tables could not be written", len(report.failed))
    return EXIT_OK
