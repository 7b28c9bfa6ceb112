import logging

from app.api.deps import CommandRouter, arg, comma_list, load_run_config, open_dataset, output_dir, run_manifest
from app.core.config import WORKERS
from app.core.errors import EXIT_OK
from app.core.train import train_loop
from app.core.util import atomic_write_text
from app.models.config import ABLATIONS, PRESETS, config_hash, config_text

logger = logging.getLogger(__name__)

router = CommandRouter()

CONFIG_NAME = "config.txt"


@router.command("train", help="train the network on a synthetic dataset or KITTI sequences", arguments=[
    arg("--data", required=True, help="synthetic dataset directory or KITTI root"),
    arg("--sequences", default=None, help="KITTI sequences, comma separated (default: the split's train part)"),
    arg("--preset", choices=sorted(PRESETS), default="desk"),
    arg("--config", default=None, help="key = value overrides file"),
    arg("--ablation", action="append", choices=sorted(ABLATIONS), default=[], help="repeatable"),
    arg("--steps", type=int, default=None),
    arg("--batch-size", type=int, default=None),
    arg("--lr", type=float, default=None, help="initial learning rate"),
    arg("--beta1", type=float, default=None),
    arg("--beta2", type=float, default=None),
    arg("--decay-steps", type=int, default=None),
    arg("--decay-rate", type=float, default=None),
    arg("--lr-floor", type=float, default=None),
    arg("--s-x", type=float, default=None, help="initial translation loss weight s_x"),
    arg("--s-q", type=float, default=None, help="initial rotation loss weight s_q"),
    arg("--alphas", default=None, help="four level weights, finest first, comma separated"),
    arg("--checkpoint-every", type=int, default=None),
    arg("--seed", type=int, default=None),
    arg("--workers", type=int, default=None, help="threads per batch"),
    arg("--augment", action="store_true", default=None, help="random rigid augmentation of PC1"),
    arg("--resume", default=None, help="checkpoint to continue from"),
    arg("--out", default=None, help="run directory"),
    arg("--no-progress", action="store_true"),
])
def train(args) -> int:
    run = load_run_config(args.preset, args.config, args.ablation, {
        "train": {
            "steps": args.steps,
            "batch_size": args.batch_size,
            "learning_rate": args.lr,
            "beta1": args.beta1,
            "beta2": args.beta2,
            "decay_steps": args.decay_steps,
            "decay_rate": args.decay_rate,
            "lr_floor": args.lr_floor,
            "s_x": args.s_x,
            "s_q": args.s_q,
            "alphas": tuple(comma_list(args.alphas)) if args.alphas else None,
            "checkpoint_every": args.checkpoint_every,
            "seed": args.seed,
            "workers": args.workers if args.workers is not None else WORKERS,
        },
        "data": {"augment": args.augment},
    })
    out = output_dir(args.out, "train")
    with run_manifest("train", out, args.config, run.train.seed, config_hash(run)):
        for line in config_text(run).splitlines():
            logger.info("config: %s", line)
        dataset = open_dataset(args.data, run.data, args.sequences, part="train")
        logger.info("%d training pairs from %s", len(dataset), args.data)
        atomic_write_text(out / CONFIG_NAME, config_text(run))
        result = train_loop(dataset, run, out, resume=args.resume, progress=not args.no_progress)
        if result.losses:
            logger.info("iteration %d, last batch loss %.6g", result.iterations, result.losses[-1])
    return EXIT_OK
