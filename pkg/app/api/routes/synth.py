import logging

from app.api.deps import CommandRouter, arg, output_dir, run_manifest
from app.core.errors import EXIT_OK, ConfigError
from app.util.synth import generate_dataset, write_synth_dataset

logger = logging.getLogger(__name__)

router = CommandRouter()


@router.command("synth", help="generate a synthetic rigid-motion dataset", arguments=[
    arg("--count", type=int, default=10, help="number of frame pairs"),
    arg("--seed", type=int, default=0),
    arg("--points", type=int, default=512, help="points per frame"),
    arg("--max-rot", type=float, default=5.0, help="largest rotation angle, degrees"),
    arg("--max-trans", type=float, default=0.5, help="largest translation, meters"),
    arg("--noise", type=float, default=0.0, help="Gaussian sigma added to PC2"),
    arg("--dropout", type=float, default=0.0, help="fraction of PC2 points dropped"),
    arg("--out", default=None, help="dataset directory"),
])
def synth(args) -> int:
    if args.count < 0:
        raise ConfigError(f"--count must be >= 0, got {args.count}")
    out = output_dir(args.out, "synth")
    with run_manifest("synth", out, seed=args.seed):
        pairs = generate_dataset(args.count, args.seed, args.points, args.max_rot, args.max_trans,
                                 args.noise, args.dropout)
        write_synth_dataset(out, pairs)
    print(out)
    return EXIT_OK
