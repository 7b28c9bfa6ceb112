import logging

from app.api.deps import CommandRouter, arg, output_dir, run_manifest
from app.core.errors import EXIT_OK, GradientCheckError
from app.core.gradcheck import GRADIENT_CHECKS, run_suite, worst_by_check
from app.core.util import atomic_write_text

logger = logging.getLogger(__name__)

router = CommandRouter()

RESULTS_NAME = "gradcheck.json"


@router.command("gradcheck", help="finite-difference check of every differentiable op", arguments=[
    arg("--op", action="append", default=None, help=f"repeatable; one of {', '.join(GRADIENT_CHECKS)}"),
    arg("--seed", type=int, action="append", default=None, help="repeatable; default per-check seeds"),
    arg("--out", default=None),
])
def gradcheck(args) -> int:
    out = output_dir(args.out, "gradcheck")
    with run_manifest("gradcheck", out):
        results = run_suite(args.op, args.seed)
        worst = worst_by_check(results)
        print(f"{'op':<16} {'max_rel_err':>12} {'tolerance':>10}")
        for name, r in worst.items():
            print(f"{name:<16} {r.max_rel_error:>12.3e} {r.tolerance:>10.0e} {'ok' if r.passed else 'FAIL'}")
        atomic_write_text(out / RESULTS_NAME,
                          "[\n" + ",\n".join(r.model_dump_json() for r in results) + "\n]\n")
        failed = [name for name, r in worst.items() if not r.passed]
        if failed:
            raise GradientCheckError(f"gradient check failed for {', '.join(failed)}")
    return EXIT_OK
