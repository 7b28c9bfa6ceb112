import logging
import sys

from app.api.deps import build_parser
from app.api.main import api_router
from app.core.config import LOG_CONFIG, LOG_LEVEL
from app.core.errors import EXIT_DATA, EXIT_USAGE, PwcloError
from app.core.util import set_level, setup_logging

logger = logging.getLogger(__name__)


def run(argv: list[str] | None = None) -> int:
    """Parse `argv`, run the command, and return its exit code."""
    setup_logging(LOG_CONFIG, LOG_LEVEL)
    parser = build_parser(api_router)
    try:
        args = parser.parse_args(argv)
    except PwcloError as e:
        logger.error("%s", e.detail)
        parser.print_usage(sys.stderr)
        return e.exit_code
    except SystemExit as e:
        # --help
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    if args.log_level:
        try:
            set_level(args.log_level)
        except ValueError:
            logger.error("unknown log level %r", args.log_level)
            return EXIT_USAGE

    try:
        return args.handler(args)
    except PwcloError as e:
        logger.error("%s: %s", args.command, e.detail)
        return e.exit_code
    except OSError as e:
        logger.error("%s: %s", args.command, e)
        return EXIT_DATA
    except KeyboardInterrupt:
        logger.warning("%s interrupted; the last written checkpoint stays valid", args.command)
        return 130


if __name__ == "__main__":
    sys.exit(run())
