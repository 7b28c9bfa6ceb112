import argparse
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterator, Sequence

from app.core.config import OUTPUT_ROOT
from app.core.errors import EXIT_OK, ConfigError, DataFormatError, PwcloError
from app.core.util import atomic_write_text
from app.models.config import DataConfig, RunConfig, apply_ablations, load_config_file, preset, update
from app.models.pointcloud import FramePair
from app.models.response import RunManifest
from app.util.kittio import KittiPairs, split_sequences
from app.util.synth import INDEX_NAME, read_synth_dataset

logger = logging.getLogger(__name__)

MANIFEST_NAME = "run_manifest.json"

Handler = Callable[[argparse.Namespace], int]


@dataclass(frozen=True)
class Argument:
    flags: tuple[str, ...]
    options: dict[str, Any]


def arg(*flags: str, **options) -> Argument:
    return Argument(flags, options)


@dataclass(frozen=True)
class Command:
    name: str
    help: str
    handler: Handler
    arguments: tuple[Argument, ...] = ()


@dataclass
class CommandRouter:
    """Collects subcommands the way an API router collects endpoints."""

    commands: dict[str, Command] = field(default_factory=dict)

    def command(self, name: str, help: str, arguments: tuple[Argument, ...] | list[Argument] = ()):
        def register(handler: Handler) -> Handler:
            if name in self.commands:
                raise ConfigError(f"command '{name}' registered twice")
            self.commands[name] = Command(name, help, handler, tuple(arguments))
            return handler
        return register

    def include_router(self, router: "CommandRouter") -> None:
        for command in router.commands.values():
            if command.name in self.commands:
                raise ConfigError(f"command '{command.name}' registered twice")
            self.commands[command.name] = command


class _Parser(argparse.ArgumentParser):
    # usage errors surface as ConfigError so every failure maps onto one exit code table
    def error(self, message: str):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser(router: CommandRouter) -> argparse.ArgumentParser:
    parser = _Parser(prog="pwclo", description="Desk-scale point-pyramid LiDAR odometry")
    parser.add_argument("--log-level", default=None, help="override the logging level (DEBUG, INFO, ...)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for command in router.commands.values():
        p = sub.add_parser(command.name, help=command.help, description=command.help)
        for a in command.arguments:
            p.add_argument(*a.flags, **a.options)
        p.set_defaults(handler=command.handler)
    return parser


def output_dir(path: str | os.PathLike | None, command: str) -> Path:
    """Explicit `--out`, else `<PWCLO_OUTPUT_ROOT>/<command>`."""
    return Path(path) if path else Path(OUTPUT_ROOT) / command


def comma_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def open_dataset(path: str | os.PathLike, data: DataConfig, sequences: str | None = None,
                 part: str = "train") -> Sequence[FramePair]:
    """
    A synthetic dataset directory (has `index.txt`) or a KITTI root. For KITTI
    the sequences are `--sequences` if given, else the `part` of the configured split.
    """
    root = Path(path)
    if (root / INDEX_NAME).is_file():
        return read_synth_dataset(root)
    if not (root / "sequences").is_dir():
        raise DataFormatError(f"{root} is neither a synthetic dataset nor a KITTI root")
    if sequences:
        names = comma_list(sequences)
    else:
        train, test = split_sequences(data.split)
        names = train if part == "train" else test
    logger.info("KITTI sequences %s from %s", ",".join(names), root)
    return KittiPairs(root, names, data)


def load_run_config(preset_name: str, config_path: str | None, ablations: list[str] | None,
                    overrides: dict[str, dict] | None = None) -> RunConfig:
    """Preset, then the config file, then ablation switches, then command-line flags."""
    run = preset(preset_name)
    if config_path:
        run = load_config_file(config_path, run)
    run = apply_ablations(run, ablations or [])
    if overrides:
        run = update(run, {k: {f: v for f, v in section.items() if v is not None} for k, section in overrides.items()})
    return run


@contextmanager
def run_manifest(command: str, out_dir: Path, config_path: str | os.PathLike | None = None,
                 seed: int | None = None, config_hash: str | None = None) -> Iterator[RunManifest]:
    """Write `run_manifest.json` once the command body finishes, whatever the outcome."""
    manifest = RunManifest(
        command=command,
        config_path=str(config_path) if config_path else None,
        seed=seed,
        config_hash=config_hash,
        output_dir=str(out_dir),
        started_at=datetime.now(timezone.utc),
    )
    exit_code = EXIT_OK
    try:
        yield manifest
    except PwcloError as e:
        exit_code = e.exit_code
        raise
    except BaseException:
        exit_code = None
        raise
    finally:
        manifest.finished_at = datetime.now(timezone.utc)
        manifest.exit_code = exit_code
        try:
            atomic_write_text(out_dir / MANIFEST_NAME, manifest.model_dump_json(indent=2) + "\n")
        except OSError as e:
            logger.error("cannot write run manifest in %s: %s", out_dir, e)
