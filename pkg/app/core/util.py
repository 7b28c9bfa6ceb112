import hashlib
import logging
import logging.config
import os
import tempfile
from pathlib import Path

LOG_FORMAT = "%(levelname)-5.5s [%(name)s] %(message)s"


# Configure logging from an ini file, falling back to a bare stderr handler
def setup_logging(config_path: str | os.PathLike | None, level: str | None = None) -> None:
    if config_path is not None and Path(config_path).is_file():
        logging.config.fileConfig(config_path, disable_existing_loggers=False)
    else:
        logging.basicConfig(format=LOG_FORMAT, datefmt="%H:%M:%S")
    if level:
        set_level(level)


def set_level(level: str) -> None:
    """Apply `level` to the root and package loggers; unknown names raise ValueError."""
    for name in (None, "app"):
        logging.getLogger(name).setLevel(level.upper())


def content_hash(data: bytes) -> str:
    """Git-style blob hash of `data`."""
    header = f"blob {len(data)}\0".encode()
    return hashlib.sha1(header + data).hexdigest()


# Write to a temp file in the same directory, then rename over `path`
def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
