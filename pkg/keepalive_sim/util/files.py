import os
import tempfile
from pathlib import Path

from .exception import DataError


def atomic_write_text(path: str | Path, content: str) -> Path:
    """Writes `content` next to `path` and renames it into place"""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)

    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(content)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

    return target


def read_text(path: str | Path, what: str = "file") -> str:
    target = Path(path)

    if not target.is_file():
        raise DataError(f"{what} not found: {target}")

    try:
        return target.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise DataError(f"unable to read {what} {target}: {e}")
