from contextlib import contextmanager
from functools import wraps
import hashlib
import logging
import os
from pathlib import Path
import shutil
from traceback import format_exc

from .errors import RetmilError


logger = logging.getLogger(__name__)


def exit_code_on_error(f):
    """
    Decorator for command functions. Known errors are logged and turned into
    their exit code instead of a traceback; a None return means success.
    """
    @wraps(f)
    def inner(*args, **kwargs):
        try:
            return f(*args, **kwargs) or 0
        except RetmilError as e:
            logger.error("%s: %s", type(e).__name__, e)
            logger.debug(format_exc())
            return e.exit_code
        except OSError as e:
            logger.error("I/O error: %s", e)
            return 2
        except MemoryError as e:
            logger.error("Out of memory: %s", e)
            return 3
    return inner


@contextmanager
def atomic_write(path, mode="wb"):
    """
    Write to a temporary file next to `path` and move it into place when
    done, so a failure never leaves a half written file behind.
    """
    path = Path(path)
    tmp_path = path.with_name(path.name + ".tmp")
    try:
        with open(tmp_path, mode) as f:
            yield f
        shutil.move(str(tmp_path), str(path))
    finally:
        if tmp_path.exists():
            os.remove(tmp_path)


def directory_checksum(path):
    "SHA-256 over the names and contents of all files below path, in sorted order."
    digest = hashlib.sha256()
    root = Path(path)
    for file in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(str(file.relative_to(root)).encode())
        digest.update(file.read_bytes())
    return digest.hexdigest()


def parse_number_list(text, kind=int):
    "'0,5000,10000' -> [0, 5000, 10000]"
    try:
        return [kind(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ValueError(f"Could not understand {text!r} as a comma separated list of numbers")
