"""JSON writing with every float at 17 significant digits.

The stdlib encoder uses ``repr`` for floats; the files written here promise a
fixed ``.17g`` rendering, so numbers are formatted by hand.  Reading back is
plain ``json.loads``.
"""

import hashlib
import json
import math
import os
import tempfile

import numpy as np


def _fmt_float(x):
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite number {x!r}")
    s = format(x, ".17g")
    return s


def dumps(obj):
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist())
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = (f"{json.dumps(str(k))}:{dumps(v)}" for k, v in obj.items())
        return "{" + ",".join(items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def atomic_write_text(path, text):
    """Write via temp file + rename so readers never see a partial file."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def digest(obj):
    """Short stable content hash of a serializable object."""
    return hashlib.sha256(dumps(obj).encode()).hexdigest()[:16]
