"""Deterministic JSON output with floats written to 17 significant digits."""
from __future__ import annotations

import json
import math

import numpy as np


def _encode(obj, indent: int | None, level: int) -> str:
    if obj is None or obj is True or obj is False:
        return json.dumps(obj)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return format(v, ".17g") if math.isfinite(v) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        items = [(json.dumps(str(k)), v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        parts = [f"{k}: {_encode(v, indent, level + 1)}" for k, v in items]
        return _wrap(parts, "{", "}", indent, level)
    if isinstance(obj, (list, tuple)):
        return _wrap([_encode(v, indent, level + 1) for v in obj], "[", "]", indent, level)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _wrap(parts, open_, close, indent, level):
    if not parts:
        return open_ + close
    if indent is None:
        return open_ + ", ".join(parts) + close
    pad = " " * (indent * (level + 1))
    return open_ + "\n" + ",\n".join(pad + p for p in parts) + "\n" + " " * (indent * level) + close


def dumps(obj, indent: int | None = 2) -> str:
    """Serialize with sorted keys; non-finite floats become null."""
    return _encode(obj, indent, 0)


def write(path, obj, indent: int | None = 2) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj, indent) + "\n")


def read(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
