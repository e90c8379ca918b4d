from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, Union

import numpy as np

# Margins are clamped to +/- LOGIT_CLAMP so pure leaves stay finite.
LOGIT_CLAMP = 15.0

PathLike = Union[str, "os.PathLike[str]"]


def logit(p: float) -> float:
    if p <= 0.0:
        return -LOGIT_CLAMP
    if p >= 1.0:
        return LOGIT_CLAMP
    z = math.log(p / (1.0 - p))
    return max(-LOGIT_CLAMP, min(LOGIT_CLAMP, z))


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def logit_array(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide='ignore'):
        z = np.log(p) - np.log1p(-p)
    return np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)


def sigmoid_array(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def population_std(values: np.ndarray) -> float:
    """Population standard deviation; 0 for fewer than two values."""
    if len(values) < 2:
        return 0.0
    return float(np.std(values))


def format_float(x: float) -> str:
    # repr round-trips exactly; integral values drop the trailing '.0'
    # except negative zero, which keeps its sign
    x = float(x)
    negative_zero = x == 0 and math.copysign(1.0, x) < 0
    if x.is_integer() and abs(x) < 1e16 and not negative_zero:
        return str(int(x))
    return repr(x)


def file_digest(path: PathLike) -> str:
    h = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            h.update(chunk)
    return h.hexdigest()


def input_digests(paths: Iterable[PathLike]) -> Dict[str, str]:
    return {str(p): file_digest(p) for p in paths}


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def atomic_write(path: PathLike, data: Union[str, bytes]) -> None:
    """Write via a temp file in the target directory, then rename."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    mode = 'wb' if isinstance(data, bytes) else 'w'
    fd, tmp = tempfile.mkstemp(
        dir=str(target.parent), prefix=f".{target.name}.", suffix=".tmp"
    )
    try:
        if mode == 'wb':
            with os.fdopen(fd, 'wb') as f:
                f.write(data)  # type: ignore[arg-type]
        else:
            with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
                f.write(data)  # type: ignore[arg-type]
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
