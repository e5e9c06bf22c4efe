"""File formats: node masks, density CSV, 16-bit PGM heatmaps, metrics text.

Mask files hold ``M+1`` lines of ``M+1`` characters, top line at the
largest ``y``: ``.`` interior, ``#`` wall, ``X`` obstacle, ``*`` ghost and
lower-case letters for exits (one letter per exit id).  Blank lines and
lines starting with ``;`` are ignored.

Metrics files are ``key=value`` lines.  Floats are written with ``repr``
so they read back bit for bit; ``true``/``false``/``none`` spell booleans
and missing values.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .fp import DensityField
from .grid import GridSpec


# ---------------------------------------------------------------------------
# masks


def parse_mask(text: str) -> tuple[str, ...]:
    rows = []
    for line in text.splitlines():
        s = line.strip()
        if not s or s.startswith(";"):
            continue
        rows.append(s)
    return tuple(rows)


def read_mask(path) -> tuple[str, ...]:
    p = Path(path)
    try:
        return parse_mask(p.read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read mask {str(p)!r}: {exc.strerror}",
                                 path="geometry.mask") from None


def write_mask(rows, path) -> None:
    Path(path).write_text("\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# density output


def _values(field, grid: GridSpec | None):
    if isinstance(field, DensityField):
        return field.grid, np.asarray(field.values, dtype=float)
    if grid is None:
        raise ValueError("a grid is needed for raw arrays")
    return grid, np.asarray(field, dtype=float).ravel()


def write_density_csv(field, path, grid: GridSpec | None = None) -> None:
    """``x,y,value`` rows in flat node order, 17 significant digits."""
    grid, v = _values(field, grid)
    if not np.all(np.isfinite(v)):
        raise ValueError("field must be finite")
    pos = grid.node_positions()
    lines = ["x,y,value"]
    lines += [f"{x:.17g},{y:.17g},{val:.17g}" for (x, y), val in zip(pos, v)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_density_csv(path) -> np.ndarray:
    """Back to an ``(n_nodes, 3)`` array of ``x, y, value``."""
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def pgm_bytes(field, grid: GridSpec | None = None) -> bytes:
    """Binary 16-bit PGM (P5, big-endian); top row is the largest ``y``.

    Values map linearly from ``[0, max(field.max(), 1)]`` onto ``0..65535``;
    negative values clip to 0.
    """
    grid, v = _values(field, grid)
    if not np.all(np.isfinite(v)):
        raise ValueError("field must be finite")
    top = max(float(v.max(initial=0.0)), 1.0)
    img = np.clip(v / top, 0.0, 1.0).reshape(grid.shape).T[::-1]
    pix = np.rint(img * 65535).astype(">u2")
    header = f"P5\n{grid.n} {grid.n}\n65535\n".encode("ascii")
    return header + pix.tobytes()


def write_pgm(field, path, grid: GridSpec | None = None) -> None:
    Path(path).write_bytes(pgm_bytes(field, grid))


def read_pgm(path) -> np.ndarray:
    """Pixel array (rows top to bottom) of a file written by :func:`write_pgm`."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(t) for t in parts[1].split())
    maxval = int(parts[2])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(parts[3], dtype=dtype, count=w * h).reshape(h, w)


# ---------------------------------------------------------------------------
# metrics


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format(v) for v in value) + "]"
    text = str(value)
    if "\n" in text:
        raise ValueError("metric values must fit on one line")
    return text


def _parse(text: str):
    if text == "none":
        return None
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        return [] if not inner else [_parse(t.strip()) for t in inner.split(",")]
    return text


def flatten(data: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in data.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        elif isinstance(v, (list, tuple)) and v and isinstance(v[0], dict):
            for i, item in enumerate(v):
                out.update(flatten(item, f"{key}.{i}."))
        else:
            out[key] = v
    return out


def format_metrics(metrics: dict) -> str:
    lines = []
    for key, value in flatten(metrics).items():
        if "=" in key or "\n" in key:
            raise ValueError(f"bad metric key {key!r}")
        lines.append(f"{key}={_format(value)}")
    return "\n".join(lines) + "\n"


def write_metrics(metrics: dict, path) -> None:
    """Write flat ``key=value`` lines; nested dicts become dotted keys."""
    Path(path).write_text(format_metrics(metrics))


def parse_metrics(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"not a key=value line: {line!r}")
        out[key] = _parse(value)
    return out


def read_metrics(path) -> dict:
    return parse_metrics(Path(path).read_text())
