"""File formats: binary fine fields, CSV tables and the run manifest.

Field files start with the 8-byte magic ``SLODFLD1`` followed by a
little-endian header::

    uint32 d, uint32 n_fine, float64 kappa, uint32 len(name), name (utf-8)

and then ``(n_fine + 1)**d`` complex doubles (real, imag pairs) in row-major
order of the vertex array, i.e. x varies fastest.
"""
from __future__ import annotations

import csv
import json
import platform
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SLODFLD1"
_HEAD = struct.Struct("<IIdI")


class FieldFormatError(ValueError):
    pass


@dataclass
class FieldFile:
    d: int
    n_fine: int
    kappa: float
    name: str
    values: np.ndarray

    @property
    def grid(self) -> np.ndarray:
        """Values reshaped to the vertex array (y, x) in 2D."""
        return self.values.reshape((self.n_fine + 1,) * self.d)


def write_field(path, values, d: int, n_fine: int, kappa: float, name: str) -> Path:
    values = np.ascontiguousarray(values, dtype="<c16")
    if values.size != (n_fine + 1) ** d:
        raise FieldFormatError(f"{values.size} values do not fit a {d}D grid with {n_fine} cells per side")
    name_b = name.encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEAD.pack(d, n_fine, float(kappa), len(name_b)))
        fh.write(name_b)
        fh.write(values.tobytes())
    return path


def read_field(path) -> FieldFile:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise FieldFormatError(f"{path}: bad magic {raw[:8]!r}")
    d, n_fine, kappa, ln = _HEAD.unpack_from(raw, 8)
    off = 8 + _HEAD.size
    name = raw[off : off + ln].decode("utf-8")
    off += ln
    values = np.frombuffer(raw, dtype="<c16", offset=off)
    if values.size != (n_fine + 1) ** d:
        raise FieldFormatError(f"{path}: expected {(n_fine + 1) ** d} values, found {values.size}")
    return FieldFile(d, n_fine, kappa, name, values.astype(complex))


def write_csv(path, rows: list[dict], columns: list[str] | None = None) -> Path:
    """Write dict rows; floats use repr so reruns compare bitwise."""
    path = Path(path)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def versions() -> dict:
    import scipy

    from . import __version__

    return {
        "slod": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def write_manifest(path, config: dict, extra: dict | None = None) -> Path:
    """Resolved configuration plus library versions as JSON."""
    doc = {"config": config, "versions": versions()}
    if extra:
        doc.update(extra)
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")
