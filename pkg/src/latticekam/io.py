"""CSV/JSON emission with round-trip precision and deterministic layout."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import ScalarField, VectorField

FLOAT_FMT = "%.17g"


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return FLOAT_FMT % float(x)
    return str(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(x) for x in row) + "\n")
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(_jsonable(config), sort_keys=True).encode()).hexdigest()


def field_header(v) -> dict:
    g = v.grid
    return {"d": g.d, "N": g.N, "K": g.K, "parity": v.parity.name.lower()}


def field_rows(v, level: int | None = None):
    """Rows (level?, m_1..m_d, value(s)) over the active sublattice."""
    g = v.grid
    idx = g.parity_index(v.parity)
    m = g.multi_index[idx]
    vals = v.sub
    for i in range(idx.size):
        head = [] if level is None else [level]
        tail = list(vals[i]) if isinstance(v, VectorField) else [vals[i]]
        yield head + list(m[i]) + tail


def field_columns(v, with_level: bool = False) -> list[str]:
    cols = (["level"] if with_level else []) + [f"m{j + 1}" for j in range(v.grid.d)]
    if isinstance(v, VectorField):
        return cols + [f"xi{j + 1}" for j in range(v.grid.d)]
    return cols + ["value"]


def write_field(path, v: ScalarField | VectorField) -> Path:
    path = write_csv(path, field_columns(v), field_rows(v))
    write_json(Path(str(path) + ".json"), field_header(v))
    return path


def read_field(path, grid, parity) -> ScalarField:
    header, data = read_csv(path)
    d = grid.d
    m = data[:, :d].astype(np.int64)
    full = np.zeros(grid.n_nodes)
    full[grid.flat_index(m)] = data[:, d]
    return ScalarField(grid, parity, full)
