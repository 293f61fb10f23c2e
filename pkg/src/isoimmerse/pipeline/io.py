"""Chart and field files, canonical JSON and CSV output.

Floats are written with 17 significant digits, which round-trips every
float64 exactly; object keys are sorted.  See ``docs/formats.md``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from ..cartan import GeometryData
from ..chart import ChartGrid, MatrixForm, ScalarField, multi_indices
from ..integrate import ImmersionField

FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed input file; the message names the offending field."""


# ---------------------------------------------------------------------------
# canonical JSON


def _format_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    text = "%.17g" % x
    if "e" not in text and "." not in text and "n" not in text:
        text += ".0"
    return text


def _encode(obj, indent: int, level: int, out: list) -> None:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = sorted(obj.items())
        for i, (k, v) in enumerate(items):
            out.append(f"{pad}{json.dumps(str(k))}: ")
            _encode(v, indent, level + 1, out)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj.tolist() if isinstance(obj, np.ndarray) else obj)
        if all(isinstance(v, (int, float, bool, type(None), np.integer, np.floating)) for v in seq):
            out.append("[" + ", ".join(_scalar(v) for v in seq) + "]")
        else:
            out.append("[\n")
            for i, v in enumerate(seq):
                out.append(pad)
                _encode(v, indent, level + 1, out)
                out.append(",\n" if i < len(seq) - 1 else "\n")
            out.append(end + "]")
    else:
        out.append(_scalar(obj))


def _scalar(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _format_float(float(v))
    if isinstance(v, str):
        return json.dumps(v)
    raise TypeError(f"cannot serialise {type(v).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """Deterministic JSON: sorted keys, 17-digit floats, non-finite as null."""
    out: list[str] = []
    _encode(obj, indent, 0, out)
    return "".join(out) + "\n"


def write_text(text: str, path) -> None:
    Path(path).write_text(text, encoding="utf-8")


def _load(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top level must be an object")
    return doc


# ---------------------------------------------------------------------------
# header and arrays


def _grid_from_header(header, path) -> ChartGrid:
    if not isinstance(header, dict):
        raise FormatError(f"{path}: field 'header' must be an object")
    for key in ("n", "counts", "extents", "version"):
        if key not in header:
            raise FormatError(f"{path}: header is missing field '{key}'")
    if header["version"] != FORMAT_VERSION:
        raise FormatError(f"{path}: header.version {header['version']!r} unsupported (expected {FORMAT_VERSION})")
    try:
        grid = ChartGrid(tuple(tuple(e) for e in header["extents"]), tuple(header["counts"]))
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: header.counts/extents invalid: {exc}") from None
    if grid.n != header["n"]:
        raise FormatError(f"{path}: header.n = {header['n']} but counts has {grid.n} axes")
    return grid


def _array(doc, key, size, path) -> np.ndarray:
    if key not in doc:
        raise FormatError(f"{path}: missing field '{key}'")
    raw = doc[key]
    if not isinstance(raw, list):
        raise FormatError(f"{path}: field '{key}' must be a list of numbers")
    if len(raw) != size:
        raise FormatError(f"{path}: field '{key}' has {len(raw)} entries, expected {size}")
    try:
        arr = np.array(raw, dtype=float)
    except (TypeError, ValueError):
        bad = next(i for i, v in enumerate(raw) if not isinstance(v, (int, float)) or isinstance(v, bool))
        raise FormatError(f"{path}: field '{key}' entry {bad} is not a number") from None
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0]) if arr.ndim == 1 else 0
        raise FormatError(f"{path}: field '{key}' entry {bad} is not a finite number")
    return arr


def _upper(n):
    return [(i, j) for i in range(n) for j in range(i, n)]


# ---------------------------------------------------------------------------
# chart files


def chart_to_dict(geo: GeometryData) -> dict:
    grid, n, k = geo.grid, geo.n, geo.k
    up = _upper(n)
    g = np.stack([geo.metric[..., i, j] for i, j in up], axis=-1)
    II = np.stack([geo.second_form[..., i, j, :] for i, j in up], axis=-2)
    pairs = multi_indices(k, 2)
    N = np.moveaxis(geo.normal_connection, 0, grid.n)
    if pairs:
        Nf = np.stack([N[..., a, b] for a, b in pairs], axis=-1)
    else:
        Nf = np.zeros((*grid.shape, n, 0))
    header = {**grid.to_header(), "k": k, "version": FORMAT_VERSION}
    return {"header": header, "g": g.ravel(), "II": II.ravel(), "N": Nf.ravel()}


def chart_from_dict(doc: dict, path="<chart>", c_floor: float = 1e-8) -> GeometryData:
    if "header" not in doc:
        raise FormatError(f"{path}: missing field 'header'")
    grid = _grid_from_header(doc["header"], path)
    k = doc["header"].get("k")
    if not isinstance(k, int) or k < 1:
        raise FormatError(f"{path}: header.k must be a positive integer")
    n, Nn = grid.n, grid.num_nodes
    up = _upper(n)
    pairs = multi_indices(k, 2)
    g_flat = _array(doc, "g", Nn * len(up), path).reshape(*grid.shape, len(up))
    II_flat = _array(doc, "II", Nn * len(up) * k, path).reshape(*grid.shape, len(up), k)
    N_flat = _array(doc, "N", Nn * n * len(pairs), path).reshape(*grid.shape, n, len(pairs))
    g = np.empty((*grid.shape, n, n))
    II = np.empty((*grid.shape, n, n, k))
    for c, (i, j) in enumerate(up):
        g[..., i, j] = g[..., j, i] = g_flat[..., c]
        II[..., i, j, :] = II[..., j, i, :] = II_flat[..., c, :]
    N = np.zeros((*grid.shape, n, k, k))
    for c, (a, b) in enumerate(pairs):
        N[..., a, b] = N_flat[..., c]
        N[..., b, a] = -N_flat[..., c]
    try:
        return GeometryData(grid, g, II, np.moveaxis(N, grid.n, 0), c_floor)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_chart(geo: GeometryData, path) -> None:
    write_text(dumps(chart_to_dict(geo)), path)


def read_chart(path, c_floor: float = 1e-8) -> GeometryData:
    return chart_from_dict(_load(path), path, c_floor)


# ---------------------------------------------------------------------------
# field files: matrix forms, scalar fields, immersions


def field_to_dict(obj) -> dict:
    if isinstance(obj, MatrixForm):
        grid = obj.grid
        header = {**grid.to_header(), "kind": "matrix_form", "degree": obj.degree, "m": obj.m,
                  "antisymmetric": obj.antisymmetric, "version": FORMAT_VERSION}
        values = np.moveaxis(obj.data, 0, grid.n)
    elif isinstance(obj, ScalarField):
        grid = obj.grid
        header = {**grid.to_header(), "kind": "scalar", "version": FORMAT_VERSION}
        values = obj.values
    elif isinstance(obj, ImmersionField):
        grid = obj.grid
        header = {**grid.to_header(), "kind": "immersion", "m": obj.m, "version": FORMAT_VERSION}
        values = obj.points
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")
    return {"header": header, "values": values.ravel()}


def field_from_dict(doc: dict, path="<field>"):
    if "header" not in doc:
        raise FormatError(f"{path}: missing field 'header'")
    header = doc["header"]
    grid = _grid_from_header(header, path)
    kind = header.get("kind")
    Nn = grid.num_nodes
    if kind == "scalar":
        return ScalarField(grid, _array(doc, "values", Nn, path).reshape(grid.shape))
    if kind == "immersion":
        m = header.get("m")
        if not isinstance(m, int) or m < 1:
            raise FormatError(f"{path}: header.m must be a positive integer")
        return ImmersionField(grid, _array(doc, "values", Nn * m, path).reshape(*grid.shape, m))
    if kind == "matrix_form":
        deg, m = header.get("degree"), header.get("m")
        if not isinstance(deg, int) or not 0 <= deg <= grid.n:
            raise FormatError(f"{path}: header.degree must be an integer in [0, {grid.n}]")
        if not isinstance(m, int) or m < 1:
            raise FormatError(f"{path}: header.m must be a positive integer")
        ncomp = len(multi_indices(grid.n, deg))
        vals = _array(doc, "values", Nn * ncomp * m * m, path).reshape(*grid.shape, ncomp, m, m)
        anti = bool(header.get("antisymmetric", False))
        data = np.moveaxis(vals, grid.n, 0)
        if anti and np.max(np.abs(data + np.swapaxes(data, -1, -2)), initial=0.0) > 0:
            raise FormatError(f"{path}: header.antisymmetric is true but values are not antisymmetric")
        return MatrixForm(grid, deg, data, anti)
    raise FormatError(f"{path}: header.kind must be one of 'scalar', 'matrix_form', 'immersion'")


def write_field(obj, path) -> None:
    write_text(dumps(field_to_dict(obj)), path)


def read_field(path):
    return field_from_dict(_load(path), path)


# ---------------------------------------------------------------------------
# CSV


def csv_text(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if row.get(c) is None else (_format_float(row[c]) if isinstance(row[c], float) else row[c])
                         for c in columns])
    return buf.getvalue()
