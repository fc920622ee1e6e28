"""Writers for CSV tables, legacy ASCII VTK meshes and run-metadata blocks."""

import csv
import math
import os

import numpy as np


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(table, path, columns=None):
    """Write a list of row dicts with a header row (RFC 4180 quoting, CRLF line ends).

    Floats are written with ``repr`` so they read back exactly. An empty
    table writes the header only (nothing at all if no columns are known).
    """
    if columns is None:
        columns = []
        for row in table:
            for k in row:
                if k not in columns:
                    columns.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        if columns:
            w.writerow(columns)
        for row in table:
            w.writerow([_fmt(row.get(c, "")) for c in columns])


def _parse_cell(s):
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    if s in ("True", "False"):
        return s == "True"
    return s


def read_csv(path):
    """Inverse of :func:`write_csv`: list of row dicts with numbers restored."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return []
    header = rows[0]
    return [{k: _parse_cell(v) for k, v in zip(header, r)} for r in rows[1:]]


def write_vtk(mesh, fields, path, title="nsd-ensemble fields", cell_fields=None):
    """Legacy ASCII unstructured grid of the whole mesh.

    ``fields`` maps names to vertex arrays: (N,) scalars or (N, 2) vectors
    (padded with a zero z-component). ``cell_fields`` maps names to (M,)
    integer or float arrays.
    """
    V = np.asarray(mesh.vertices, dtype=float)
    T = np.asarray(mesh.triangles)
    N, M = len(V), len(T)
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {N} double"]
    lines += [f"{x!r} {y!r} 0.0" for x, y in V.tolist()]
    lines.append(f"CELLS {M} {4 * M}")
    lines += [f"3 {a} {b} {c}" for a, b, c in T.tolist()]
    lines.append(f"CELL_TYPES {M}")
    lines += ["5"] * M
    cell_fields = {"subdomain": np.asarray(mesh.subdomain), **(cell_fields or {})}
    lines.append(f"CELL_DATA {M}")
    for name, arr in cell_fields.items():
        arr = np.asarray(arr)
        if arr.shape != (M,):
            raise ValueError(f"cell field {name!r} has shape {arr.shape}, expected ({M},)")
        kind = "int" if np.issubdtype(arr.dtype, np.integer) else "double"
        lines += [f"SCALARS {name} {kind} 1", "LOOKUP_TABLE default"]
        lines += [_fmt(v) for v in arr.tolist()]
    if fields:
        lines.append(f"POINT_DATA {N}")
    for name, arr in fields.items():
        arr = np.asarray(arr, dtype=float)
        if arr.shape == (N,):
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(v) for v in arr.tolist()]
        elif arr.shape == (N, 2):
            lines.append(f"VECTORS {name} double")
            lines += [f"{a!r} {b!r} 0.0" for a, b in arr.tolist()]
        else:
            raise ValueError(f"point field {name!r} has shape {arr.shape}; expected ({N},) or ({N}, 2)")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def format_metadata(meta):
    """Flat ``key = value`` block, keys sorted."""
    out = []
    for k in sorted(meta):
        v = meta[k]
        if isinstance(v, float) and not math.isfinite(v):
            v = str(v)
        out.append(f"{k} = {_fmt(v) if not isinstance(v, (tuple, list)) else repr(tuple(v))}")
    return "\n".join(out) + "\n"


def write_metadata(meta, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_metadata(meta))


def write_artifacts(result, out_dir):
    """Write everything a scenario driver returned; returns the list of paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, table in result.get("tables", {}).items():
        p = os.path.join(out_dir, f"{name}.csv")
        write_csv(table, p)
        paths.append(p)
    mesh = result.get("mesh")
    for name, fields in result.get("vtk", {}).items():
        p = os.path.join(out_dir, f"{name}.vtk")
        write_vtk(mesh, fields, p, title=f"nsd-ensemble {name}")
        paths.append(p)
    p = os.path.join(out_dir, "metadata.txt")
    write_metadata(result.get("metadata", {}), p)
    paths.append(p)
    return paths
