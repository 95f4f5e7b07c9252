"""Native mesh files, legacy VTK export, convergence CSV and key=value configs."""
from pathlib import Path

import numpy as np

from .errors import DegenerateElement, ParameterMismatch, ParseError
from .mesh import SimplicialMesh

MESH_MAGIC = "gofd-mesh"
MESH_VERSION = "1"
VTK_CELL_TYPES = {1: 3, 2: 5, 3: 10}
CSV_HEADER = "ne,h_bar,l2_error,linf_error,iterations,seconds"


def _fmt(x):
    return repr(float(x)) if np.isfinite(x) else ("nan" if np.isnan(x) else ("inf" if x > 0 else "-inf"))


def _g17(x):
    return format(float(x), ".17g")


def write_mesh(path, mesh, markers=True):
    lines = [f"{MESH_MAGIC} {MESH_VERSION} {mesh.dim} {mesh.n_vertices} {mesh.n_elements} {int(markers)}"]
    for i, v in enumerate(mesh.vertices):
        row = " ".join(_g17(c) for c in v)
        if markers:
            row += f" {int(mesh.boundary[i])}"
        lines.append(row)
    for e in mesh.elements:
        lines.append(" ".join(str(int(k)) for k in e))
    Path(path).write_text("\n".join(lines) + "\n")


def _content_lines(text):
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield number, line.split()


def read_mesh(path):
    """Parse a native mesh file; errors carry the offending line number."""
    lines = list(_content_lines(Path(path).read_text()))
    if not lines:
        raise ParseError("empty mesh file", 1)
    number, head = lines[0]
    if len(head) != 6 or head[0] != MESH_MAGIC or head[1] != MESH_VERSION:
        raise ParseError(f"expected '{MESH_MAGIC} {MESH_VERSION} <dim> <N_v> <N_e> <0|1>'", number)
    try:
        dim, nv, ne, flag = (int(t) for t in head[2:])
    except ValueError:
        raise ParseError("header counts must be integers", number) from None
    if dim not in (1, 2, 3) or nv < 0 or ne < 0 or flag not in (0, 1):
        raise ParseError("header values out of range", number)
    body = lines[1:]
    if len(body) != nv + ne:
        where = body[min(len(body), nv + ne) - 1][0] if body else number
        raise ParseError(f"header announces {nv} vertices and {ne} elements, body has {len(body)} lines", where)
    vertices = np.empty((nv, dim))
    markers = np.zeros(nv, dtype=bool)
    for i, (number, tok) in enumerate(body[:nv]):
        if len(tok) != dim + flag:
            raise ParseError(f"vertex line needs {dim + flag} values, got {len(tok)}", number)
        try:
            vertices[i] = [float(t) for t in tok[:dim]]
            if flag:
                m = int(tok[dim])
                if m not in (0, 1):
                    raise ValueError
                markers[i] = bool(m)
        except ValueError:
            raise ParseError("malformed vertex line", number) from None
    elements = np.empty((ne, dim + 1), dtype=np.int64)
    for i, (number, tok) in enumerate(body[nv:]):
        if len(tok) != dim + 1:
            raise ParseError(f"element line needs {dim + 1} indices, got {len(tok)}", number)
        try:
            elements[i] = [int(t) for t in tok]
        except ValueError:
            raise ParseError("malformed element line", number) from None
        if elements[i].min() < 0 or elements[i].max() >= nv:
            raise ParseError("vertex index out of range", number)
    return SimplicialMesh(vertices, elements, boundary=markers if flag else None)


def write_vtk(path, mesh, fields=None, title="gofd"):
    """Legacy ASCII VTK unstructured grid with optional vertex scalars."""
    fields = dict(fields or {})
    for name, values in fields.items():
        if np.shape(values) != (mesh.n_vertices,):
            raise ParameterMismatch(f"field {name!r} has shape {np.shape(values)}, expected ({mesh.n_vertices},)")
    d = mesh.dim
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {mesh.n_vertices} double")
    for v in mesh.vertices:
        xyz = list(v) + [0.0] * (3 - d)
        out.append(" ".join(_g17(c) for c in xyz))
    k = d + 1
    out.append(f"CELLS {mesh.n_elements} {mesh.n_elements * (k + 1)}")
    out.extend(f"{k} " + " ".join(str(int(i)) for i in e) for e in mesh.elements)
    out.append(f"CELL_TYPES {mesh.n_elements}")
    out.extend([str(VTK_CELL_TYPES[d])] * mesh.n_elements)
    if fields:
        out.append(f"POINT_DATA {mesh.n_vertices}")
        for name, values in fields.items():
            out.append(f"SCALARS {name.replace(' ', '_')} double 1")
            out.append("LOOKUP_TABLE default")
            out.extend(_g17(x) for x in np.asarray(values, dtype=float))
    Path(path).write_text("\n".join(out) + "\n")


def write_convergence_csv(path, table):
    lines = [CSV_HEADER]
    for r in table.rows:
        row = f"{r.ne},{_g17(r.h_bar)},{_g17(r.l2_error)},{_g17(r.linf_error)},{r.iterations},{_g17(r.seconds)}"
        if not getattr(r, "converged", True):
            row += ",not_converged"
        lines.append(row)
    slopes = table.slopes if table.rows else {"l2": float("nan"), "linf": float("nan")}
    lines.append(f"# slopes: l2={_g17(slopes['l2'])}, linf={_g17(slopes['linf'])}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_convergence_csv(path):
    """Rows as dicts plus the slope comment, for round-trip checks."""
    rows, slopes = [], {}
    for raw in Path(path).read_text().splitlines()[1:]:
        if raw.startswith("# slopes:"):
            for part in raw[len("# slopes:"):].split(","):
                key, value = part.strip().split("=")
                slopes[key] = float(value)
            continue
        tok = raw.split(",")
        rows.append({
            "ne": int(tok[0]), "h_bar": float(tok[1]), "l2_error": float(tok[2]),
            "linf_error": float(tok[3]), "iterations": int(tok[4]), "seconds": float(tok[5]),
            "converged": len(tok) < 7,
        })
    return rows, slopes


def read_config(path):
    """``key = value`` lines; '#' starts a comment. Keys use flag names."""
    config = {}
    for number, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected key=value", number)
        key, value = (t.strip() for t in line.split("=", 1))
        if not key:
            raise ParseError("empty key", number)
        config[key.lstrip("-").replace("-", "_")] = value
    return config
