"""ASCII mesh ingestion: minimal PLY and OBJ readers.

Only the geometry subset is parsed: PLY ``element vertex`` with x/y/z
properties and ``element face`` with a vertex index list; OBJ ``v`` and
``f`` lines. Units are assumed to be meters. Anything malformed raises
:class:`MeshParseError` carrying the offending line number.
"""

from __future__ import annotations

import os

import numpy as np

from .geometry import ObjectModel

__all__ = ["MeshParseError", "load_mesh", "parse_ply", "parse_obj", "save_ply"]


class MeshParseError(ValueError):
    """Malformed mesh file; ``line`` is 1-based."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def load_mesh(path: str | os.PathLike) -> ObjectModel:
    """Load a mesh by extension (.ply or .obj)."""
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ply":
        return parse_ply(text)
    if ext == ".obj":
        return parse_obj(text)
    raise ValueError(f"unsupported mesh extension: {ext!r} (expected .ply or .obj)")


def parse_ply(text: str) -> ObjectModel:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshParseError("missing 'ply' magic", 1)

    n_vertices = None
    n_faces = 0
    vertex_props: list[str] = []
    current_element = None
    header_end = None
    for i, raw in enumerate(lines[1:], start=2):
        tok = raw.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise MeshParseError("only ASCII PLY is supported", i)
        elif tok[0] == "element":
            if len(tok) != 3:
                raise MeshParseError("malformed element declaration", i)
            current_element = tok[1]
            try:
                count = int(tok[2])
            except ValueError:
                raise MeshParseError(f"bad element count {tok[2]!r}", i) from None
            if tok[1] == "vertex":
                n_vertices = count
            elif tok[1] == "face":
                n_faces = count
        elif tok[0] == "property":
            if current_element == "vertex" and len(tok) >= 3 and tok[1] != "list":
                vertex_props.append(tok[-1])
        elif tok[0] == "end_header":
            header_end = i
            break
    if header_end is None:
        raise MeshParseError("missing end_header", len(lines))
    if n_vertices is None:
        raise MeshParseError("no vertex element declared", header_end)
    for axis in ("x", "y", "z"):
        if axis not in vertex_props:
            raise MeshParseError(f"vertex element lacks property {axis!r}", header_end)
    ix, iy, iz = (vertex_props.index(a) for a in ("x", "y", "z"))

    body = [(j, ln) for j, ln in enumerate(lines[header_end:], start=header_end + 1)
            if ln.strip()]
    if len(body) < n_vertices + n_faces:
        raise MeshParseError(
            f"expected {n_vertices + n_faces} data lines, found {len(body)}",
            len(lines))

    vertices = np.empty((n_vertices, 3))
    for row, (lineno, ln) in enumerate(body[:n_vertices]):
        tok = ln.split()
        if len(tok) < len(vertex_props):
            raise MeshParseError(
                f"vertex row has {len(tok)} values, expected {len(vertex_props)}", lineno)
        try:
            vertices[row] = (float(tok[ix]), float(tok[iy]), float(tok[iz]))
        except ValueError:
            raise MeshParseError("non-numeric vertex coordinate", lineno) from None

    faces: list[tuple[int, int, int]] = []
    for lineno, ln in body[n_vertices:n_vertices + n_faces]:
        tok = ln.split()
        try:
            arity = int(tok[0])
            idx = [int(t) for t in tok[1:1 + arity]]
        except (ValueError, IndexError):
            raise MeshParseError("malformed face row", lineno) from None
        if len(idx) != arity or arity < 3:
            raise MeshParseError("face needs at least 3 indices", lineno)
        if any(not (0 <= v < n_vertices) for v in idx):
            raise MeshParseError("face index out of range", lineno)
        for a, b in zip(idx[1:-1], idx[2:]):
            faces.append((idx[0], a, b))

    return ObjectModel(vertices=vertices,
                       faces=np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def parse_obj(text: str) -> ObjectModel:
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "v":
            if len(tok) < 4:
                raise MeshParseError("vertex line needs 3 coordinates", lineno)
            try:
                vertices.append((float(tok[1]), float(tok[2]), float(tok[3])))
            except ValueError:
                raise MeshParseError("non-numeric vertex coordinate", lineno) from None
        elif tok[0] == "f":
            if len(tok) < 4:
                raise MeshParseError("face line needs at least 3 vertices", lineno)
            idx = []
            for t in tok[1:]:
                head = t.split("/", 1)[0]
                try:
                    v = int(head)
                except ValueError:
                    raise MeshParseError(f"bad face index {t!r}", lineno) from None
                if v == 0:
                    raise MeshParseError("OBJ indices are 1-based; 0 is invalid", lineno)
                idx.append(v - 1 if v > 0 else len(vertices) + v)
            if any(not (0 <= v < len(vertices)) for v in idx):
                raise MeshParseError("face index out of range", lineno)
            for a, b in zip(idx[1:-1], idx[2:]):
                faces.append((idx[0], a, b))
        # Other directives (vn, vt, usemtl, ...) are outside the subset; skip.
    if not vertices:
        raise MeshParseError("no vertices found", max(1, len(text.splitlines())))
    return ObjectModel(vertices=np.asarray(vertices),
                       faces=np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def save_ply(model: ObjectModel, path: str | os.PathLike) -> None:
    """Write an ASCII PLY with the subset this package reads back."""
    with open(os.fspath(path), "w", encoding="utf-8") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {model.vertex_count}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write(f"element face {model.faces.shape[0]}\n")
        fh.write("property list uchar int vertex_indices\n")
        fh.write("end_header\n")
        for v in model.vertices:
            fh.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in model.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")
