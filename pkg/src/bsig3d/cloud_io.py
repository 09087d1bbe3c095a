"""Readers for PLY / OBJ / XYZ point clouds and a PLY writer.

Only the subset needed for benchmark-style inputs is understood: a ``vertex``
element with float/double ``x y z`` (and optionally ``nx ny nz``) plus an
optional ``face`` element holding a ``uchar``-counted integer index list.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import EmptyInputError, MalformedInputError, UnsupportedFeatureError
from .geometry import PointCloud

FORMATS = ("ply", "obj", "xyz")

_PLY_SCALARS = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_VERTEX_FIELDS = ("x", "y", "z", "nx", "ny", "nz")


def _guess_format(path: Path) -> str:
    suffix = path.suffix.lower().lstrip(".")
    if suffix in FORMATS:
        return suffix
    raise UnsupportedFeatureError(f"cannot infer cloud format from {path.name!r}")


def load_cloud(path, format: str | None = None) -> PointCloud:
    """Read a cloud from ``path``; ``format`` defaults to the file suffix."""
    path = Path(path)
    fmt = (format or _guess_format(path)).lower()
    if fmt not in FORMATS:
        raise UnsupportedFeatureError(f"unknown cloud format {fmt!r}")
    data = path.read_bytes()
    if fmt == "ply":
        points, normals, faces = _parse_ply(data)
    elif fmt == "obj":
        points, normals, faces = _parse_obj(data)
    else:
        points, normals, faces = _parse_xyz(data)
    if len(points) == 0:
        raise EmptyInputError(f"{path}: cloud has no points")
    if normals is not None:
        lengths = np.linalg.norm(normals, axis=1)
        bad = np.flatnonzero(~(lengths > 0))
        if len(bad):
            raise MalformedInputError(f"{path}: zero-length normal at vertex {bad[0]}")
        normals = normals / lengths[:, None]
    if faces is not None and faces.size and (faces.min() < 0 or faces.max() >= len(points)):
        raise MalformedInputError(f"{path}: face index out of range")
    if not np.all(np.isfinite(points)):
        raise MalformedInputError(f"{path}: non-finite coordinate")
    return PointCloud(points, normals=normals, faces=faces, id=path.stem)


# -- PLY -----------------------------------------------------------------------


def _parse_ply_header(data: bytes):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MalformedInputError("line 1: not a PLY file (missing 'ply' magic or end_header)")
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    lines = data[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements: list[dict] = []
    for lineno, raw in enumerate(lines, start=1):
        tok = raw.split()
        if not tok or tok[0] in ("ply", "comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2:
                raise MalformedInputError(f"line {lineno}: incomplete format line")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise MalformedInputError(f"line {lineno}: bad element line {raw!r}")
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if not elements:
                raise MalformedInputError(f"line {lineno}: property before element")
            if tok[1] == "list":
                if len(tok) != 5:
                    raise MalformedInputError(f"line {lineno}: bad list property")
                elements[-1]["props"].append(("list", tok[4], tok[2], tok[3]))
            else:
                if len(tok) != 3:
                    raise MalformedInputError(f"line {lineno}: bad property line")
                elements[-1]["props"].append(("scalar", tok[2], tok[1], None))
        else:
            raise MalformedInputError(f"line {lineno}: unexpected header keyword {tok[0]!r}")

    if fmt not in ("ascii", "binary_little_endian"):
        raise UnsupportedFeatureError(f"PLY format {fmt!r} is not supported")
    for el in elements:
        if el["name"] == "vertex":
            names = []
            for kind, name, typ, _ in el["props"]:
                if kind != "scalar" or name not in _VERTEX_FIELDS or _PLY_SCALARS.get(typ) not in ("f4", "f8"):
                    raise UnsupportedFeatureError(f"vertex property {name!r} ({typ}) is not supported")
                names.append(name)
            if not {"x", "y", "z"} <= set(names):
                raise MalformedInputError("vertex element lacks x/y/z")
            normal_names = {"nx", "ny", "nz"} & set(names)
            if normal_names and len(normal_names) != 3:
                raise MalformedInputError("vertex element has a partial normal")
        elif el["name"] == "face":
            props = el["props"]
            if (
                len(props) != 1
                or props[0][0] != "list"
                or props[0][1] not in ("vertex_indices", "vertex_index")
                or _PLY_SCALARS.get(props[0][2]) != "u1"
                or _PLY_SCALARS.get(props[0][3], "f")[0] not in "iu"
            ):
                raise UnsupportedFeatureError("face element must be a uchar-counted integer index list")
        else:
            raise UnsupportedFeatureError(f"PLY element {el['name']!r} is not supported")
    header_lines = data[:body_start].count(b"\n")
    return fmt, elements, body_start, header_lines


def _triangulate(polys: list[list[int]]) -> np.ndarray:
    tris = []
    for poly in polys:
        for j in range(1, len(poly) - 1):
            tris.append((poly[0], poly[j], poly[j + 1]))
    return np.asarray(tris, dtype=np.int64).reshape(-1, 3)


def _split_vertex(el, table: np.ndarray):
    names = [p[1] for p in el["props"]]
    col = {n: i for i, n in enumerate(names)}
    points = table[:, [col["x"], col["y"], col["z"]]].astype(np.float64)
    normals = None
    if "nx" in col:
        normals = table[:, [col["nx"], col["ny"], col["nz"]]].astype(np.float64)
    return points, normals


def _parse_ply(data: bytes):
    fmt, elements, offset, header_lines = _parse_ply_header(data)
    points = np.empty((0, 3))
    normals = None
    faces = None
    if fmt == "ascii":
        lines = data[offset:].decode("ascii", errors="replace").splitlines()
        pos = 0
        for el in elements:
            if el["name"] == "vertex":
                nprop = len(el["props"])
                rows = []
                for i in range(el["count"]):
                    lineno = header_lines + pos + 1
                    if pos >= len(lines):
                        raise MalformedInputError(
                            f"line {lineno}: expected {el['count']} vertices, found {i}"
                        )
                    tok = lines[pos].split()
                    pos += 1
                    if len(tok) != nprop:
                        raise MalformedInputError(f"line {lineno}: expected {nprop} values")
                    try:
                        rows.append([float(t) for t in tok])
                    except ValueError as exc:
                        raise MalformedInputError(f"line {lineno}: {exc}") from None
                table = np.asarray(rows, dtype=np.float64).reshape(-1, nprop)
                points, normals = _split_vertex(el, table)
            else:
                polys = []
                for i in range(el["count"]):
                    lineno = header_lines + pos + 1
                    if pos >= len(lines):
                        raise MalformedInputError(
                            f"line {lineno}: expected {el['count']} faces, found {i}"
                        )
                    tok = lines[pos].split()
                    pos += 1
                    try:
                        vals = [int(t) for t in tok]
                    except ValueError as exc:
                        raise MalformedInputError(f"line {lineno}: {exc}") from None
                    if not vals or vals[0] != len(vals) - 1 or vals[0] < 3:
                        raise MalformedInputError(f"line {lineno}: bad face record")
                    polys.append(vals[1:])
                faces = _triangulate(polys)
        if any(line.strip() for line in lines[pos:]):
            raise MalformedInputError(
                f"line {header_lines + pos + 1}: trailing data after declared elements"
            )
    else:
        for el in elements:
            if el["name"] == "vertex":
                dtype = np.dtype([(p[1], "<" + _PLY_SCALARS[p[2]]) for p in el["props"]])
                need = dtype.itemsize * el["count"]
                if offset + need > len(data):
                    have = (len(data) - offset) // dtype.itemsize
                    raise MalformedInputError(
                        f"byte {len(data)}: expected {el['count']} vertices, found {have}"
                    )
                rec = np.frombuffer(data, dtype=dtype, count=el["count"], offset=offset)
                offset += need
                table = np.stack([rec[n].astype(np.float64) for n in dtype.names], axis=1) if el["count"] else np.empty((0, len(dtype.names)))
                points, normals = _split_vertex(el, table)
            else:
                idx_t = np.dtype("<" + _PLY_SCALARS[el["props"][0][3]])
                polys = []
                for i in range(el["count"]):
                    if offset >= len(data):
                        raise MalformedInputError(
                            f"byte {offset}: expected {el['count']} faces, found {i}"
                        )
                    cnt = data[offset]
                    end = offset + 1 + cnt * idx_t.itemsize
                    if cnt < 3 or end > len(data):
                        raise MalformedInputError(f"byte {offset}: bad face record")
                    polys.append(np.frombuffer(data, idx_t, count=cnt, offset=offset + 1).tolist())
                    offset = end
                faces = _triangulate(polys)
        if offset != len(data):
            raise MalformedInputError(f"byte {offset}: trailing data after declared elements")
    return points, normals, faces


def save_ply(path, cloud: PointCloud, binary: bool = True) -> None:
    """Write ``cloud`` as PLY with float64 coordinates (lossless)."""
    n = len(cloud)
    props = ["x", "y", "z"] + (["nx", "ny", "nz"] if cloud.normals is not None else [])
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0"]
    header.append(f"element vertex {n}")
    header += [f"property double {p}" for p in props]
    if cloud.faces is not None:
        header.append(f"element face {len(cloud.faces)}")
        header.append("property list uchar int vertex_indices")
    header.append("end_header")
    table = cloud.points if cloud.normals is None else np.hstack([cloud.points, cloud.normals])

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(table, dtype="<f8").tobytes())
            if cloud.faces is not None:
                rec = np.empty(len(cloud.faces), dtype=[("n", "u1"), ("v", "<i4", (3,))])
                rec["n"] = 3
                rec["v"] = cloud.faces
                fh.write(rec.tobytes())
        else:
            for row in table:
                fh.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))
            if cloud.faces is not None:
                for f in cloud.faces:
                    fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode("ascii"))


# -- OBJ / XYZ ------------------------------------------------------------------


def _parse_obj(data: bytes):
    verts = []
    polys = []
    for lineno, raw in enumerate(data.decode("utf-8", errors="replace").splitlines(), start=1):
        tok = raw.split()
        if not tok:
            continue
        if tok[0] == "v":
            if len(tok) < 4:
                raise MalformedInputError(f"line {lineno}: vertex needs three coordinates")
            try:
                verts.append([float(t) for t in tok[1:4]])
            except ValueError as exc:
                raise MalformedInputError(f"line {lineno}: {exc}") from None
        elif tok[0] == "f":
            if len(tok) < 4:
                raise MalformedInputError(f"line {lineno}: face needs three vertices")
            poly = []
            for t in tok[1:]:
                try:
                    i = int(t.split("/")[0])
                except ValueError:
                    raise MalformedInputError(f"line {lineno}: bad face index {t!r}") from None
                if i == 0:
                    raise MalformedInputError(f"line {lineno}: OBJ indices are 1-based")
                # negative indices are relative to the vertices read so far
                poly.append(i - 1 if i > 0 else len(verts) + i)
            if min(poly) < 0:
                raise MalformedInputError(f"line {lineno}: face index out of range")
            polys.append(poly)
    faces = _triangulate(polys) if polys else None
    return np.asarray(verts, dtype=np.float64).reshape(-1, 3), None, faces


def _parse_xyz(data: bytes):
    rows = []
    width = None
    for lineno, raw in enumerate(data.decode("utf-8", errors="replace").splitlines(), start=1):
        tok = raw.replace(",", " ").split()
        if not tok or tok[0].startswith("#"):
            continue
        if len(tok) not in (3, 6) or (width is not None and len(tok) != width):
            raise MalformedInputError(f"line {lineno}: expected 3 (or 6) values, got {len(tok)}")
        width = len(tok)
        try:
            rows.append([float(t) for t in tok])
        except ValueError as exc:
            raise MalformedInputError(f"line {lineno}: {exc}") from None
    table = np.asarray(rows, dtype=np.float64).reshape(-1, width or 3)
    normals = table[:, 3:6] if width == 6 else None
    return table[:, :3], normals, None


def save_xyz(path, cloud: PointCloud) -> None:
    table = cloud.points if cloud.normals is None else np.hstack([cloud.points, cloud.normals])
    with open(path, "w") as fh:
        for row in table:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
