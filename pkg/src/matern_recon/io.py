"""Readers and writers for oriented clouds (PLY, OBJ, XYZ), meshes (OBJ, PLY) and CSV."""

from __future__ import annotations

import csv
import enum
import errno
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, NormalsRequiredError, ParseError
from .krr import OrientedPointCloud
from .mesher import TriangleMesh, face_areas

log = logging.getLogger(__name__)


class Format(str, enum.Enum):
    PLY = "ply"
    OBJ = "obj"
    XYZ = "xyz"


@dataclass(frozen=True)
class CloudFile:
    path: Path
    format: Format

    @classmethod
    def of(cls, path, fmt: str | Format | None = None) -> CloudFile:
        path = Path(path)
        return cls(path, Format(fmt.lower() if isinstance(fmt, str) else fmt) if fmt else detect_format(path))


def detect_format(path) -> Format:
    suffix = Path(path).suffix.lower().lstrip(".")
    try:
        return Format(suffix)
    except ValueError:
        raise InvalidInputError(f"{path}: cannot infer format from extension {suffix!r}") from None


# ----------------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


@dataclass
class _Element:
    name: str
    count: int
    props: list  # (name, dtype) or (name, count dtype, item dtype)


def _parse_ply_header(raw: bytes):
    lines, pos = [], 0
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise ParseError("PLY header has no end_header", len(lines) + 1)
        lines.append(raw[pos:end].decode("ascii", errors="replace").strip())
        pos = end + 1
        if lines[-1] == "end_header":
            break
    if lines[0] != "ply":
        raise ParseError("missing 'ply' magic", 1)
    fmt, elements = None, []
    for no, line in enumerate(lines[1:-1], start=2):
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) != 3 or tok[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise ParseError(f"unsupported format line {line!r}", no)
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise ParseError(f"malformed element line {line!r}", no)
            elements.append(_Element(tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before any element", no)
            if len(tok) == 5 and tok[1] == "list" and tok[2] in _PLY_TYPES and tok[3] in _PLY_TYPES:
                elements[-1].props.append((tok[4], _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
            elif len(tok) == 3 and tok[1] in _PLY_TYPES:
                elements[-1].props.append((tok[2], _PLY_TYPES[tok[1]]))
            else:
                raise ParseError(f"malformed property line {line!r}", no)
        else:
            raise ParseError(f"unknown header keyword {tok[0]!r}", no)
    if fmt is None:
        raise ParseError("PLY header has no format line", len(lines))
    return fmt, elements, pos, len(lines)


def _read_ply(path: Path) -> dict[str, dict[str, np.ndarray | list]]:
    """Every element as a dict of property arrays (lists for list properties)."""
    raw = path.read_bytes()
    fmt, elements, pos, header_lines = _parse_ply_header(raw)
    out = {}
    if fmt == "ascii":
        lines = raw[pos:].decode("ascii", errors="replace").splitlines()
        no = 0
        for el in elements:
            data = {p[0]: [] for p in el.props}
            for _ in range(el.count):
                while no < len(lines) and not lines[no].strip():
                    no += 1
                if no >= len(lines):
                    raise ParseError(f"file ends inside element {el.name!r}", header_lines + no + 1)
                tok, k = lines[no].split(), 0
                try:
                    for p in el.props:
                        if len(p) == 3:
                            n = int(tok[k])
                            data[p[0]].append([int(t) for t in tok[k + 1 : k + 1 + n]])
                            if len(data[p[0]][-1]) != n:
                                raise IndexError
                            k += 1 + n
                        else:
                            data[p[0]].append(float(tok[k]))
                            k += 1
                except (ValueError, IndexError):
                    raise ParseError(f"malformed {el.name} record", header_lines + no + 1) from None
                if k != len(tok):
                    raise ParseError(f"extra values in {el.name} record", header_lines + no + 1)
                no += 1
            out[el.name] = {k: (v if isinstance(v, list) and v and isinstance(v[0], list) else np.asarray(v, float))
                            for k, v in data.items()}
        return out
    endian = "<" if fmt == "binary_little_endian" else ">"
    for el in elements:
        if all(len(p) == 2 for p in el.props):
            dt = np.dtype([(p[0], endian + p[1]) for p in el.props])
            if pos + dt.itemsize * el.count > len(raw):
                raise ParseError(f"file truncated inside element {el.name!r}")
            arr = np.frombuffer(raw, dtype=dt, count=el.count, offset=pos)
            pos += dt.itemsize * el.count
            out[el.name] = {p[0]: arr[p[0]].astype(np.float64) for p in el.props}
            continue
        fast = _uniform_lists(raw, pos, el, endian)
        if fast is not None:
            out[el.name], pos = fast
            continue
        data = {p[0]: [] for p in el.props}
        for _ in range(el.count):
            for p in el.props:
                if len(p) == 3:
                    cdt, idt = np.dtype(endian + p[1]), np.dtype(endian + p[2])
                    n = int(np.frombuffer(raw, cdt, 1, pos)[0])
                    pos += cdt.itemsize
                    if pos + n * idt.itemsize > len(raw):
                        raise ParseError(f"file truncated inside element {el.name!r}")
                    data[p[0]].append(np.frombuffer(raw, idt, n, pos).astype(np.int64).tolist())
                    pos += n * idt.itemsize
                else:
                    dt = np.dtype(endian + p[1])
                    data[p[0]].append(float(np.frombuffer(raw, dt, 1, pos)[0]))
                    pos += dt.itemsize
        out[el.name] = {k: (v if v and isinstance(v[0], list) else np.asarray(v, float)) for k, v in data.items()}
    return out


def _uniform_lists(raw: bytes, pos: int, el: _Element, endian: str):
    """Vectorized read of an element holding one list property of constant length."""
    if len(el.props) != 1 or len(el.props[0]) != 3 or el.count == 0:
        return None
    name, cnt, item = el.props[0]
    cdt = np.dtype(endian + cnt)
    n = int(np.frombuffer(raw, cdt, 1, pos)[0])
    dt = np.dtype([("n", cdt), ("i", endian + item, (n,))])
    if n == 0 or pos + dt.itemsize * el.count > len(raw):
        return None
    arr = np.frombuffer(raw, dt, el.count, pos)
    if np.any(arr["n"] != n):
        return None
    return {name: arr["i"].astype(np.int64).tolist()}, pos + dt.itemsize * el.count


def _ply_vertices(path: Path, elements) -> tuple[np.ndarray, np.ndarray | None]:
    v = elements.get("vertex")
    if v is None or not all(c in v for c in "xyz"):
        raise ParseError(f"{path}: PLY has no vertex element with x, y, z")
    pts = np.stack([v["x"], v["y"], v["z"]], axis=1)
    normals = np.stack([v["nx"], v["ny"], v["nz"]], axis=1) if all(c in v for c in ("nx", "ny", "nz")) else None
    return pts, normals


# ----------------------------------------------------------------------- OBJ


def _parse_obj(path: Path):
    verts, normals, faces = [], [], []
    ignored = {"vt", "vp", "g", "o", "s", "usemtl", "mtllib", "l"}
    with open(path, encoding="utf-8", errors="replace") as fh:
        for no, line in enumerate(fh, start=1):
            tok = line.split("#", 1)[0].split()
            if not tok or tok[0] in ignored:
                continue
            try:
                if tok[0] == "v":
                    if len(tok) not in (4, 5, 7):
                        raise ValueError
                    verts.append([float(t) for t in tok[1:4]])
                elif tok[0] == "vn":
                    if len(tok) != 4:
                        raise ValueError
                    normals.append([float(t) for t in tok[1:4]])
                elif tok[0] == "f":
                    if len(tok) < 4:
                        raise ValueError
                    raw = [int(t.split("/")[0]) for t in tok[1:]]
                    # 1-based; negative indices count back from the latest vertex
                    idx = [i - 1 if i > 0 else len(verts) + i for i in raw]
                    if 0 in raw or any(i < 0 or i >= len(verts) for i in idx):
                        raise ParseError(f"face index out of range ({len(verts)} vertices so far)", no)
                    faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
                else:
                    raise ParseError(f"unknown record {tok[0]!r}", no)
            except ValueError:
                raise ParseError(f"malformed {tok[0]} record", no) from None
    return np.asarray(verts, float).reshape(-1, 3), np.asarray(normals, float).reshape(-1, 3), np.asarray(faces, np.int64).reshape(-1, 3)


# ----------------------------------------------------------------------- XYZ


def _parse_xyz(path: Path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8", errors="replace") as fh:
        for no, line in enumerate(fh, start=1):
            tok = line.split("#", 1)[0].split()
            if not tok:
                continue
            if len(tok) == 3:
                raise NormalsRequiredError(str(path))
            if len(tok) != 6:
                raise ParseError(f"expected 6 columns, found {len(tok)}", no)
            try:
                rows.append([float(t) for t in tok])
            except ValueError:
                raise ParseError("non-numeric value", no) from None
    if not rows:
        raise ParseError(f"{path}: no points")
    return np.asarray(rows)


# -------------------------------------------------------------------- public


def load_cloud(path, fmt: str | Format | None = None) -> OrientedPointCloud:
    """Read points with normals; normals are rescaled to unit length."""
    cf = CloudFile.of(path, fmt)
    if not cf.path.is_file():
        raise FileNotFoundError(errno.ENOENT, "input not found", str(cf.path))
    if cf.format is Format.XYZ:
        data = _parse_xyz(cf.path)
        pts, nrm = data[:, :3], data[:, 3:]
    elif cf.format is Format.PLY:
        pts, nrm = _ply_vertices(cf.path, _read_ply(cf.path))
        if nrm is None:
            raise NormalsRequiredError(str(cf.path))
    else:
        pts, nrm, _ = _parse_obj(cf.path)
        if len(nrm) != len(pts):
            raise NormalsRequiredError(str(cf.path))
    if len(pts) == 0:
        raise ParseError(f"{cf.path}: no points")
    return OrientedPointCloud(pts, nrm)


def save_cloud(cloud: OrientedPointCloud, path) -> None:
    """Write ``x y z nx ny nz`` rows (XYZ) or an ASCII PLY with normals."""
    path = Path(path)
    data = np.hstack([cloud.points, cloud.normals])
    if detect_format(path) is Format.XYZ:
        np.savetxt(path, data, fmt="%.17g")
        return
    header = (
        f"ply\nformat ascii 1.0\nelement vertex {len(data)}\n"
        + "".join(f"property double {c}\n" for c in ("x", "y", "z", "nx", "ny", "nz"))
        + "end_header\n"
    )
    with open(path, "w") as fh:
        fh.write(header)
        np.savetxt(fh, data, fmt="%.17g")


def save_mesh(mesh: TriangleMesh, path, fmt: str | Format | None = None) -> None:
    """OBJ with ``f i//i`` records, or binary little-endian PLY (float32 / int32)."""
    if mesh.is_empty:
        raise InvalidInputError("refusing to write an empty mesh")
    path = Path(path)
    fmt = Format(fmt.lower() if isinstance(fmt, str) else fmt) if fmt else detect_format(path)
    if fmt is Format.OBJ:
        with open(path, "w") as fh:
            np.savetxt(fh, mesh.vertices, fmt="v %.17g %.17g %.17g")
            np.savetxt(fh, mesh.vertex_normals, fmt="vn %.17g %.17g %.17g")
            np.savetxt(fh, np.repeat(mesh.faces + 1, 2, axis=1), fmt="f %d//%d %d//%d %d//%d")
    elif fmt is Format.PLY:
        header = (
            "ply\nformat binary_little_endian 1.0\n"
            f"element vertex {len(mesh.vertices)}\n"
            + "".join(f"property float {c}\n" for c in ("x", "y", "z", "nx", "ny", "nz"))
            + f"element face {len(mesh.faces)}\n"
            "property list uchar int vertex_indices\nend_header\n"
        )
        vdt = np.dtype([(c, "<f4") for c in ("x", "y", "z", "nx", "ny", "nz")])
        v = np.empty(len(mesh.vertices), vdt)
        for k, c in enumerate("xyz"):
            v[c] = mesh.vertices[:, k]
            v["n" + c] = mesh.vertex_normals[:, k]
        fdt = np.dtype([("n", "u1"), ("i", "<i4", (3,))])
        f = np.empty(len(mesh.faces), fdt)
        f["n"] = 3
        f["i"] = mesh.faces
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(v.tobytes())
            fh.write(f.tobytes())
    else:
        raise InvalidInputError(f"meshes are written as OBJ or PLY, not {fmt.value}")


def load_mesh(path) -> TriangleMesh:
    """Read an OBJ or PLY mesh; polygons are fan-triangulated."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(errno.ENOENT, "input not found", str(path))
    fmt = detect_format(path)
    if fmt is Format.OBJ:
        verts, normals, faces = _parse_obj(path)
        if len(normals) != len(verts):
            normals = None
    elif fmt is Format.PLY:
        elements = _read_ply(path)
        verts, normals = _ply_vertices(path, elements)
        face = elements.get("face", {})
        polys = face.get("vertex_indices", face.get("vertex_index", []))
        tris = [[p[0], p[k], p[k + 1]] for p in polys for k in range(1, len(p) - 1)]
        faces = np.asarray(tris, np.int64).reshape(-1, 3)
        if len(faces) and (faces.min() < 0 or faces.max() >= len(verts)):
            raise ParseError(f"{path}: face index out of range for {len(verts)} vertices")
    else:
        raise InvalidInputError(f"meshes are read from OBJ or PLY, not {fmt.value}")
    if len(faces):
        area = face_areas(verts, faces)
        if np.any(area == 0):
            log.warning("%s: dropping %d zero-area faces", path, int(np.sum(area == 0)))
            faces = faces[area > 0]
    if normals is not None:
        length = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = np.divide(normals, length, out=np.zeros_like(normals), where=length > 0)
    return TriangleMesh(verts, faces, normals)


def write_csv(target, header, rows) -> None:
    """Write ``header`` once followed by ``rows``; ``target`` is a path, a stream or ``-``."""
    if target in (None, "-"):
        _emit(sys.stdout, header, rows)
        return
    if hasattr(target, "write"):
        _emit(target, header, rows)
        return
    with open(target, "w", newline="") as fh:
        _emit(fh, header, rows)


def _emit(fh, header, rows) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
