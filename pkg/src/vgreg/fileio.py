"""File formats: PLY clouds, 16-bit depth images, match/correspondence CSVs,
intrinsics and transform JSON."""

from __future__ import annotations

import csv
import json
import os
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import CorrespondenceSet, PointCloud, Provenance, RigidTransform
from .errors import InvalidArgument, ParseError, UnsupportedFormat
from .rgbd import CameraIntrinsics, DepthImage, PixelMatch

PathLike = str | os.PathLike

# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(data: bytes, path):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("not a PLY file (missing 'ply' magic or 'end_header')", path=path, line=1)
    nl = data.find(b"\n", end)
    if nl < 0:
        raise ParseError("header not terminated by a newline", path=path, offset=end)
    header_lines = data[:nl].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    for lineno, raw in enumerate(header_lines, start=1):
        parts = raw.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info", "end_header"):
            continue
        if parts[0] == "format":
            if len(parts) < 2:
                raise ParseError("malformed format line", path=path, line=lineno)
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise ParseError(f"malformed element line: {raw!r}", path=path, line=lineno)
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise ParseError("property before any element", path=path, line=lineno)
            if parts[1] == "list":
                if len(parts) != 5:
                    raise ParseError(f"malformed list property: {raw!r}", path=path, line=lineno)
                elements[-1][2].append((parts[4], f"list:{parts[2]}:{parts[3]}"))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise ParseError(f"unsupported property: {raw!r}", path=path, line=lineno)
                elements[-1][2].append((parts[2], parts[1]))
        else:
            raise ParseError(f"unknown header keyword {parts[0]!r}", path=path, line=lineno)
    if fmt not in ("ascii", "binary_little_endian"):
        raise UnsupportedFormat(f"{path}: PLY format {fmt!r} is not supported (ascii or binary_little_endian only)")
    return fmt, elements, nl + 1, len(header_lines)


def read_ply(path: PathLike) -> PointCloud:
    """Read the ``vertex`` element's x/y/z (and nx/ny/nz when all three exist)."""
    data = Path(path).read_bytes()
    fmt, elements, body_start, header_len = _parse_ply_header(data, path)
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise ParseError("no 'vertex' element", path=path)
    if names.index("vertex") != 0:
        raise UnsupportedFormat(f"{path}: the vertex element must come first")
    _, count, props = elements[0]
    prop_names = [p[0] for p in props]
    for axis in "xyz":
        if axis not in prop_names:
            raise ParseError(f"vertex element is missing property {axis!r}", path=path)
    if any(t.startswith("list") for _, t in props):
        raise UnsupportedFormat(f"{path}: list properties on vertices are not supported")

    if fmt == "ascii":
        lines = data[body_start:].decode("ascii", errors="replace").splitlines()
        rows = []
        for i in range(count):
            lineno = header_len + 1 + i
            if i >= len(lines):
                raise ParseError(f"expected {count} vertices, file ends after {i}", path=path, line=lineno)
            parts = lines[i].split()
            if len(parts) != len(props):
                raise ParseError(f"expected {len(props)} values, got {len(parts)}", path=path, line=lineno)
            try:
                rows.append([float(x) for x in parts])
            except ValueError as exc:
                raise ParseError(f"bad number: {exc}", path=path, line=lineno) from None
        table = np.array(rows, dtype=np.float64).reshape(count, len(props))
        col = {n: table[:, i] for i, n in enumerate(prop_names)}
    else:
        dtype = np.dtype([(n, "<" + _PLY_TYPES[t]) for n, t in props])
        need = dtype.itemsize * count
        if len(data) - body_start < need:
            raise ParseError(f"binary body truncated: need {need} bytes, have {len(data) - body_start}",
                             path=path, offset=len(data))
        rec = np.frombuffer(data, dtype=dtype, count=count, offset=body_start)
        col = {n: rec[n].astype(np.float64) for n in prop_names}

    pts = np.stack([col["x"], col["y"], col["z"]], axis=1)
    normals = None
    if all(k in col for k in ("nx", "ny", "nz")):
        normals = np.stack([col["nx"], col["ny"], col["nz"]], axis=1)
        norms = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = np.divide(normals, norms, out=np.zeros_like(normals), where=norms > 0)
        if np.any(norms == 0):
            normals = None
    return PointCloud(pts, normals)


def write_ply(cloud: PointCloud, path: PathLike, binary: bool = True, dtype: str = "float") -> None:
    """Write x/y/z (plus normals when present). ``dtype`` is ``float`` or ``double``."""
    if dtype not in ("float", "double"):
        raise InvalidArgument(f"PLY dtype must be 'float' or 'double', got {dtype!r}")
    cols = ["x", "y", "z"] + (["nx", "ny", "nz"] if cloud.normals is not None else [])
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {len(cloud)}"]
    header += [f"property {dtype} {c}" for c in cols]
    header.append("end_header")
    data = cloud.points if cloud.normals is None else np.hstack([cloud.points, cloud.normals])
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            f.write(np.ascontiguousarray(data, dtype="<f4" if dtype == "float" else "<f8").tobytes())
        else:
            for row in data:
                f.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))


# ---------------------------------------------------------------------------
# Depth images
# ---------------------------------------------------------------------------

_BIN_HEADER = struct.Struct("<IIf")


def _pgm_tokens(data: bytes, path, count: int):
    """First ``count`` whitespace-separated header tokens and the offset just past them."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ParseError("PGM header truncated", path=path, offset=pos)
        tokens.append(data[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte before the raster


def read_depth(path: PathLike, intrinsics: CameraIntrinsics | None = None) -> DepthImage:
    """Read a 16-bit binary PGM (``P5``, big-endian samples) or a raw ``.bin``
    (u32 width, u32 height, f32 depth_scale, then u16 samples, little-endian).

    When ``intrinsics`` is given and the file carries its own depth scale the
    two must agree.
    """
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == b"P5":
        tokens, start = _pgm_tokens(data, path, 4)
        try:
            width, height, maxval = (int(t) for t in tokens[1:4])
        except ValueError:
            raise ParseError(f"non-numeric PGM header field in {tokens[1:4]!r}", path=path) from None
        if not 0 < maxval <= 65535:
            raise ParseError(f"PGM maxval {maxval} outside 1..65535", path=path)
        dt = ">u2" if maxval > 255 else "u1"
        need = width * height * np.dtype(dt).itemsize
        if len(data) - start < need:
            raise ParseError(f"PGM raster truncated: need {need} bytes, have {len(data) - start}",
                             path=path, offset=len(data))
        vals = np.frombuffer(data, dtype=dt, count=width * height, offset=start).astype(np.uint16)
        return DepthImage(width, height, vals)
    if path.suffix.lower() == ".bin":
        if len(data) < _BIN_HEADER.size:
            raise ParseError("raw depth header truncated", path=path, offset=len(data))
        width, height, scale = _BIN_HEADER.unpack_from(data)
        need = width * height * 2
        if len(data) - _BIN_HEADER.size < need:
            raise ParseError(f"raw depth body truncated: need {need} bytes, have {len(data) - _BIN_HEADER.size}",
                             path=path, offset=len(data))
        if not scale > 0:
            raise ParseError(f"depth scale {scale} must be positive", path=path, offset=8)
        if intrinsics is not None and not np.isclose(scale, intrinsics.depth_scale, rtol=1e-6):
            raise ParseError(f"file depth scale {scale} disagrees with intrinsics {intrinsics.depth_scale}", path=path)
        vals = np.frombuffer(data, dtype="<u2", count=width * height, offset=_BIN_HEADER.size)
        return DepthImage(width, height, vals, float(scale))
    if data[:1] == b"P":
        raise ParseError(f"unsupported PNM variant {data[:2]!r}; expected binary P5", path=path, offset=0)
    raise UnsupportedFormat(f"{path}: not a P5 PGM or .bin depth file")


def write_depth(depth: DepthImage, path: PathLike, depth_scale: float | None = None) -> None:
    """Write PGM (``.pgm``) or raw ``.bin`` according to the file suffix."""
    path = Path(path)
    vals = np.asarray(depth.values)
    if vals.size and vals.max() > 65535:
        raise InvalidArgument("depth values exceed 16 bits")
    if path.suffix.lower() == ".pgm":
        header = f"P5\n{depth.width} {depth.height}\n65535\n".encode("ascii")
        path.write_bytes(header + vals.astype(">u2").tobytes())
    elif path.suffix.lower() == ".bin":
        scale = depth_scale if depth_scale is not None else depth.depth_scale
        if scale is None:
            raise InvalidArgument("raw .bin depth needs a depth_scale")
        path.write_bytes(_BIN_HEADER.pack(depth.width, depth.height, scale) + vals.astype("<u2").tobytes())
    else:
        raise UnsupportedFormat(f"{path}: depth output must end in .pgm or .bin")


# ---------------------------------------------------------------------------
# CSV: pixel matches and 3D correspondences
# ---------------------------------------------------------------------------

MATCH_COLUMNS = ("u0", "v0", "u1", "v1", "score")


def read_visual_matches(path: PathLike) -> list[PixelMatch]:
    """CSV with header ``u0,v0,u1,v1[,score]``; a missing score means 1.0."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file; expected header u0,v0,u1,v1[,score]", path=path, line=1) from None
        if tuple(header) not in (MATCH_COLUMNS, MATCH_COLUMNS[:4]):
            raise ParseError(f"header must be u0,v0,u1,v1[,score], got {','.join(header)}", path=path, line=1)
        ncol = len(header)
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != ncol:
                raise ParseError(f"expected {ncol} fields, got {len(row)}", path=path, line=lineno)
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise ParseError(str(exc), path=path, line=lineno) from None
            score = vals[4] if ncol == 5 else 1.0
            if score < 0:
                raise ParseError(f"negative score {score}", path=path, line=lineno)
            out.append(PixelMatch(*vals[:4], score))
    return out


def write_visual_matches(matches: Iterable[PixelMatch], path: PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(MATCH_COLUMNS)
        for m in matches:
            w.writerow([repr(float(x)) for x in (m.u0, m.v0, m.u1, m.v1, m.score)])


CORR_COLUMNS = ("px", "py", "pz", "qx", "qy", "qz", "weight", "provenance", "source_index", "target_index")


def write_correspondences(c: CorrespondenceSet, path: PathLike, labels: np.ndarray | None = None) -> None:
    """3D correspondences, one per row; ``label`` column appended when given."""
    cols = CORR_COLUMNS + (("label",) if labels is not None else ())
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for i in range(len(c)):
            row = [repr(float(x)) for x in c.source[i]] + [repr(float(x)) for x in c.target[i]]
            row += [repr(float(c.weight[i])), Provenance(int(c.provenance[i])).name.lower(),
                    int(c.source_index[i]), int(c.target_index[i])]
            if labels is not None:
                row.append(int(bool(labels[i])))
            w.writerow(row)


def read_correspondences(path: PathLike, provenance: Provenance | None = None):
    """Inverse of ``write_correspondences``. Returns ``(set, labels or None)``.

    ``provenance`` overrides the file's tag column when given.
    """
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise ParseError("empty correspondence file", path=path, line=1) from None
        has_label = header == CORR_COLUMNS + ("label",)
        if header != CORR_COLUMNS and not has_label:
            raise ParseError(f"header must be {','.join(CORR_COLUMNS)}[,label]", path=path, line=1)
        src, dst, w, prov, si, ti, lab = [], [], [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", path=path, line=lineno)
            try:
                src.append([float(x) for x in row[0:3]])
                dst.append([float(x) for x in row[3:6]])
                w.append(float(row[6]))
                prov.append(Provenance[row[7].strip().upper()])
                si.append(int(row[8]))
                ti.append(int(row[9]))
                if has_label:
                    lab.append(bool(int(row[10])))
            except (ValueError, KeyError) as exc:
                raise ParseError(f"bad field: {exc}", path=path, line=lineno) from None
    n = len(src)
    if provenance is not None:
        prov = [provenance] * n
    c = CorrespondenceSet.build(np.array(src).reshape(n, 3), np.array(dst).reshape(n, 3), np.array(w),
                                np.array(prov, dtype=np.int8), np.array(si, dtype=np.int64),
                                np.array(ti, dtype=np.int64))
    return c, (np.array(lab, dtype=bool) if has_label else None)


# ---------------------------------------------------------------------------
# JSON: intrinsics, transforms, generic documents
# ---------------------------------------------------------------------------


def read_json(path: PathLike) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=path, line=exc.lineno) from None


def write_json(obj, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=False)
        f.write("\n")


def read_intrinsics(path: PathLike) -> CameraIntrinsics:
    d = read_json(path)
    try:
        return CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                                float(d.get("depth_scale", 1000.0)))
    except KeyError as exc:
        raise ParseError(f"intrinsics missing field {exc}", path=path) from None


def write_intrinsics(k: CameraIntrinsics, path: PathLike) -> None:
    write_json({"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "depth_scale": k.depth_scale}, path)


def transform_to_json(t: RigidTransform) -> dict:
    axis, angle = t.axis_angle()
    return {
        "transform": t.as_matrix().tolist(),
        "rotation_deg_axis_angle": {"angle_deg": float(np.degrees(angle)), "axis": axis.tolist()},
    }


def transform_from_json(d: dict, path=None) -> RigidTransform:
    if "transform" not in d:
        raise ParseError("missing key 'transform' (4x4 row-major)", path=path)
    try:
        return RigidTransform.from_matrix(d["transform"])
    except (InvalidArgument, ValueError, TypeError) as exc:
        raise ParseError(f"invalid transform: {exc}", path=path) from None


def read_transform(path: PathLike) -> RigidTransform:
    return transform_from_json(read_json(path), path)


def write_transform(t: RigidTransform, path: PathLike) -> None:
    write_json(transform_to_json(t), path)

