"""PLY import/export for object clouds and grasp marker scenes.

Coordinates and normals are written as doubles so that a write/read cycle
reproduces the cloud exactly. The sensor viewpoint travels in a header comment.
"""
import io
import math
from pathlib import Path
from typing import Iterable, List, NamedTuple, Tuple

import numpy as np

from waste_grasp_py.cloud_processing import PointCloud
from waste_grasp_py.enums import PlyFormat
from waste_grasp_py.exceptions import IoError, ParseError, PreconditionViolation
from waste_grasp_py.grasp_synthesis import GraspReport

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

CONTACT_A_COLOR = (255, 0, 0)
CONTACT_B_COLOR = (0, 255, 0)
PLANE_COLOR = (0, 0, 255)
DEFAULT_POINT_COLOR = (200, 200, 200)


class PlyHeader(NamedTuple):
    format: PlyFormat
    vertex_count: int
    properties: List[Tuple[str, str]]
    comments: List[str]
    body_offset: int


def _vertex_layout(cloud: PointCloud) -> List[Tuple[str, str]]:
    layout = [("x", "double"), ("y", "double"), ("z", "double")]
    if cloud.colors is not None:
        layout += [("red", "uchar"), ("green", "uchar"), ("blue", "uchar")]
    if cloud.normals is not None:
        layout += [("nx", "double"), ("ny", "double"), ("nz", "double")]
    return layout


def _vertex_columns(cloud: PointCloud) -> List[np.ndarray]:
    columns = [cloud.points[:, j] for j in range(3)]
    if cloud.colors is not None:
        columns += [cloud.colors[:, j] for j in range(3)]
    if cloud.normals is not None:
        columns += [cloud.normals[:, j] for j in range(3)]
    return columns


def encode_ply(cloud: PointCloud, fmt: PlyFormat = PlyFormat.ASCII, comments: Iterable[str] = ()) -> bytes:
    layout = _vertex_layout(cloud)
    header = ["ply", f"format {fmt.value} 1.0", "comment generated by waste-grasp-py"]
    header.append("comment viewpoint " + " ".join(f"{v:.17g}" for v in cloud.viewpoint))
    header += [f"comment {text}" for text in comments]
    header.append(f"element vertex {len(cloud)}")
    header += [f"property {ply_type} {name}" for name, ply_type in layout]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")

    columns = _vertex_columns(cloud)
    if fmt is PlyFormat.BINARY_LITTLE_ENDIAN:
        dtype = np.dtype([(name, "<" + _PLY_TYPES[ply_type]) for name, ply_type in layout])
        records = np.empty(len(cloud), dtype=dtype)
        for (name, _), column in zip(layout, columns):
            records[name] = column
        return head + records.tobytes()

    body = io.StringIO()
    if len(cloud):
        table = np.column_stack([column.astype(np.float64) for column in columns])
        formats = ["%d" if ply_type == "uchar" else "%.17g" for _, ply_type in layout]
        np.savetxt(body, table, fmt=formats, delimiter=" ", newline="\n")
    return head + body.getvalue().encode("ascii")


def write_ply(path, cloud: PointCloud, fmt: PlyFormat = PlyFormat.ASCII, comments: Iterable[str] = ()) -> Path:
    path = Path(path)
    payload = encode_ply(cloud, fmt, comments)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as e:
        raise IoError(f"Could not write PLY file {path}: {e}") from e
    return path


def _parse_header(data: bytes) -> PlyHeader:
    marker = b"end_header"
    end = data.find(marker)
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("Not a PLY file or missing end_header")
    newline = data.find(b"\n", end)
    body_offset = len(data) if newline < 0 else newline + 1
    lines = data[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    vertex_count = None
    properties: List[Tuple[str, str]] = []
    comments: List[str] = []
    current_element = None
    for number, raw_line in enumerate(lines[1:], start=2):
        tokens = raw_line.split()
        if not tokens:
            continue
        keyword = tokens[0]
        if keyword == "format":
            try:
                fmt = PlyFormat(tokens[1])
            except (IndexError, ValueError):
                raise ParseError(f"Unsupported PLY format '{raw_line.strip()}'", line=number)
        elif keyword == "comment":
            comments.append(raw_line.strip()[len("comment"):].strip())
        elif keyword == "element":
            current_element = tokens[1]
            if current_element == "vertex":
                vertex_count = int(tokens[2])
            elif vertex_count is None:
                # elements after the vertices are skipped, ones before them are not supported
                raise ParseError("The vertex element must come first", line=number)
        elif keyword == "property" and current_element == "vertex":
            if tokens[1] == "list" or tokens[1] not in _PLY_TYPES:
                raise ParseError(f"Unsupported vertex property '{raw_line.strip()}'", line=number)
            properties.append((tokens[2], tokens[1]))
    if fmt is None or vertex_count is None:
        raise ParseError("PLY header lacks a format line or a vertex element")
    return PlyHeader(fmt, vertex_count, properties, comments, body_offset)


def read_ply_header(path) -> PlyHeader:
    return _parse_header(_read_bytes(path))


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"Could not read PLY file {path}: {e}") from e


def _viewpoint(comments: List[str]) -> np.ndarray:
    for text in comments:
        if text.startswith("viewpoint "):
            return np.array([float(v) for v in text.split()[1:4]])
    return np.zeros(3)


def decode_ply(data: bytes) -> PointCloud:
    header = _parse_header(data)
    names = [name for name, _ in header.properties]
    body = data[header.body_offset:]

    if header.format is PlyFormat.BINARY_LITTLE_ENDIAN:
        dtype = np.dtype([(name, "<" + _PLY_TYPES[ply_type]) for name, ply_type in header.properties])
        if len(body) < dtype.itemsize * header.vertex_count:
            raise ParseError(f"Binary body holds fewer than {header.vertex_count} vertices")
        if header.vertex_count:
            records = np.frombuffer(body, dtype=dtype, count=header.vertex_count)
        else:
            records = np.zeros(0, dtype=dtype)
        columns = {name: records[name].astype(np.float64) for name in names}
    else:
        rows = body.decode("ascii", errors="replace").splitlines()[:header.vertex_count]
        if len(rows) < header.vertex_count:
            raise ParseError(f"ASCII body holds {len(rows)} of {header.vertex_count} vertices")
        parsed = []
        for number, row in enumerate(rows):
            values = row.split()[:len(names)]
            try:
                if len(values) < len(names):
                    raise ValueError(f"{len(values)} of {len(names)} values")
                parsed.append([float(v) for v in values])
            except ValueError as e:
                raise ParseError(f"Vertex {number} is malformed: {e}") from e
        table = np.array(parsed, dtype=np.float64).reshape(header.vertex_count, len(names))
        columns = {name: table[:, j] for j, name in enumerate(names)}

    def _stack(keys: Tuple[str, str, str]):
        if all(key in columns for key in keys):
            return np.column_stack([columns[key] for key in keys])
        return None

    points = _stack(("x", "y", "z"))
    if points is None:
        raise ParseError("PLY vertices lack x, y, z properties")
    colors = _stack(("red", "green", "blue"))
    return PointCloud(
        points=points,
        colors=None if colors is None else colors.astype(np.uint8),
        normals=_stack(("nx", "ny", "nz")),
        viewpoint=_viewpoint(header.comments),
    )


def read_ply(path) -> PointCloud:
    return decode_ply(_read_bytes(path))


def _plane_basis(normal: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    helper = np.eye(3)[int(np.argmin(np.abs(normal)))]
    first = np.cross(normal, helper)
    first /= np.linalg.norm(first)
    return first, np.cross(normal, first)


def plane_disc(origin: np.ndarray, normal: np.ndarray, radius: float, rings: int = 4, spokes: int = 16) -> np.ndarray:
    """Center plus ``rings`` concentric circles of ``spokes`` vertices lying in the plane."""
    first, second = _plane_basis(normal)
    vertices = [origin]
    for ring in range(1, rings + 1):
        r = radius * ring / rings
        for spoke in range(spokes):
            angle = 2.0 * math.pi * spoke / spokes
            vertices.append(origin + r * (math.cos(angle) * first + math.sin(angle) * second))
    return np.array(vertices)


def export_ply_markers(
    cloud: PointCloud,
    report: GraspReport,
    path,
    fmt: PlyFormat = PlyFormat.ASCII,
    rings: int = 4,
    spokes: int = 16,
) -> Path:
    """Writes the object cloud plus the best contact pair (red, green) and a disc sampling the grasping plane (blue)."""
    if not report.candidates:
        raise PreconditionViolation("Grasp report has no candidates to export")

    best = report.best
    disc = plane_disc(report.plane.origin, report.plane.normal, max(best.opening, report.plane.epsilon), rings, spokes)
    base_colors = cloud.colors if cloud.colors is not None else np.tile(DEFAULT_POINT_COLOR, (len(cloud), 1))
    marker_colors = np.vstack([[CONTACT_A_COLOR], [CONTACT_B_COLOR], np.tile(PLANE_COLOR, (len(disc), 1))])

    normals = None
    if cloud.normals is not None:
        normals = np.vstack([
            cloud.normals, [best.normal_a], [best.normal_b], np.tile(report.plane.normal, (len(disc), 1)),
        ])
    scene = PointCloud(
        points=np.vstack([cloud.points, [best.contact_a], [best.contact_b], disc]),
        colors=np.vstack([base_colors, marker_colors]),
        normals=normals,
        viewpoint=cloud.viewpoint,
    )
    comments = [f"markers object={len(cloud)} contacts=2 plane={len(disc)}"]
    return write_ply(path, scene, fmt, comments)
