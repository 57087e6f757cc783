"""Interchange formats: g2o pose graphs, TUM trajectories, PFM/PPM images.

The g2o dialect covers VERTEX_SE2 / EDGE_SE2 / VERTEX_SE3:QUAT /
EDGE_SE3:QUAT plus comment lines. Graph features with no native g2o record
(depth priors, per-edge scale variables, anchor priors) are carried as
comment-prefixed extension records::

    # MARVO DEPTH_PRIOR <id> <z> <sigma>
    # MARVO SCALE_EDGE <i> <j> <s0>
    # MARVO ANCHOR_SE2 <id> <x> <y> <theta> <6 upper-tri info floats>
    # MARVO ANCHOR_SE3 <id> <x y z qx qy qz qw> <21 upper-tri info floats>

so third-party readers see ordinary comments. Writing is canonical:
comments, then vertices in ascending id order, then edges in document
order, every float at 17 significant digits (round-trip exact for
doubles). Parsers accept str or bytes (decoded latin-1), never raise
anything but the typed errors below, and collect unknown record tags as
warnings instead of failing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import lie
from .errors import (
    MalformedHeader,
    MalformedRecord,
    MixedDimension,
    TruncatedPayload,
)
from .graph import FactorKind, GraphBuilder, PoseGraph


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _upper_tri(m: np.ndarray) -> tuple:
    n = m.shape[0]
    return tuple(float(m[i, j]) for i in range(n) for j in range(i, n))


def _from_upper_tri(vals, n: int) -> np.ndarray:
    m = np.zeros((n, n))
    k = 0
    for i in range(n):
        for j in range(i, n):
            m[i, j] = vals[k]
            m[j, i] = vals[k]
            k += 1
    return m


# ---------------------------------------------------------------------------
# g2o documents
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VertexSE2:
    id: int
    x: float
    y: float
    theta: float


@dataclass(frozen=True)
class VertexSE3:
    id: int
    xyz: tuple  # (x, y, z)
    quat: tuple  # (qx, qy, qz, qw)


@dataclass(frozen=True)
class EdgeSE2:
    i: int
    j: int
    dx: float
    dy: float
    dtheta: float
    info_upper: tuple  # 6 floats, row-major upper triangle

    def info_matrix(self) -> np.ndarray:
        return _from_upper_tri(self.info_upper, 3)


@dataclass(frozen=True)
class EdgeSE3:
    i: int
    j: int
    xyz: tuple
    quat: tuple
    info_upper: tuple  # 21 floats

    def info_matrix(self) -> np.ndarray:
        return _from_upper_tri(self.info_upper, 6)


@dataclass
class G2oDocument:
    comments: list = field(default_factory=list)
    vertices_se2: list = field(default_factory=list)
    vertices_se3: list = field(default_factory=list)
    edges_se2: list = field(default_factory=list)
    edges_se3: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def __eq__(self, other):
        """Canonical content equality: vertex order is irrelevant, edge and
        comment order matter, warnings do not."""
        if not isinstance(other, G2oDocument):
            return NotImplemented
        key = lambda v: v.id
        return (self.comments == other.comments
                and sorted(self.vertices_se2, key=key) == sorted(other.vertices_se2, key=key)
                and sorted(self.vertices_se3, key=key) == sorted(other.vertices_se3, key=key)
                and self.edges_se2 == other.edges_se2
                and self.edges_se3 == other.edges_se3)

    @property
    def is_empty(self) -> bool:
        return not (self.comments or self.vertices_se2 or self.vertices_se3
                    or self.edges_se2 or self.edges_se3)


def _as_text(data) -> str:
    if isinstance(data, (bytes, bytearray)):
        return bytes(data).decode("latin-1")
    return data


def _floats(tokens, line_no):
    out = []
    for t in tokens:
        try:
            out.append(float(t))
        except ValueError:
            raise MalformedRecord(line_no, f"non-numeric token {t!r}") from None
    return out


def _int_token(token, line_no):
    try:
        return int(token)
    except ValueError:
        raise MalformedRecord(line_no, f"non-integer id {token!r}") from None


def parse_g2o(data) -> G2oDocument:
    """Parse g2o text (str or bytes). Unknown tags become warnings."""
    text = _as_text(data)
    doc = G2oDocument()
    seen_ids: dict[int, int] = {}
    edge_lines = []  # (line_no, i, j) for end-of-parse endpoint validation
    for line_no, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r").strip()
        if not line:
            continue
        if line.startswith("#"):
            doc.comments.append(line)
            continue
        tokens = line.split()
        tag = tokens[0]
        if tag == "VERTEX_SE2":
            if len(tokens) != 5:
                raise MalformedRecord(line_no, f"VERTEX_SE2 needs 4 fields, got {len(tokens) - 1}")
            vid = _int_token(tokens[1], line_no)
            if vid in seen_ids:
                raise MalformedRecord(line_no, f"duplicate vertex id {vid}")
            seen_ids[vid] = line_no
            x, y, th = _floats(tokens[2:], line_no)
            doc.vertices_se2.append(VertexSE2(vid, x, y, th))
        elif tag == "VERTEX_SE3:QUAT":
            if len(tokens) != 9:
                raise MalformedRecord(line_no, f"VERTEX_SE3:QUAT needs 8 fields, got {len(tokens) - 1}")
            vid = _int_token(tokens[1], line_no)
            if vid in seen_ids:
                raise MalformedRecord(line_no, f"duplicate vertex id {vid}")
            seen_ids[vid] = line_no
            vals = _floats(tokens[2:], line_no)
            doc.vertices_se3.append(VertexSE3(vid, tuple(vals[:3]), tuple(vals[3:])))
        elif tag == "EDGE_SE2":
            if len(tokens) != 12:
                raise MalformedRecord(line_no, f"EDGE_SE2 needs 11 fields, got {len(tokens) - 1}")
            i = _int_token(tokens[1], line_no)
            j = _int_token(tokens[2], line_no)
            vals = _floats(tokens[3:], line_no)
            doc.edges_se2.append(EdgeSE2(i, j, vals[0], vals[1], vals[2], tuple(vals[3:])))
            edge_lines.append((line_no, i, j))
        elif tag == "EDGE_SE3:QUAT":
            if len(tokens) != 31:
                raise MalformedRecord(line_no, f"EDGE_SE3:QUAT needs 30 fields, got {len(tokens) - 1}")
            i = _int_token(tokens[1], line_no)
            j = _int_token(tokens[2], line_no)
            vals = _floats(tokens[3:], line_no)
            doc.edges_se3.append(EdgeSE3(i, j, tuple(vals[:3]), tuple(vals[3:7]),
                                         tuple(vals[7:])))
            edge_lines.append((line_no, i, j))
        else:
            doc.warnings.append(f"line {line_no}: unknown record tag {tag!r}")
    for line_no, i, j in edge_lines:
        for endpoint in (i, j):
            if endpoint not in seen_ids:
                raise MalformedRecord(line_no, f"edge references undeclared vertex {endpoint}")
    return doc


def write_g2o(doc: G2oDocument) -> str:
    """Canonical serialization; empty document gives an empty string."""
    lines = []
    lines.extend(doc.comments)
    for v in sorted(doc.vertices_se2, key=lambda v: v.id):
        lines.append(f"VERTEX_SE2 {v.id} {_fmt(v.x)} {_fmt(v.y)} {_fmt(v.theta)}")
    for v in sorted(doc.vertices_se3, key=lambda v: v.id):
        nums = " ".join(_fmt(c) for c in (*v.xyz, *v.quat))
        lines.append(f"VERTEX_SE3:QUAT {v.id} {nums}")
    for e in doc.edges_se2:
        nums = " ".join(_fmt(c) for c in (e.dx, e.dy, e.dtheta, *e.info_upper))
        lines.append(f"EDGE_SE2 {e.i} {e.j} {nums}")
    for e in doc.edges_se3:
        nums = " ".join(_fmt(c) for c in (*e.xyz, *e.quat, *e.info_upper))
        lines.append(f"EDGE_SE3:QUAT {e.i} {e.j} {nums}")
    if not lines:
        return ""
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# graph <-> document
# ---------------------------------------------------------------------------

_EXT_PREFIX = "# MARVO"


def _parse_extensions(doc: G2oDocument):
    depth, scale_edges, anchors = [], {}, []
    for c in doc.comments:
        tokens = c.lstrip("#").split()
        if not tokens or tokens[0] != "MARVO":
            continue
        kind = tokens[1] if len(tokens) > 1 else ""
        body = tokens[2:]
        if kind == "DEPTH_PRIOR":
            if len(body) != 3:
                raise MalformedRecord(0, "DEPTH_PRIOR extension needs id z sigma")
            depth.append((_int_token(body[0], 0), *_floats(body[1:], 0)))
        elif kind == "SCALE_EDGE":
            if len(body) != 3:
                raise MalformedRecord(0, "SCALE_EDGE extension needs i j s0")
            i, j = _int_token(body[0], 0), _int_token(body[1], 0)
            (s0,) = _floats(body[2:], 0)
            scale_edges.setdefault((i, j), []).append(s0)
        elif kind == "ANCHOR_SE2":
            if len(body) != 10:
                raise MalformedRecord(0, "ANCHOR_SE2 extension needs id pose(3) info(6)")
            vals = _floats(body[1:], 0)
            anchors.append(("planar", _int_token(body[0], 0), vals[:3], vals[3:]))
        elif kind == "ANCHOR_SE3":
            if len(body) != 29:
                raise MalformedRecord(0, "ANCHOR_SE3 extension needs id pose(7) info(21)")
            vals = _floats(body[1:], 0)
            anchors.append(("spatial", _int_token(body[0], 0), vals[:7], vals[7:]))
        else:
            raise MalformedRecord(0, f"unknown MARVO extension {kind!r}")
    return depth, scale_edges, anchors


def _pose3_from_floats(vals):
    x, y, z, qx, qy, qz, qw = vals
    return lie.Pose3(np.array([x, y, z]), lie.Rot3(qw, qx, qy, qz))


def to_pose_graph(doc: G2oDocument) -> PoseGraph:
    """Build a PoseGraph from a document; |i-j| = 1 edges become odometry,
    everything else loop closures (or scaled visual edges when a SCALE_EDGE
    extension names the pair)."""
    has2 = bool(doc.vertices_se2 or doc.edges_se2)
    has3 = bool(doc.vertices_se3 or doc.edges_se3)
    if has2 and has3:
        raise MixedDimension("document mixes SE2 and SE3 records")
    depth, scale_edges, anchors = _parse_extensions(doc)
    planar = not has3
    b = GraphBuilder("planar" if planar else "spatial")
    if planar:
        for v in sorted(doc.vertices_se2, key=lambda v: v.id):
            b.add_pose(v.id, lie.Pose2.from_xytheta(v.x, v.y, v.theta))
    else:
        for v in sorted(doc.vertices_se3, key=lambda v: v.id):
            b.add_pose(v.id, _pose3_from_floats((*v.xyz, *v.quat)))
    scale_edges = {k: list(v) for k, v in scale_edges.items()}
    for e in (doc.edges_se2 if planar else doc.edges_se3):
        if planar:
            m = lie.Pose2.from_xytheta(e.dx, e.dy, e.dtheta)
        else:
            m = _pose3_from_floats((*e.xyz, *e.quat))
        pending = scale_edges.get((e.i, e.j))
        if pending:
            b.add_visual_scaled(e.i, e.j, m, e.info_matrix(), s0=pending.pop(0))
        elif abs(e.i - e.j) == 1:
            b.add_odometry(e.i, e.j, m, e.info_matrix())
        else:
            b.add_loop_closure(e.i, e.j, m, e.info_matrix())
    for vid, z, sigma in depth:
        b.add_depth_prior(vid, z, [[1.0 / (sigma * sigma)]])
    for dim, vid, pose_vals, info_vals in anchors:
        if (dim == "planar") != planar:
            raise MixedDimension("anchor extension dimension differs from graph")
        if planar:
            prior = lie.Pose2.from_xytheta(*pose_vals)
            info = _from_upper_tri(info_vals, 3)
        else:
            prior = _pose3_from_floats(pose_vals)
            info = _from_upper_tri(info_vals, 6)
        b.add_anchor(vid, prior, info)
    return b.build(require_anchor=False)


def from_pose_graph(g: PoseGraph) -> G2oDocument:
    """Serialize a graph; extension comments carry what g2o cannot."""
    doc = G2oDocument()
    planar = g.dimension == "planar"
    scale_init = {vid.index: init for vid, init in g.variables if vid.kind == "scale"}
    for vid, pose in g.variables:
        if vid.kind == "scale":
            continue
        if planar:
            doc.vertices_se2.append(VertexSE2(vid.index, pose.x, pose.y, pose.theta))
        else:
            q = pose.rot
            doc.vertices_se3.append(VertexSE3(vid.index, tuple(pose.t),
                                              (q.x, q.y, q.z, q.w)))
    # scaled edges are emitted before plain edges so that a SCALE_EDGE
    # extension always pairs with the first (i, j) edge in document order,
    # keeping the pairing unambiguous when an odometry edge shares endpoints
    binary = [f for f in g.factors if f.kind == FactorKind.VISUAL_SCALED]
    binary += [f for f in g.factors if f.kind in (FactorKind.ODOMETRY, FactorKind.LOOP_CLOSURE)]
    for f in binary:
        i, j = f.endpoints[0].index, f.endpoints[1].index
        m = f.measurement
        if planar:
            doc.edges_se2.append(EdgeSE2(i, j, m.x, m.y, m.theta, _upper_tri(f.info)))
        else:
            q = m.rot
            doc.edges_se3.append(EdgeSE3(i, j, tuple(m.t), (q.x, q.y, q.z, q.w),
                                         _upper_tri(f.info)))
        if f.kind == FactorKind.VISUAL_SCALED:
            s0 = math.exp(scale_init[f.scale_id.index])
            doc.comments.append(f"{_EXT_PREFIX} SCALE_EDGE {i} {j} {_fmt(s0)}")
    for f in g.factors:
        if f.kind == FactorKind.DEPTH_PRIOR:
            sigma = 1.0 / math.sqrt(float(f.info[0, 0]))
            doc.comments.append(f"{_EXT_PREFIX} DEPTH_PRIOR {f.endpoints[0].index} "
                                f"{_fmt(f.measurement)} {_fmt(sigma)}")
        elif f.kind == FactorKind.ANCHOR_PRIOR:
            p = f.measurement
            if planar:
                body = " ".join(_fmt(v) for v in (p.x, p.y, p.theta, *_upper_tri(f.info)))
                doc.comments.append(f"{_EXT_PREFIX} ANCHOR_SE2 {f.endpoints[0].index} {body}")
            else:
                q = p.rot
                body = " ".join(_fmt(v) for v in (*p.t, q.x, q.y, q.z, q.w,
                                                  *_upper_tri(f.info)))
                doc.comments.append(f"{_EXT_PREFIX} ANCHOR_SE3 {f.endpoints[0].index} {body}")
    return doc


# ---------------------------------------------------------------------------
# TUM trajectories
# ---------------------------------------------------------------------------


@dataclass
class TumTrajectory:
    """Rows of (timestamp, x, y, z, qx, qy, qz, qw)."""

    rows: np.ndarray  # (n, 8) float64

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float).reshape(-1, 8)

    def __eq__(self, other):
        if not isinstance(other, TumTrajectory):
            return NotImplemented
        return self.rows.shape == other.rows.shape and bool(np.all(self.rows == other.rows))

    def __len__(self):
        return self.rows.shape[0]

    @property
    def timestamps(self) -> np.ndarray:
        return self.rows[:, 0]

    @property
    def positions(self) -> np.ndarray:
        return self.rows[:, 1:4]

    def poses(self) -> list:
        out = []
        for row in self.rows:
            out.append(lie.Pose3(row[1:4], lie.Rot3(row[7], row[4], row[5], row[6])))
        return out

    @staticmethod
    def from_poses(timestamps, poses) -> "TumTrajectory":
        rows = np.zeros((len(poses), 8))
        for k, (t, p) in enumerate(zip(timestamps, poses)):
            if isinstance(p, lie.Pose2):
                p = lie.lift_se2_to_se3(p, 0.0, 0.0, 0.0)
            q = p.rot
            rows[k] = [t, p.t[0], p.t[1], p.t[2], q.x, q.y, q.z, q.w]
        return TumTrajectory(rows)


def parse_tum(data) -> TumTrajectory:
    text = _as_text(data)
    rows = []
    last_t = None
    for line_no, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r").strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) != 8:
            raise MalformedRecord(line_no, f"expected 8 columns, got {len(tokens)}")
        vals = _floats(tokens, line_no)
        if last_t is not None and vals[0] <= last_t:
            raise MalformedRecord(line_no, f"timestamp {vals[0]} not increasing")
        last_t = vals[0]
        qn = math.sqrt(sum(v * v for v in vals[4:]))
        if abs(qn - 1.0) > 1e-6:
            raise MalformedRecord(line_no, f"quaternion norm {qn} not within 1e-6 of 1")
        rows.append(vals)
    return TumTrajectory(np.array(rows).reshape(-1, 8))


def write_tum(traj: TumTrajectory) -> str:
    lines = [" ".join(_fmt(v) for v in row) for row in traj.rows]
    if not lines:
        return ""
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# PFM / PPM images
# ---------------------------------------------------------------------------


def read_pfm(data: bytes):
    """Returns (image, scale). Image is float32, (h, w) gray or (h, w, 3)
    color, top row first; negative header scale means little-endian payload."""
    if not isinstance(data, (bytes, bytearray)):
        raise MalformedHeader("PFM input must be bytes")
    data = bytes(data)

    def next_line(pos):
        end = data.find(b"\n", pos)
        if end < 0:
            raise MalformedHeader("unterminated PFM header line")
        return data[pos:end].rstrip(b"\r"), end + 1

    magic, pos = next_line(0)
    if magic == b"PF":
        channels = 3
    elif magic == b"Pf":
        channels = 1
    else:
        raise MalformedHeader(f"bad PFM magic {magic[:8]!r}")
    dims, pos = next_line(pos)
    parts = dims.split()
    if len(parts) != 2:
        raise MalformedHeader(f"bad PFM dimensions line {dims!r}")
    try:
        w, h = int(parts[0]), int(parts[1])
    except ValueError:
        raise MalformedHeader(f"non-integer PFM dimensions {dims!r}") from None
    if w <= 0 or h <= 0:
        raise MalformedHeader(f"non-positive PFM dimensions {w}x{h}")
    scale_line, pos = next_line(pos)
    try:
        scale = float(scale_line)
    except ValueError:
        raise MalformedHeader(f"non-numeric PFM scale {scale_line!r}") from None
    if scale == 0.0 or not math.isfinite(scale):
        raise MalformedHeader(f"invalid PFM scale {scale}")
    count = w * h * channels
    payload = data[pos:pos + 4 * count]
    if len(payload) < 4 * count:
        raise TruncatedPayload(f"PFM payload has {len(payload)} bytes, needs {4 * count}")
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    if channels == 3:
        arr = arr.reshape(h, w, 3)
    else:
        arr = arr.reshape(h, w)
    return np.flipud(arr).copy(), abs(scale)


def write_pfm(img: np.ndarray, scale: float = 1.0) -> bytes:
    """Little-endian PFM (negative scale in the header), rows bottom-up."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        magic = b"Pf"
        h, w = img.shape
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"PF"
        h, w = img.shape[:2]
    else:
        raise ValueError(f"image must be (h, w) or (h, w, 3), got {img.shape}")
    if scale <= 0:
        raise ValueError("scale magnitude must be positive")
    header = magic + b"\n" + f"{w} {h}".encode() + b"\n" + repr(-float(scale)).encode() + b"\n"
    payload = np.flipud(img).astype("<f4").tobytes()
    return header + payload


def write_ppm_preview(img: np.ndarray) -> bytes:
    """8-bit P6 preview of a float image: gamma 2.2, clamped to [0, 255]."""
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must be (h, w) or (h, w, 3), got {img.shape}")
    h, w = img.shape[:2]
    encoded = np.clip(img, 0.0, 1.0) ** (1.0 / 2.2)
    bytes8 = np.clip(np.rint(encoded * 255.0), 0, 255).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode() + bytes8.tobytes()
