"""Internal-domain geometry: parametric families, triangulation, mesh files.

Two families are generated:

* a channel ``[-L/2, L/2] x [0, W]`` with an optional circular obstacle of
  radius ``R`` centred at ``(0, W/2 + delta)``; port 1 is the left side,
  port 2 the right side;
* a disc of radius ``R_d`` centred at the origin with straight stubs
  attached along chords, plus an optional obstacle centred at
  ``(0, delta)``.  A stub of width ``w`` and length ``l`` is the rectangle
  between the chord (at distance ``sqrt(R_d^2 - w^2/4)`` from the centre)
  and the port, ``l`` further out.  The waveguide does not depend on ``l``:
  the stub is simply part of the attached end moved into the mesh.

Each port carries an arc-length coordinate ``y`` in ``[0, a]`` that starts
at the endpoint with the smaller ``y`` coordinate (smaller ``x`` on ties).
"""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import shapely

from ._mesher import triangulate_loops
from .errors import InvalidGeometry, InvariantViolation, ParseError

MIN_ANGLE = 20.0
MESH_HEADER = "wgmesh 1"


class DomainKind(enum.Enum):
    CHANNEL = "channel"
    DISC = "disc"
    EXTERNAL = "external"


@dataclass(frozen=True)
class Stub:
    width: float
    length: float = 0.0
    angle: float = 0.0   # direction of the stub axis, degrees from +x


@dataclass(frozen=True)
class DomainSpec:
    kind: DomainKind = DomainKind.CHANNEL
    channel_width: float = 2.0
    channel_length: float = 4.0
    obstacle_radius: float = 0.0
    obstacle_offset: float = 0.0
    disc_radius: float = 2.0
    stubs: tuple = ()
    refinement: int = 30
    mesh_path: str | None = None

    @classmethod
    def channel(cls, width=2.0, length=4.0, radius=0.0, offset=0.0, refinement=30):
        return cls(DomainKind.CHANNEL, channel_width=width, channel_length=length,
                   obstacle_radius=radius, obstacle_offset=offset, refinement=refinement)

    @classmethod
    def disc(cls, radius=2.0, stubs=(), obstacle_radius=0.0, obstacle_offset=0.0,
             refinement=30):
        stubs = tuple(s if isinstance(s, Stub) else Stub(*s) for s in stubs)
        return cls(DomainKind.DISC, disc_radius=radius, stubs=stubs,
                   obstacle_radius=obstacle_radius, obstacle_offset=obstacle_offset,
                   refinement=refinement)

    @classmethod
    def external(cls, path):
        return cls(DomainKind.EXTERNAL, mesh_path=str(path))

    def validate(self):
        if self.kind is DomainKind.EXTERNAL:
            if not self.mesh_path:
                raise InvalidGeometry("an external domain needs a mesh path")
            return self
        if int(self.refinement) != self.refinement or self.refinement < 4:
            raise InvalidGeometry(f"refinement must be an integer >= 4, got {self.refinement}")
        R, d = self.obstacle_radius, self.obstacle_offset
        if R < 0:
            raise InvalidGeometry("obstacle radius must be nonnegative")
        if self.kind is DomainKind.CHANNEL:
            W, L = self.channel_width, self.channel_length
            if W <= 0 or L <= 0:
                raise InvalidGeometry("channel width and length must be positive")
            if R > 0 and not R + abs(d) < W / 2:
                raise InvalidGeometry(f"obstacle (R={R}, offset={d}) is not strictly inside the channel")
            if R > 0 and not R < L / 2:
                raise InvalidGeometry("obstacle reaches the ports")
            return self
        Rd = self.disc_radius
        if Rd <= 0:
            raise InvalidGeometry("disc radius must be positive")
        arcs = []
        for s in self.stubs:
            if not 0 < s.width < 2 * Rd:
                raise InvalidGeometry(f"stub width {s.width} outside (0, {2 * Rd})")
            if s.length < 0:
                raise InvalidGeometry("stub length must be nonnegative")
            half = math.asin(s.width / (2 * Rd))
            arcs.append((math.radians(s.angle) % (2 * math.pi), half))
        for i in range(len(arcs)):
            for j in range(i + 1, len(arcs)):
                gap = abs((arcs[i][0] - arcs[j][0] + math.pi) % (2 * math.pi) - math.pi)
                if gap <= arcs[i][1] + arcs[j][1]:
                    raise InvalidGeometry(f"stubs {i + 1} and {j + 1} overlap on the circle")
        return self

    def port_widths(self):
        if self.kind is DomainKind.CHANNEL:
            return (self.channel_width, self.channel_width)
        if self.kind is DomainKind.DISC:
            return tuple(s.width for s in self.stubs)
        raise InvalidGeometry("port widths of an external mesh come from the mesh")

    def analytic_area(self):
        R = self.obstacle_radius
        hole = math.pi * R * R
        if self.kind is DomainKind.CHANNEL:
            return self.channel_width * self.channel_length - hole
        if self.kind is DomainKind.DISC:
            Rd = self.disc_radius
            area = math.pi * Rd * Rd - hole
            for s in self.stubs:
                theta = 2 * math.asin(s.width / (2 * Rd))
                area += s.width * s.length - 0.5 * Rd * Rd * (theta - math.sin(theta))
            return area
        raise InvalidGeometry("no analytic area for an external mesh")

    def to_dict(self):
        return {
            "kind": self.kind.value, "channel_width": self.channel_width,
            "channel_length": self.channel_length, "obstacle_radius": self.obstacle_radius,
            "obstacle_offset": self.obstacle_offset, "disc_radius": self.disc_radius,
            "stubs": [[s.width, s.length, s.angle] for s in self.stubs],
            "refinement": self.refinement, "mesh_path": self.mesh_path,
        }


@dataclass(frozen=True)
class Port:
    tag: int
    vertices: np.ndarray   # ordered chain of vertex indices
    edges: np.ndarray      # boundary-edge indices, in chain order
    start: np.ndarray      # point with y = 0
    direction: np.ndarray  # unit vector of increasing y
    width: float

    def arclength(self, points):
        return (np.asarray(points) - self.start) @ self.direction


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_tags: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices, float).reshape(-1, 2))
        object.__setattr__(self, "triangles", _frozen(self.triangles, np.int64).reshape(-1, 3))
        object.__setattr__(self, "edges", _frozen(self.edges, np.int64).reshape(-1, 2))
        object.__setattr__(self, "edge_tags", _frozen(self.edge_tags, np.int64).reshape(-1))

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("vertices", "triangles", "edges", "edge_tags"))

    __hash__ = None

    @property
    def n_ports(self):
        tags = self.edge_tags[self.edge_tags > 0]
        return int(tags.max()) if len(tags) else 0

    @cached_property
    def ports(self):
        return tuple(_port_chain(self, k) for k in range(1, self.n_ports + 1))

    @property
    def port_widths(self):
        return tuple(p.width for p in self.ports)

    def triangle_areas(self):
        p = self.vertices
        t = self.triangles
        d1 = p[t[:, 1]] - p[t[:, 0]]
        d2 = p[t[:, 2]] - p[t[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def area(self):
        return float(self.triangle_areas().sum())

    def min_angle(self):
        from ._mesher import _min_angles
        return float(_min_angles(self.vertices, self.triangles).min())

    def boundary_edge_lengths(self):
        p = self.vertices
        return np.linalg.norm(p[self.edges[:, 1]] - p[self.edges[:, 0]], axis=1)

    def to_text(self):
        lines = [MESH_HEADER, f"{len(self.vertices)} {len(self.edges)} {len(self.triangles)}"]
        lines += [f"{x!r} {y!r}" for x, y in self.vertices.tolist()]
        lines += [f"{i} {j} {k}" for i, j, k in self.triangles.tolist()]
        lines += [f"{i} {j} {t}" for (i, j), t in zip(self.edges.tolist(), self.edge_tags.tolist())]
        return "\n".join(lines) + "\n"

    @cached_property
    def fingerprint(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def _port_chain(mesh, k):
    sel = np.flatnonzero(mesh.edge_tags == k)
    if len(sel) == 0:
        raise InvariantViolation("port-chain", f"port {k} has no edges")
    adj = {}
    for e in sel:
        i, j = mesh.edges[e]
        adj.setdefault(int(i), []).append((int(j), int(e)))
        adj.setdefault(int(j), []).append((int(i), int(e)))
    ends = [v for v, nb in adj.items() if len(nb) == 1]
    if len(ends) != 2 or any(len(nb) > 2 for nb in adj.values()):
        raise InvariantViolation("port-chain", f"port {k} edges do not form a single open chain")
    p = mesh.vertices
    a, b = ends
    key = lambda v: (round(p[v][1], 12), round(p[v][0], 12))
    start = a if key(a) <= key(b) else b
    chain, chain_edges, prev, cur = [start], [], None, start
    while True:
        nxt = [(v, e) for v, e in adj[cur] if v != prev]
        if not nxt:
            break
        prev, (cur, e) = cur, nxt[0]
        chain.append(cur)
        chain_edges.append(e)
    if len(chain_edges) != len(sel):
        raise InvariantViolation("port-chain", f"port {k} edges do not form a single open chain")
    chain = np.array(chain)
    d = p[chain[-1]] - p[chain[0]]
    width = float(np.hypot(*d))
    u = d / width
    off = (p[chain] - p[chain[0]]) @ np.array([-u[1], u[0]])
    if np.abs(off).max() > 1e-9 * max(1.0, width):
        raise InvariantViolation("port-straight", f"port {k} is not a straight segment")
    y = (p[chain] - p[chain[0]]) @ u
    if np.any(np.diff(y) <= 0):
        raise InvariantViolation("port-straight", f"port {k} folds back on itself")
    return Port(k, _frozen(chain, np.int64), _frozen(chain_edges, np.int64),
                _frozen(p[chain[0]], float), _frozen(u, float), width)


def check_structure(mesh):
    """Raise InvariantViolation unless ``mesh`` is a valid waveguide mesh."""
    V = len(mesh.vertices)
    for name, arr in (("triangles", mesh.triangles), ("edges", mesh.edges)):
        if len(arr) and (arr.min() < 0 or arr.max() >= V):
            raise InvariantViolation("indices", f"{name} reference missing vertices")
    if len(mesh.triangles) == 0:
        raise InvariantViolation("conforming", "mesh has no triangles")
    if np.any(mesh.triangle_areas() <= 0):
        raise InvariantViolation("orientation", "a triangle has nonpositive signed area")
    t = mesh.triangles
    allE = np.sort(np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(allE, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise InvariantViolation("conforming", "an edge is shared by more than two triangles")
    single = {tuple(e) for e in uniq[counts == 1].tolist()}
    bnd = [tuple(e) for e in np.sort(mesh.edges, axis=1).tolist()]
    if len(set(bnd)) != len(bnd):
        raise InvariantViolation("conforming", "duplicate boundary edge")
    if set(bnd) != single:
        raise InvariantViolation(
            "conforming", "boundary edges differ from the edges owned by a single triangle")
    tags = set(mesh.edge_tags.tolist())
    if min(tags) < 0:
        raise InvariantViolation("tags", "negative edge tag")
    ports = sorted(t for t in tags if t > 0)
    if ports != list(range(1, len(ports) + 1)):
        raise InvariantViolation("tags", f"port tags must be 1..K, got {ports}")
    mesh.ports  # chains, straightness
    return mesh


def check_quality(mesh, refinement):
    """Raise InvariantViolation unless angles and boundary spacing are in bounds."""
    ang = mesh.min_angle()
    if ang < MIN_ANGLE - 1e-9:
        raise InvariantViolation("min-angle", f"minimum angle {ang:.3f} below {MIN_ANGLE}")
    lens = mesh.boundary_edge_lengths() * refinement
    if lens.min() < 0.5 - 1e-9 or lens.max() > 2 + 1e-9:
        raise InvariantViolation(
            "boundary-edge-length",
            f"boundary edges span [{lens.min():.3f}, {lens.max():.3f}]/n, need [0.5, 2]/n")
    return mesh


# boundary construction ----------------------------------------------------

class _Loop:
    """Closed polyline under construction; segment i starts at point i."""

    def __init__(self):
        self.points, self.tags = [], []

    def line(self, a, b, tag, n):
        a, b = np.asarray(a, float), np.asarray(b, float)
        k = max(1, math.ceil(np.hypot(*(b - a)) * n - 1e-9))
        for i in range(k):
            self.points.append(a + (b - a) * (i / k))
            self.tags.append(tag)

    def arc(self, c, R, t0, t1, n, tag=0, k=None):
        """Arc from angle t0 to t1 (either sense), endpoints exact."""
        if k is None:
            k = max(1, math.ceil(abs(t1 - t0) * R * n - 1e-9))
        dt = (t1 - t0) / k
        # interior points pushed out so each chord keeps the sector's area
        reff = R * math.sqrt(abs(dt) / math.sin(abs(dt))) if k > 1 else R
        for i in range(k):
            r = R if i == 0 else reff
            t = t0 + i * dt
            self.points.append(np.array([c[0] + r * math.cos(t), c[1] + r * math.sin(t)]))
            self.tags.append(tag)

    def circle(self, c, R, k, clockwise):
        """Full circle as a polygon with ``k`` sides of the same area."""
        th = 2 * math.pi / k
        reff = R * math.sqrt(th / math.sin(th))
        sgn = -1.0 if clockwise else 1.0
        for i in range(k):
            t = sgn * i * th
            self.points.append(np.array([c[0] + reff * math.cos(t), c[1] + reff * math.sin(t)]))
            self.tags.append(0)

    def done(self):
        return np.array(self.points), np.array(self.tags, dtype=int)


def _channel_loops(spec):
    n = spec.refinement
    W, L = spec.channel_width, spec.channel_length
    R, d = spec.obstacle_radius, spec.obstacle_offset
    outer = _Loop()
    outer.line((-L / 2, 0), (L / 2, 0), 0, n)
    outer.line((L / 2, 0), (L / 2, W), 2, n)
    outer.line((L / 2, W), (-L / 2, W), 0, n)
    outer.line((-L / 2, W), (-L / 2, 0), 1, n)
    loops = [outer.done()]
    if R > 0:
        hole = _Loop()
        hole.circle((0.0, W / 2 + d), R, math.ceil(2 * math.pi * R * n - 1e-9), clockwise=True)
        loops.append(hole.done())
    return loops


def _half_channel_loops(spec):
    """Upper half of a symmetric channel; the centreline carries tag -1."""
    n = spec.refinement
    W, L = spec.channel_width, spec.channel_length
    R = spec.obstacle_radius
    c = W / 2
    lp = _Loop()
    lp.line((L / 2, c), (L / 2, W), 2, n)
    lp.line((L / 2, W), (-L / 2, W), 0, n)
    lp.line((-L / 2, W), (-L / 2, c), 1, n)
    if R > 0:
        lp.line((-L / 2, c), (-R, c), -1, n)
        k = math.ceil(math.pi * R * n - 1e-9)
        lp.arc((0.0, c), R, math.pi, 0.0, n, k=k)
        lp.line((R, c), (L / 2, c), -1, n)
    else:
        lp.line((-L / 2, c), (L / 2, c), -1, n)
    pts, tags = lp.done()
    pts[np.abs(pts[:, 1] - c) < 1e-12, 1] = c
    return [(pts, tags)]


def _disc_loops(spec):
    n = spec.refinement
    Rd = spec.disc_radius
    outer = _Loop()
    stubs = sorted(spec.stubs, key=lambda s: math.radians(s.angle) % (2 * math.pi))
    port_of = {id(s): i + 1 for i, s in enumerate(spec.stubs)}
    if not stubs:
        outer.circle((0.0, 0.0), Rd, math.ceil(2 * math.pi * Rd * n - 1e-9), clockwise=False)
    # walk ccw: stub, then the arc up to the next stub
    info = []
    for s in stubs:
        phi = math.radians(s.angle) % (2 * math.pi)
        half = math.asin(s.width / (2 * Rd))
        info.append((phi, half, s))
    for i, (phi, half, s) in enumerate(info):
        u = np.array([math.cos(phi), math.sin(phi)])
        v = np.array([-u[1], u[0]])
        h = math.sqrt(Rd * Rd - s.width ** 2 / 4)
        p0 = h * u - 0.5 * s.width * v
        p1 = (h + s.length) * u - 0.5 * s.width * v
        p2 = (h + s.length) * u + 0.5 * s.width * v
        p3 = h * u + 0.5 * s.width * v
        if s.length > 0:
            outer.line(p0, p1, 0, n)
        outer.line(p1, p2, port_of[id(s)], n)
        if s.length > 0:
            outer.line(p2, p3, 0, n)
        nphi, nhalf, _ = info[(i + 1) % len(info)]
        t0 = phi + half
        t1 = nphi - nhalf
        if t1 <= t0:
            t1 += 2 * math.pi
        outer.arc((0.0, 0.0), Rd, t0, t1, n)
    loops = [outer.done()]
    R = spec.obstacle_radius
    if R > 0:
        hole = _Loop()
        hole.circle((0.0, spec.obstacle_offset), R, math.ceil(2 * math.pi * R * n - 1e-9),
                    clockwise=True)
        hp = shapely.Polygon(hole.points)
        op = shapely.Polygon(loops[0][0])
        if not op.contains(hp) or op.exterior.distance(hp) < 1.0 / n:
            raise InvalidGeometry("obstacle is not strictly inside the disc")
        loops.append(hole.done())
    return loops


def _reflect_merge(v, t, e, tags, c):
    """Mirror a half mesh about ``y = c`` and glue along the centreline."""
    on = np.abs(v[:, 1] - c) == 0
    nv = len(v)
    # centreline vertices map to themselves
    off = np.flatnonzero(~on)
    new_idx = np.full(nv, -1)
    new_idx[off] = nv + np.arange(len(off))
    mirror_index = np.where(on, np.arange(nv), new_idx)
    vm = v[off].copy()
    vm[:, 1] = 2 * c - vm[:, 1]
    verts = np.vstack([v, vm])
    tm = mirror_index[t][:, [0, 2, 1]]
    keep = tags >= 0
    em = mirror_index[e[keep]][:, [1, 0]]
    edges = np.vstack([e[keep], em])
    etags = np.concatenate([tags[keep], tags[keep]])
    return verts, np.vstack([t, tm]), edges, etags


def _orient_edges(verts, tri, edges):
    """Orient each boundary edge like its owning (ccw) triangle."""
    own = {}
    for a, b in ((0, 1), (1, 2), (2, 0)):
        for i, j in zip(tri[:, a].tolist(), tri[:, b].tolist()):
            own[(i, j)] = True
    out = edges.copy()
    for r, (i, j) in enumerate(edges.tolist()):
        if (i, j) not in own:
            out[r] = (j, i)
    return out


def build_domain(spec):
    """Triangulate a parametric domain; the result satisfies all mesh invariants."""
    spec.validate()
    n = spec.refinement
    h = 1.0 / n
    if spec.kind is DomainKind.EXTERNAL:
        raise InvalidGeometry("external meshes are read with read_mesh, not generated")
    if spec.kind is DomainKind.CHANNEL and spec.obstacle_offset == 0:
        v, t, e, tags = triangulate_loops(_half_channel_loops(spec), h, MIN_ANGLE)
        v, t, e, tags = _reflect_merge(v, t, e, tags, spec.channel_width / 2)
    elif spec.kind is DomainKind.CHANNEL:
        v, t, e, tags = triangulate_loops(_channel_loops(spec), h, MIN_ANGLE)
    else:
        v, t, e, tags = triangulate_loops(_disc_loops(spec), h, MIN_ANGLE)
    e = _orient_edges(v, t, e)
    order = np.lexsort((e[:, 1], e[:, 0], tags))
    mesh = Mesh(v, t, e[order], tags[order], meta={"spec": spec.to_dict()})
    check_structure(mesh)
    check_quality(mesh, n)
    widths = spec.port_widths()
    for k, (p, a) in enumerate(zip(mesh.ports, widths), start=1):
        if abs(p.width - a) > 1e-12 * max(1.0, a):
            raise InvariantViolation("port-width", f"port {k} has width {p.width}, expected {a}")
    if len(mesh.ports) != len(widths):
        raise InvariantViolation("port-chain", "port count differs from the specification")
    return mesh


# file format -----------------------------------------------------------------

def write_mesh(mesh, path):
    Path(path).write_text(mesh.to_text())


def _data_lines(text):
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield no, line.split()


def read_mesh(path):
    """Read a ``wgmesh 1`` file and check its structural invariants."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}", 0) from None
    it = _data_lines(text)
    try:
        no, tok = next(it)
    except StopIteration:
        raise ParseError("empty mesh file", 0) from None
    if tok != MESH_HEADER.split():
        raise ParseError(f"expected header '{MESH_HEADER}'", no)
    try:
        no, tok = next(it)
    except StopIteration:
        raise ParseError("missing 'V E T' count line", no) from None
    if len(tok) != 3:
        raise ParseError("count line must hold V E T", no)
    try:
        V, E, T = (int(x) for x in tok)
    except ValueError:
        raise ParseError("counts must be integers", no) from None
    if min(V, E, T) < 0:
        raise ParseError("counts must be nonnegative", no)

    def rows(count, width, conv, what):
        out = []
        for _ in range(count):
            try:
                no, tok = next(it)
            except StopIteration:
                raise ParseError(f"file ends inside the {what} block", len(text.splitlines())) from None
            if len(tok) != width:
                raise ParseError(f"{what} line needs {width} fields", no)
            try:
                out.append(([conv(x) for x in tok], no))
            except ValueError:
                raise ParseError(f"bad number in {what} line", no) from None
        return out

    verts = rows(V, 2, float, "vertex")
    tris = rows(T, 3, int, "triangle")
    edges = rows(E, 3, int, "edge")
    extra = next(it, None)
    if extra is not None:
        raise ParseError("unexpected data after the edge block", extra[0])
    for what, block, ncols in (("triangle", tris, 3), ("edge", edges, 2)):
        for vals, no in block:
            if any(not 0 <= i < V for i in vals[:ncols]):
                raise ParseError(f"{what} references a missing vertex", no)
    mesh = Mesh(np.array([r for r, _ in verts], float).reshape(-1, 2),
                np.array([r for r, _ in tris], np.int64).reshape(-1, 3),
                np.array([r[:2] for r, _ in edges], np.int64).reshape(-1, 2),
                np.array([r[2] for r, _ in edges], np.int64),
                meta={"path": str(path)})
    check_structure(mesh)
    return mesh
