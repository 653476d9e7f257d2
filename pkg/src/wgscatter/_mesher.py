"""Quality triangulation of polygonal domains with holes.

Boundary points are fixed at the caller's spacing.  The interior is seeded
with a boundary-offset layer plus a hexagonal lattice, triangulated with
Qhull, smoothed, and then refined Ruppert-style (circumcentre insertion,
segment splitting on encroachment) until every triangle meets the angle
bound and every input segment is an edge of the triangulation.
"""
from __future__ import annotations

import numpy as np
import shapely
from scipy.spatial import Delaunay, cKDTree

from .errors import InvalidGeometry, RefinementTooCoarse


def _polygon(loops):
    outer = loops[0][0]
    holes = [pts for pts, _ in loops[1:]]
    poly = shapely.Polygon(outer, holes)
    if not poly.is_valid:
        raise InvalidGeometry(f"boundary polygon is invalid: {shapely.is_valid_reason(poly)}")
    return poly


def _min_angles(p, tri):
    a = p[tri[:, 1]] - p[tri[:, 0]]
    b = p[tri[:, 2]] - p[tri[:, 1]]
    c = p[tri[:, 0]] - p[tri[:, 2]]

    def ang(u, v):
        cosv = -(u * v).sum(1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        return np.arccos(np.clip(cosv, -1.0, 1.0))

    return np.degrees(np.minimum(np.minimum(ang(a, b), ang(b, c)), ang(c, a)))


def _circumcenters(p, tri):
    A, B, C = p[tri[:, 0]], p[tri[:, 1]], p[tri[:, 2]]
    d = 2.0 * (A[:, 0] * (B[:, 1] - C[:, 1]) + B[:, 0] * (C[:, 1] - A[:, 1])
               + C[:, 0] * (A[:, 1] - B[:, 1]))
    a2, b2, c2 = (A ** 2).sum(1), (B ** 2).sum(1), (C ** 2).sum(1)
    ux = (a2 * (B[:, 1] - C[:, 1]) + b2 * (C[:, 1] - A[:, 1]) + c2 * (A[:, 1] - B[:, 1])) / d
    uy = (a2 * (C[:, 0] - B[:, 0]) + b2 * (A[:, 0] - C[:, 0]) + c2 * (B[:, 0] - A[:, 0])) / d
    return np.column_stack([ux, uy])


def _edge_key(i, j):
    return (i, j) if i < j else (j, i)


class _State:
    def __init__(self, loops, h):
        self.h = h
        self.poly = _polygon(loops)
        pts, segs, tags = [], [], []
        base = 0
        for loop_pts, loop_tags in loops:
            k = len(loop_pts)
            pts.append(np.asarray(loop_pts, float))
            for i in range(k):
                segs.append((base + i, base + (i + 1) % k))
                tags.append(int(loop_tags[i]))
            base += k
        self.points = np.vstack(pts)
        self.nfixed = len(self.points)   # boundary points never move
        self.segments = segs
        self.tags = tags

    # seeding ---------------------------------------------------------
    def seed(self):
        h = self.h
        p = self.points
        # first layer: apex of an equilateral triangle over each segment
        layer = []
        for (i, j) in self.segments:
            m = 0.5 * (p[i] + p[j])
            d = p[j] - p[i]
            L = np.hypot(*d)
            nrm = np.array([-d[1], d[0]]) / L
            for sgn in (1.0, -1.0):
                q = m + sgn * nrm * L * np.sqrt(3) / 2
                layer.append(q)
        layer = np.array(layer)
        xmin, ymin, xmax, ymax = self.poly.bounds
        dy = h * np.sqrt(3) / 2
        rows = np.arange(ymin - h, ymax + h, dy)
        lat = []
        for r, y in enumerate(rows):
            xs = np.arange(xmin - h, xmax + h, h) + (0.5 * h if r % 2 else 0.0)
            lat.append(np.column_stack([xs, np.full_like(xs, y)]))
        lat = np.vstack(lat)
        bnd = self.poly.boundary

        def keep(q, dmin):
            inside = shapely.contains_xy(self.poly, q[:, 0], q[:, 1])
            q = q[inside]
            dist = shapely.distance(bnd, shapely.points(q))
            return q[dist >= dmin]

        layer = keep(layer, 0.6 * h)
        lat = keep(lat, 1.45 * h)
        cand = np.vstack([layer, lat])
        # greedy thinning against the boundary and already accepted points
        accepted = []
        tree_b = cKDTree(self.points)
        dist_b, _ = tree_b.query(cand)
        order = np.arange(len(cand))
        grid = {}
        cell = 0.6 * h
        for k in order:
            q = cand[k]
            if dist_b[k] < 0.6 * h:
                continue
            ci, cj = int(np.floor(q[0] / cell)), int(np.floor(q[1] / cell))
            ok = True
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    for other in grid.get((ci + di, cj + dj), ()):
                        if np.hypot(*(other - q)) < 0.6 * h:
                            ok = False
                            break
                    if not ok:
                        break
                if not ok:
                    break
            if ok:
                accepted.append(q)
                grid.setdefault((ci, cj), []).append(q)
        if accepted:
            self.points = np.vstack([self.points, np.array(accepted)])

    # triangulation ---------------------------------------------------
    def triangulate(self):
        p = self.points
        tri = Delaunay(p, qhull_options="Qbb Qc Qz Q12").simplices
        cen = p[tri].mean(axis=1)
        inside = shapely.contains_xy(self.poly, cen[:, 0], cen[:, 1])
        tri = tri[inside]
        # counterclockwise orientation
        d1 = p[tri[:, 1]] - p[tri[:, 0]]
        d2 = p[tri[:, 2]] - p[tri[:, 0]]
        area2 = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        tri = tri[area2 != 0]
        area2 = area2[area2 != 0]
        flip = area2 < 0
        tri[flip] = tri[flip][:, [0, 2, 1]]
        return tri

    def missing_segments(self, tri):
        edges = set()
        for a, b in ((0, 1), (1, 2), (2, 0)):
            for i, j in zip(tri[:, a], tri[:, b]):
                edges.add(_edge_key(int(i), int(j)))
        return [s for s, (i, j) in enumerate(self.segments) if _edge_key(i, j) not in edges]

    def split_segment(self, s):
        i, j = self.segments[s]
        m = 0.5 * (self.points[i] + self.points[j])
        # boundary points stay ahead of the free ones; segments never
        # reference free points, so shifting them is harmless
        self.points = np.vstack([self.points[:self.nfixed], m[None, :], self.points[self.nfixed:]])
        k = self.nfixed
        self.nfixed += 1
        self.segments[s] = (i, k)
        self.segments.insert(s + 1, (k, j))
        self.tags.insert(s + 1, self.tags[s])

    def smooth(self, tri, sweeps=3):
        p = self.points
        n = len(p)
        nfix = self.nfixed
        bnd = self.poly.boundary
        for _ in range(sweeps):
            acc = np.zeros_like(p)
            cnt = np.zeros(n)
            for a, b in ((0, 1), (1, 2), (2, 0)):
                np.add.at(acc, tri[:, a], p[tri[:, b]])
                np.add.at(acc, tri[:, b], p[tri[:, a]])
                np.add.at(cnt, tri[:, a], 1)
                np.add.at(cnt, tri[:, b], 1)
            free = np.arange(nfix, n)
            free = free[cnt[free] > 0]
            target = acc[free] / cnt[free][:, None]
            newp = 0.5 * p[free] + 0.5 * target
            inside = shapely.contains_xy(self.poly, newp[:, 0], newp[:, 1])
            dist = shapely.distance(bnd, shapely.points(newp))
            ok = inside & (dist >= 0.45 * self.h)
            p[free[ok]] = newp[ok]
        self.points = p

    def refine(self, tri, bad):
        p = self.points
        cc = _circumcenters(p, tri[bad])
        badness = _min_angles(p, tri[bad])
        order = np.argsort(badness)
        seg_i = np.array([s[0] for s in self.segments])
        seg_j = np.array([s[1] for s in self.segments])
        mids = 0.5 * (p[seg_i] + p[seg_j])
        half = 0.5 * np.linalg.norm(p[seg_j] - p[seg_i], axis=1)
        mid_tree = cKDTree(mids)
        pt_tree = cKDTree(p)
        rmax = half.max()
        to_split = set()
        new_pts = []
        for k in order:
            c = cc[k]
            if not np.all(np.isfinite(c)):
                continue
            cand = mid_tree.query_ball_point(c, rmax)
            enc = [s for s in cand if np.hypot(*(c - mids[s])) < half[s]]
            if enc:
                to_split.update(enc)
                continue
            if not shapely.contains_xy(self.poly, c[0], c[1]):
                continue
            local = np.linalg.norm(p[tri[bad][k]] - c, axis=1).min()
            if pt_tree.query(c)[0] < 0.25 * local:
                continue
            if any(np.hypot(*(c - q)) < 0.5 * local for q in new_pts):
                continue
            new_pts.append(c)
        for s in sorted(to_split, reverse=True):
            self.split_segment(s)
        if new_pts:
            self.points = np.vstack([self.points, np.array(new_pts)])
        return len(new_pts) + len(to_split)


def triangulate_loops(loops, h, min_angle=20.0, max_rounds=80, smooth_rounds=4):
    """Quality-triangulate the region bounded by ``loops``.

    ``loops`` is a list of ``(points, tags)``: the first is the outer
    boundary, the rest are holes; segment ``i`` of a loop joins point ``i``
    to point ``i+1`` (cyclically) and carries ``tags[i]``.

    Returns ``(vertices, triangles, segments, tags)`` where ``segments``
    lists the boundary edges (possibly split) as vertex-index pairs.
    """
    st = _State(loops, h)
    st.seed()
    for rnd in range(max_rounds):
        tri = st.triangulate()
        missing = st.missing_segments(tri)
        if missing:
            for s in sorted(missing, reverse=True):
                st.split_segment(s)
            continue
        ang = _min_angles(st.points, tri)
        bad = ang < min_angle
        if rnd < smooth_rounds:
            st.smooth(tri)
            continue
        if not bad.any():
            break
        if st.refine(tri, bad) == 0:
            raise RefinementTooCoarse(
                f"cannot reach the {min_angle} degree angle bound "
                f"(worst {ang.min():.2f} degrees, {int(bad.sum())} bad triangles)")
    else:
        raise RefinementTooCoarse(f"angle refinement did not finish in {max_rounds} rounds")
    used = np.unique(tri)
    remap = -np.ones(len(st.points), dtype=int)
    remap[used] = np.arange(len(used))
    verts = st.points[used]
    tri = remap[tri]
    segs = remap[np.array(st.segments)]
    if (segs < 0).any():
        raise InvalidGeometry("a boundary point is not part of any triangle")
    return verts, tri, segs, np.array(st.tags, dtype=int)
