"""Conforming 2D triangulations with newest-vertex bisection.

Elements are stored as a forest: bisecting an element keeps it in the
arrays (marked dead) and appends its two children.  Each element is an
ordered vertex triple ``(v0, v1, peak)`` whose first two vertices span
the refinement edge; the stored ordering is always positively oriented.
Bisection inserts the midpoint of the refinement edge, which becomes
the peak of both children.  Midpoints are deduplicated through an edge
table keyed by sorted vertex ids, so conformity never depends on
floating-point coordinate comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class MeshError(Exception):
    """Raised for invalid meshes or invalid refinement requests."""


def _ekey(a, b):
    return (a, b) if a < b else (b, a)


@dataclass
class MeshStats:
    num_leaves: int
    h_max: float
    h_min: float
    min_angle: float
    generation_max: int


@dataclass
class RefinementReport:
    refined_set: set
    new_leaf_count: int


class Mesh:
    """A forest of bisected triangles with a conforming leaf front.

    Construct through :func:`assign_refinement_edges` (which labels raw
    triangles) or one of the built-in mesh builders; the constructor
    expects triangles already ordered with the refinement edge first
    and positive signed area.
    """

    def __init__(self, points, triangles):
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2:
            raise MeshError("points must be an (n, 2) array")
        if not np.all(np.isfinite(points)):
            raise MeshError("non-finite vertex coordinate")
        self.vx = [float(p[0]) for p in points]
        self.vy = [float(p[1]) for p in points]
        self.ev = []          # ordered (v0, v1, peak), refinement edge (v0, v1)
        self.gen = []
        self.parent = []
        self.children = []    # None for leaves
        self.alive_list = []
        self.leaf_set = set()
        self.edge_elems = {}  # sorted vertex pair -> list of alive element ids
        self.edge_mid = {}    # sorted vertex pair -> midpoint vertex id
        self.version = 0
        self._cache = {}

        for tri in triangles:
            v0, v1, v2 = (int(v) for v in tri)
            t = len(self.ev)
            if self._signed_area(v0, v1, v2) <= 0.0:
                raise MeshError(f"triangle {t} is not positively oriented")
            self.ev.append((v0, v1, v2))
            self.gen.append(0)
            self.parent.append(-1)
            self.children.append(None)
            self.alive_list.append(True)
            self.leaf_set.add(t)
            for a, b in ((v0, v1), (v1, v2), (v2, v0)):
                self.edge_elems.setdefault(_ekey(a, b), []).append(t)

        for e, els in self.edge_elems.items():
            if len(els) > 2:
                raise MeshError(f"edge {e} belongs to {len(els)} triangles")
        self.boundary_edge_set = {
            e for e, els in self.edge_elems.items() if len(els) == 1
        }
        self.vb = [False] * len(self.vx)
        for a, b in self.boundary_edge_set:
            self.vb[a] = True
            self.vb[b] = True
        self.n_roots = len(self.ev)
        self._initial = (points.copy(), [tuple(map(int, t)) for t in triangles])
        self.check_conformity()

    # ------------------------------------------------------------------
    # basic queries

    @property
    def num_vertices(self):
        return len(self.vx)

    @property
    def num_leaves(self):
        return len(self.leaf_set)

    def leaf_ids(self):
        return sorted(self.leaf_set)

    def refinement_edge(self, t):
        v0, v1, _ = self.ev[t]
        return _ekey(v0, v1)

    def element_edges(self, t):
        v0, v1, v2 = self.ev[t]
        return (_ekey(v0, v1), _ekey(v1, v2), _ekey(v2, v0))

    def _signed_area(self, a, b, c):
        return 0.5 * (
            (self.vx[b] - self.vx[a]) * (self.vy[c] - self.vy[a])
            - (self.vx[c] - self.vx[a]) * (self.vy[b] - self.vy[a])
        )

    def area(self, t):
        a, b, c = self.ev[t]
        return self._signed_area(a, b, c)

    def neighbor_across(self, t, edge):
        els = self.edge_elems.get(edge, ())
        for s in els:
            if s != t:
                return s
        return None

    def patch(self, t):
        """Element t plus all alive elements sharing a full edge with t."""
        if not self.alive_list[t]:
            raise MeshError(f"element {t} is not alive")
        out = {t}
        for e in self.element_edges(t):
            nb = self.neighbor_across(t, e)
            if nb is not None:
                out.add(nb)
        return out

    # ------------------------------------------------------------------
    # refinement

    def bisect(self, t):
        """Split one alive element at its refinement edge (no completion)."""
        if not self.alive_list[t]:
            raise MeshError(f"element {t} is not alive")
        v0, v1, pk = self.ev[t]
        e = _ekey(v0, v1)
        m = self.edge_mid.get(e)
        if m is None:
            m = len(self.vx)
            self.vx.append(0.5 * (self.vx[v0] + self.vx[v1]))
            self.vy.append(0.5 * (self.vy[v0] + self.vy[v1]))
            on_b = e in self.boundary_edge_set
            self.vb.append(on_b)
            self.edge_mid[e] = m
            if on_b:
                self.boundary_edge_set.remove(e)
                self.boundary_edge_set.add(_ekey(v0, m))
                self.boundary_edge_set.add(_ekey(v1, m))
        # children: refinement edges are the parent's non-refinement edges,
        # the midpoint is the new peak of both
        c1 = len(self.ev)
        c2 = c1 + 1
        g = self.gen[t] + 1
        for tri in ((pk, v0, m), (v1, pk, m)):
            self.ev.append(tri)
            self.gen.append(g)
            self.parent.append(t)
            self.children.append(None)
            self.alive_list.append(True)
        self.children[t] = (c1, c2)
        self.alive_list[t] = False
        self.leaf_set.discard(t)
        self.leaf_set.add(c1)
        self.leaf_set.add(c2)
        for ed in (e, _ekey(v0, pk), _ekey(v1, pk)):
            lst = self.edge_elems.get(ed)
            if lst is not None and t in lst:
                lst.remove(t)
        for c in (c1, c2):
            for ed in self.element_edges(c):
                self.edge_elems.setdefault(ed, []).append(c)
        self.version += 1
        self._cache.clear()
        return c1, c2

    def _refine_element(self, t, depth=0):
        if depth > len(self.ev) + 64:
            raise MeshError("conforming completion did not terminate")
        if not self.alive_list[t]:
            return
        while True:
            nb = self.neighbor_across(t, self.refinement_edge(t))
            if nb is None or self.refinement_edge(nb) == self.refinement_edge(t):
                break
            self._refine_element(nb, depth + 1)
        self.bisect(t)
        if nb is not None:
            self.bisect(nb)

    def refine(self, marked):
        """Bisect every marked leaf, with recursive conforming completion."""
        marked = set(marked)
        for t in marked:
            if t < 0 or t >= len(self.ev):
                raise MeshError(f"invalid element id {t}")
            if not self.alive_list[t]:
                raise MeshError(f"element {t} is not a leaf")
        before = set(self.leaf_set)
        for t in sorted(marked):
            if self.alive_list[t]:
                self._refine_element(t)
        refined = {t for t in before if not self.alive_list[t]}
        return RefinementReport(refined, len(self.leaf_set))

    def refine_uniform(self, rounds=1):
        for _ in range(rounds):
            self.refine(self.leaf_ids())

    # ------------------------------------------------------------------
    # invariants and statistics

    def check_conformity(self):
        """Raise MeshError unless the leaf front is a conforming mesh."""
        counts = {}
        for t in self.leaf_set:
            if self.area(t) <= 0.0:
                raise MeshError(f"element {t} has non-positive area")
            for e in self.element_edges(t):
                counts[e] = counts.get(e, 0) + 1
        for e, c in counts.items():
            if c == 1:
                if e not in self.boundary_edge_set:
                    raise MeshError(f"hanging node along edge {e}")
            elif c == 2:
                if e in self.boundary_edge_set:
                    raise MeshError(f"boundary edge {e} shared by two elements")
            else:
                raise MeshError(f"edge {e} has {c} incident elements")
        # neighboring generations differ by at most one
        for e, c in counts.items():
            if c == 2:
                a, b = self.edge_elems[e]
                if abs(self.gen[a] - self.gen[b]) > 1:
                    raise MeshError(
                        f"generation gap {self.gen[a]}/{self.gen[b]} across {e}"
                    )
        return True

    def stats(self):
        ids, tri, x, y = self.leaf_arrays()
        ax, ay = x[tri[:, 0]], y[tri[:, 0]]
        bx, by = x[tri[:, 1]], y[tri[:, 1]]
        cx, cy = x[tri[:, 2]], y[tri[:, 2]]
        areas = 0.5 * ((bx - ax) * (cy - ay) - (cx - ax) * (by - ay))
        h = np.sqrt(areas)
        min_angle = math.inf
        for p, q, r in (((ax, ay), (bx, by), (cx, cy)),
                        ((bx, by), (cx, cy), (ax, ay)),
                        ((cx, cy), (ax, ay), (bx, by))):
            u = np.stack([q[0] - p[0], q[1] - p[1]], axis=-1)
            v = np.stack([r[0] - p[0], r[1] - p[1]], axis=-1)
            cosang = np.sum(u * v, axis=-1) / (
                np.linalg.norm(u, axis=-1) * np.linalg.norm(v, axis=-1)
            )
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            min_angle = min(min_angle, float(ang.min()))
        gmax = max(self.gen[t] for t in self.leaf_set)
        return MeshStats(len(ids), float(h.max()), float(h.min()),
                         min_angle, gmax)

    def min_angle_bound(self):
        """Exhaustive-bisection oracle for the shape-regularity bound.

        Bisects every root element to generation 4 on a scratch copy and
        returns the minimum interior angle seen; NVB similarity classes
        repeat, so no later refinement can fall below this value.
        """
        probe = Mesh(*self._initial)
        for _ in range(4):
            for t in probe.leaf_ids():
                probe.bisect(t)
        angles = []
        for t in range(len(probe.ev)):
            a, b, c = probe.ev[t]
            pts = [(probe.vx[v], probe.vy[v]) for v in (a, b, c)]
            for i in range(3):
                p, q, r = pts[i], pts[(i + 1) % 3], pts[(i + 2) % 3]
                u = (q[0] - p[0], q[1] - p[1])
                v = (r[0] - p[0], r[1] - p[1])
                dot = u[0] * v[0] + u[1] * v[1]
                nu = math.hypot(*u)
                nv = math.hypot(*v)
                angles.append(math.acos(max(-1.0, min(1.0, dot / (nu * nv)))))
        return min(angles)

    # ------------------------------------------------------------------
    # array views

    def leaf_arrays(self):
        """Sorted leaf ids, their (m, 3) vertex triples, and coordinates."""
        key = ("leaf_arrays", self.version)
        if key not in self._cache:
            ids = np.array(self.leaf_ids(), dtype=int)
            tri = np.array([self.ev[t] for t in ids], dtype=int)
            x = np.array(self.vx)
            y = np.array(self.vy)
            self._cache.clear()
            self._cache[key] = (ids, tri, x, y)
        return self._cache[key]

    def clone(self):
        out = Mesh.__new__(Mesh)
        out.vx = list(self.vx)
        out.vy = list(self.vy)
        out.vb = list(self.vb)
        out.ev = list(self.ev)
        out.gen = list(self.gen)
        out.parent = list(self.parent)
        out.children = list(self.children)
        out.alive_list = list(self.alive_list)
        out.leaf_set = set(self.leaf_set)
        out.edge_elems = {k: list(v) for k, v in self.edge_elems.items()}
        out.edge_mid = dict(self.edge_mid)
        out.boundary_edge_set = set(self.boundary_edge_set)
        out.version = self.version
        out._cache = {}
        out.n_roots = self.n_roots
        out._initial = self._initial
        return out

    # ------------------------------------------------------------------
    # file format

    def write(self, path):
        with open(path, "w") as fh:
            fh.write("goafem-mesh v1\n")
            fh.write(f"vertices {len(self.vx)}\n")
            for i in range(len(self.vx)):
                fh.write(f"{i} {self.vx[i]:.17g} {self.vy[i]:.17g} "
                         f"{1 if self.vb[i] else 0}\n")
            ids = self.leaf_ids()
            fh.write(f"triangles {len(ids)}\n")
            for k, t in enumerate(ids):
                v0, v1, v2 = self.ev[t]
                fh.write(f"{k} {v0} {v1} {v2}\n")

    @staticmethod
    def read(path):
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        if not lines or lines[0] != "goafem-mesh v1":
            raise MeshError("not a goafem-mesh v1 file")
        i = 1
        tok = lines[i].split()
        if tok[0] != "vertices":
            raise MeshError("missing vertices section")
        nv = int(tok[1])
        pts = np.empty((nv, 2))
        for k in range(nv):
            i += 1
            vid, x, y, _flag = lines[i].split()
            pts[int(vid)] = (float(x), float(y))
        i += 1
        tok = lines[i].split()
        if tok[0] != "triangles":
            raise MeshError("missing triangles section")
        nt = int(tok[1])
        tris = [None] * nt
        for k in range(nt):
            i += 1
            tid, v0, v1, v2 = (int(s) for s in lines[i].split())
            tris[tid] = (v0, v1, v2)
        return Mesh(pts, tris)


# ----------------------------------------------------------------------
# construction helpers

def assign_refinement_edges(points, triangles):
    """Label raw conforming triangles with refinement edges and build a Mesh.

    Each element gets its longest edge (ties broken by sorted vertex pair)
    as refinement edge; chains of completion recursions then follow edges
    of non-decreasing length and cannot cycle.  If every interior edge is
    the refinement edge of both its elements or of neither, the labeling
    is certified compatible; otherwise one uniform bisection is applied,
    after which the standard NVB child labeling takes over.
    """
    points = np.asarray(points, dtype=float)

    def edge_len2(a, b):
        dx = points[a, 0] - points[b, 0]
        dy = points[a, 1] - points[b, 1]
        return dx * dx + dy * dy

    labeled = []
    for tri in triangles:
        v0, v1, v2 = (int(v) for v in tri)
        # orient positively
        area = 0.5 * ((points[v1, 0] - points[v0, 0]) * (points[v2, 1] - points[v0, 1])
                      - (points[v2, 0] - points[v0, 0]) * (points[v1, 1] - points[v0, 1]))
        if area == 0.0:
            raise MeshError(f"degenerate triangle {tri}")
        if area < 0.0:
            v1, v2 = v2, v1
        edges = [(v0, v1, v2), (v1, v2, v0), (v2, v0, v1)]
        best = max(edges, key=lambda e: (edge_len2(e[0], e[1]), _ekey(e[0], e[1])))
        a, b, pk = best
        labeled.append((a, b, pk))

    mesh = Mesh(points, labeled)
    # certification: every interior edge is the refinement edge of both
    # incident elements or of neither
    compatible = True
    for e, els in mesh.edge_elems.items():
        if len(els) == 2:
            r0 = mesh.refinement_edge(els[0]) == e
            r1 = mesh.refinement_edge(els[1]) == e
            if r0 != r1:
                compatible = False
                break
    if not compatible:
        mesh.refine_uniform(1)
    return mesh


def unit_square_mesh(cells=2):
    """Criss-cross mesh of (0,1)^2 with cells x cells square blocks."""
    return _criss_cross_grid(0.0, 1.0, 0.0, 1.0, cells, cells)


def lshape_mesh(cells_per_unit=2):
    """Criss-cross mesh of (-1,1)^2 minus the quadrant [0,1) x (-1,0]."""
    n = 2 * cells_per_unit
    h = 2.0 / n
    pts = []
    index = {}

    def vid(x, y):
        key = (round(x, 12), round(y, 12))
        if key not in index:
            index[key] = len(pts)
            pts.append((x, y))
        return index[key]

    tris = []
    for i in range(n):
        for j in range(n):
            x0, y0 = -1.0 + i * h, -1.0 + j * h
            x1, y1 = x0 + h, y0 + h
            if x0 >= -1e-12 and y1 <= 1e-12:
                continue  # removed quadrant
            c = vid(x0 + 0.5 * h, y0 + 0.5 * h)
            p00, p10 = vid(x0, y0), vid(x1, y0)
            p11, p01 = vid(x1, y1), vid(x0, y1)
            tris += [(p00, p10, c), (p10, p11, c), (p11, p01, c), (p01, p00, c)]
    return assign_refinement_edges(np.array(pts), tris)


def _criss_cross_grid(xa, xb, ya, yb, nx, ny):
    pts = []
    index = {}

    def vid(x, y):
        key = (round(x, 12), round(y, 12))
        if key not in index:
            index[key] = len(pts)
            pts.append((x, y))
        return index[key]

    hx = (xb - xa) / nx
    hy = (yb - ya) / ny
    tris = []
    for i in range(nx):
        for j in range(ny):
            x0, y0 = xa + i * hx, ya + j * hy
            x1, y1 = x0 + hx, y0 + hy
            c = vid(x0 + 0.5 * hx, y0 + 0.5 * hy)
            p00, p10 = vid(x0, y0), vid(x1, y0)
            p11, p01 = vid(x1, y1), vid(x0, y1)
            tris += [(p00, p10, c), (p10, p11, c), (p11, p01, c), (p01, p00, c)]
    return assign_refinement_edges(np.array(pts), tris)


# ----------------------------------------------------------------------
# overlay

def overlay(m1, m2):
    """Smallest common conforming refinement of two NVB refinements.

    Both meshes must descend from the same initial mesh; the result takes
    the deeper of the two forests in every region.
    """
    if (m1.n_roots != m2.n_roots
            or m1._initial[1] != m2._initial[1]
            or not np.array_equal(m1._initial[0], m2._initial[0])):
        raise MeshError("overlay requires refinements of the same initial mesh")
    res = Mesh(*m1._initial)
    stack = [(r, r, r) for r in range(m1.n_roots)]
    while stack:
        r, a, b = stack.pop()
        ac = m1.children[a] if a is not None else None
        bc = m2.children[b] if b is not None else None
        if ac is None and bc is None:
            continue
        c1, c2 = res.bisect(r)
        stack.append((c1, ac[0] if ac else None, bc[0] if bc else None))
        stack.append((c2, ac[1] if ac else None, bc[1] if bc else None))
    res.check_conformity()
    return res
