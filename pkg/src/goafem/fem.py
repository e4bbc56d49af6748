"""Lagrange P1/P2 spaces, assembly, norms and local L2 projections.

Quadrature on triangles is a collapsed tensor Gauss rule (Duffy map of a
Gauss-Legendre grid), exact for any requested total polynomial degree.
Dirichlet dofs are eliminated from the assembled systems, which keeps
the primal/dual transpose identity exact up to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import _ekey


class FemError(Exception):
    pass


# ----------------------------------------------------------------------
# quadrature

@lru_cache(maxsize=None)
def triangle_quadrature(degree):
    """Barycentric points and weights on the reference triangle.

    Weights sum to 1/2 (the reference area); a physical integral is
    ``2 * |T| * sum(w * f(points))``.  Exact for total degree <= degree.
    """
    m = max(1, (degree + 2 + 1) // 2)
    t, wt = np.polynomial.legendre.leggauss(m)
    t = 0.5 * (t + 1.0)
    wt = 0.5 * wt
    xi, eta = np.meshgrid(t, t, indexing="ij")
    wx, we = np.meshgrid(wt, wt, indexing="ij")
    x = xi.ravel()
    y = (eta * (1.0 - xi)).ravel()
    w = (wx * we * (1.0 - xi)).ravel()
    bary = np.stack([1.0 - x - y, x, y], axis=1)
    return bary, w


@lru_cache(maxsize=None)
def edge_quadrature(degree):
    """Gauss points/weights on [0, 1], weights summing to one."""
    m = max(1, (degree + 2) // 2)
    t, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (t + 1.0), 0.5 * w


# ----------------------------------------------------------------------
# reference basis

def basis_values(degree, bary):
    """Shape functions at barycentric points; shape (..., ndloc)."""
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    if degree == 1:
        return np.stack([l0, l1, l2], axis=-1)
    if degree == 2:
        return np.stack([
            l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
            4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0], axis=-1)
    raise FemError(f"unsupported degree {degree}")


def basis_grads_ref(degree, bary):
    """Reference (xi, eta) gradients at barycentric points: (..., ndloc, 2)."""
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    one = np.ones_like(l0)
    zero = np.zeros_like(l0)
    # d l0 = (-1,-1), d l1 = (1,0), d l2 = (0,1)
    if degree == 1:
        g = [(-one, -one), (one, zero), (zero, one)]
    elif degree == 2:
        g = [
            (-(4 * l0 - 1), -(4 * l0 - 1)),
            (4 * l1 - 1, zero),
            (zero, 4 * l2 - 1),
            (4 * (l0 - l1), -4 * l1),
            (4 * l2, 4 * l1),
            (-4 * l2, 4 * (l0 - l2)),
        ]
    else:
        raise FemError(f"unsupported degree {degree}")
    return np.stack([np.stack(p, axis=-1) for p in g], axis=-2)


def basis_hessians_ref(degree):
    """Constant reference Hessians, (ndloc, 2, 2); zero for P1."""
    if degree == 1:
        return np.zeros((3, 2, 2))
    if degree == 2:
        h = np.zeros((6, 2, 2))
        h[0] = 4.0
        h[1] = [[4.0, 0.0], [0.0, 0.0]]
        h[2] = [[0.0, 0.0], [0.0, 4.0]]
        h[3] = [[-8.0, -4.0], [-4.0, 0.0]]
        h[4] = [[0.0, 4.0], [4.0, 0.0]]
        h[5] = [[0.0, -4.0], [-4.0, -8.0]]
        return h
    raise FemError(f"unsupported degree {degree}")


# ----------------------------------------------------------------------
# finite element space

class FeSpace:
    """Conforming Lagrange space of degree 1 or 2 on the current leaves.

    The space snapshots the mesh generation at build time: coordinate
    arrays are copied, so refining the mesh afterwards does not disturb
    an existing space.
    """

    def __init__(self, mesh, degree=1):
        if degree not in (1, 2):
            raise FemError(f"unsupported degree {degree}")
        mesh.check_conformity()
        self.mesh = mesh
        self.degree = degree
        ids, tri, x, y = mesh.leaf_arrays()
        self.elem_ids = ids.copy()
        self.tri = tri.copy()
        self.x = x.copy()
        self.y = y.copy()
        self.num_elems = len(ids)
        self._leaf_pos = {int(t): k for k, t in enumerate(ids)}

        v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
        jac = np.empty((self.num_elems, 2, 2))
        jac[:, 0, 0] = x[v1] - x[v0]
        jac[:, 0, 1] = x[v2] - x[v0]
        jac[:, 1, 0] = y[v1] - y[v0]
        jac[:, 1, 1] = y[v2] - y[v0]
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        inv[:, 1, 1] = jac[:, 0, 0]
        inv /= det[:, None, None]
        self.jac = jac
        self.inv_jac = inv           # J^{-1}
        self.inv_jac_t = np.swapaxes(inv, 1, 2)   # J^{-T}
        self.area = 0.5 * det
        self.h = np.sqrt(self.area)

        # edge structures (on leaf triangles)
        edge_use = {}
        for k in range(self.num_elems):
            a, b, c = (int(v) for v in tri[k])
            for loc, (p, q) in enumerate(((a, b), (b, c), (c, a))):
                edge_use.setdefault(_ekey(p, q), []).append((k, loc))
        self.edge_use = edge_use
        self.interior_edges = sorted(
            e for e, us in edge_use.items() if len(us) == 2)
        self.boundary_edges = sorted(
            e for e, us in edge_use.items() if len(us) == 1)

        nv = len(x)
        vb = np.zeros(nv, dtype=bool)
        for a, b in self.boundary_edges:
            vb[a] = vb[b] = True

        if degree == 1:
            self.num_dofs = nv
            self.elem_dofs = tri.copy()
            self.dof_x = self.x.copy()
            self.dof_y = self.y.copy()
            self.dof_boundary = vb
        else:
            edges = sorted(edge_use)
            eidx = {e: nv + i for i, e in enumerate(edges)}
            self.num_dofs = nv + len(edges)
            ed = np.empty((self.num_elems, 6), dtype=int)
            ed[:, :3] = tri
            for k in range(self.num_elems):
                a, b, c = (int(v) for v in tri[k])
                ed[k, 3] = eidx[_ekey(a, b)]
                ed[k, 4] = eidx[_ekey(b, c)]
                ed[k, 5] = eidx[_ekey(c, a)]
            self.elem_dofs = ed
            ex = np.array([0.5 * (x[a] + x[b]) for a, b in edges])
            ey = np.array([0.5 * (y[a] + y[b]) for a, b in edges])
            self.dof_x = np.concatenate([self.x, ex])
            self.dof_y = np.concatenate([self.y, ey])
            db = np.zeros(self.num_dofs, dtype=bool)
            db[:nv] = vb
            for e in self.boundary_edges:
                db[eidx[e]] = True
            self.dof_boundary = db

        self.interior_dofs = np.nonzero(~self.dof_boundary)[0]
        self.num_interior = len(self.interior_dofs)
        imap = np.full(self.num_dofs, -1, dtype=int)
        imap[self.interior_dofs] = np.arange(self.num_interior)
        self.interior_map = imap

    @property
    def ndloc(self):
        return 3 if self.degree == 1 else 6

    def quad_points(self, bary):
        """Physical coordinates of barycentric points on every element."""
        xs = bary @ np.stack([self.x[self.tri[:, k]] for k in range(3)])
        # bary (nq,3) @ (3,m) -> (nq,m); transpose to (m, nq)
        ys = bary @ np.stack([self.y[self.tri[:, k]] for k in range(3)])
        return xs.T, ys.T

    def expand(self, interior_values):
        out = np.zeros(self.num_dofs)
        out[self.interior_dofs] = interior_values
        return out


@dataclass
class FeSolution:
    space: FeSpace
    coeffs: np.ndarray   # full dof vector, boundary entries zero

    def __post_init__(self):
        if len(self.coeffs) != self.space.num_dofs:
            raise FemError("coefficient length does not match space")


def build_space(mesh, degree=1):
    return FeSpace(mesh, degree)


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix    # interior x interior
    rhs: np.ndarray
    space: FeSpace


# ----------------------------------------------------------------------
# assembly

def assemble(space, d, quad_degree=None, rhs_degree=None):
    """Galerkin matrix and load vector for a(u, v) = <f, v>.

    Matrix entries are a(phi_j, phi_i) over interior dofs; the rhs uses
    its own (higher) quadrature degree since f need not be polynomial.
    """
    n = space.degree
    q = quad_degree if quad_degree is not None else 2 * n + 2
    qr = rhs_degree if rhs_degree is not None else 2 * n + 6
    bary, wq = triangle_quadrature(q)
    phi = basis_values(n, bary)               # (nq, ndloc)
    gref = basis_grads_ref(n, bary)           # (nq, ndloc, 2)
    xs, ys = space.quad_points(bary)          # (m, nq)

    Av = d.A(xs, ys)                          # (2,2,m,nq)
    bv = d.b(xs, ys)                          # (2,m,nq)
    cv = d.c(xs, ys)                          # (m,nq)
    if not np.all(np.isfinite(Av)) or not np.all(np.isfinite(bv)) \
            or not np.all(np.isfinite(cv)):
        raise FemError("non-finite coefficient value during assembly")

    m = space.num_elems
    nd = space.ndloc
    loc = np.zeros((m, nd, nd))
    for k in range(len(wq)):
        g = np.einsum("mab,ib->mia", space.inv_jac_t, gref[k])   # (m,nd,2)
        Ag = np.einsum("abm,mjb->mja", Av[..., k], g)
        stiff = np.einsum("mia,mja->mij", g, Ag)
        bg = np.einsum("am,mja->mj", bv[..., k], g)
        conv = phi[k][None, :, None] * bg[:, None, :]
        mass = cv[:, k, None, None] * np.einsum("i,j->ij", phi[k], phi[k])
        loc += wq[k] * (stiff + conv + mass)
    loc *= 2.0 * space.area[:, None, None]

    rows = np.repeat(space.elem_dofs, nd, axis=1).ravel()
    cols = np.tile(space.elem_dofs, (1, nd)).ravel()
    full = sp.coo_matrix((loc.ravel(), (rows, cols)),
                         shape=(space.num_dofs, space.num_dofs)).tocsr()

    bary_r, wr = triangle_quadrature(qr)
    phir = basis_values(n, bary_r)
    xr, yr = space.quad_points(bary_r)
    fv = d.f(xr, yr)
    if not np.all(np.isfinite(fv)):
        bad = int(np.argwhere(~np.all(np.isfinite(fv), axis=1))[0, 0])
        raise FemError(f"non-finite forcing value on element "
                       f"{space.elem_ids[bad]}")
    loads = 2.0 * space.area[:, None] * (fv * wr[None, :]) @ phir  # (m, nd)
    rhs_full = np.zeros(space.num_dofs)
    np.add.at(rhs_full, space.elem_dofs.ravel(), loads.ravel())

    ii = space.interior_dofs
    return SparseSystem(full[ii][:, ii].tocsr(), rhs_full[ii], space)


def assemble_dual(space, d, quad_degree=None, rhs_degree=None):
    """System for the adjoint form a*(z, v) = <g, v>."""
    return assemble(space, d.dual(), quad_degree, rhs_degree)


# ----------------------------------------------------------------------
# evaluation helpers

def fe_values_at(space, coeffs, bary):
    """FE function values at barycentric points on every element: (m, nq)."""
    phi = basis_values(space.degree, bary)          # (nq, nd)
    cf = coeffs[space.elem_dofs]                    # (m, nd)
    return cf @ phi.T


def fe_gradients_at(space, coeffs, bary):
    """FE function gradients at barycentric points: (m, nq, 2)."""
    gref = basis_grads_ref(space.degree, bary)      # (nq, nd, 2)
    cf = coeffs[space.elem_dofs]                    # (m, nd)
    gr = np.einsum("mi,qib->mqb", cf, gref)
    return np.einsum("mab,mqb->mqa", space.inv_jac_t, gr)


def fe_hessians(space, coeffs):
    """Per-element (constant) Hessians of the FE function: (m, 2, 2)."""
    href = basis_hessians_ref(space.degree)         # (nd, 2, 2)
    cf = coeffs[space.elem_dofs]
    hr = np.einsum("mi,iab->mab", cf, href)
    return np.einsum("mca,mab,mdb->mcd", space.inv_jac_t, hr, space.inv_jac_t)


# ----------------------------------------------------------------------
# norms and functionals

def _norm_quad(space, degree):
    q = degree if degree is not None else 2 * space.degree + 6
    return triangle_quadrature(q)


def energy_norm_diff(space, d, fh, exact=None, quad_degree=None):
    """Energy norm of (exact - fh); with exact None, of fh itself.

    Uses only the symmetric part A, c of the form, valid because the
    convection term vanishes on the diagonal for divergence-free b.
    """
    bary, wq = _norm_quad(space, quad_degree)
    xs, ys = space.quad_points(bary)
    vals = fe_values_at(space, fh.coeffs, bary)
    grads = fe_gradients_at(space, fh.coeffs, bary)
    if exact is not None:
        vals = exact(xs, ys) - vals
        ge = exact.grad(xs, ys)                     # (2, m, nq)
        grads = np.stack([ge[0] - grads[..., 0],
                          ge[1] - grads[..., 1]], axis=-1)
    Av = d.A(xs, ys)
    cv = d.c(xs, ys)
    dens = (np.einsum("mqa,abmq,mqb->mq", grads, Av, grads)
            + cv * vals * vals)
    return float(np.sqrt(np.sum(2.0 * space.area[:, None] * wq[None, :] * dens)))


def l2_norm_diff(space, fh, exact=None, quad_degree=None):
    bary, wq = _norm_quad(space, quad_degree)
    vals = fe_values_at(space, fh.coeffs, bary)
    if exact is not None:
        xs, ys = space.quad_points(bary)
        vals = exact(xs, ys) - vals
    return float(np.sqrt(np.sum(
        2.0 * space.area[:, None] * wq[None, :] * vals * vals)))


def goal_value(space, g, fh, quad_degree=None):
    """The functional g(fh) = integral of g * fh."""
    bary, wq = _norm_quad(space, quad_degree)
    xs, ys = space.quad_points(bary)
    vals = fe_values_at(space, fh.coeffs, bary)
    return float(np.sum(2.0 * space.area[:, None] * wq[None, :]
                        * g(xs, ys) * vals))


# ----------------------------------------------------------------------
# local L2 projection

def _poly_count(m):
    return (m + 1) * (m + 2) // 2


def project_residual(space, m_degree, vals, bary, wq):
    """Pointwise complement (I - Pi_m) of the best elementwise L2 fit.

    ``vals`` holds samples at the given quadrature points; the projector
    is computed in the same discrete inner product, so the projection is
    a contraction of the discrete norm by construction.  m_degree < 0
    projects onto the zero space (returns vals unchanged).
    """
    if m_degree < 0:
        return vals
    xs, ys = space.quad_points(bary)
    wsum = np.sum(wq)
    xc = (xs @ wq) / wsum
    yc = (ys @ wq) / wsum
    # scaled local monomials for conditioning
    u = (xs - xc[:, None]) / space.h[:, None]
    v = (ys - yc[:, None]) / space.h[:, None]
    basis = [np.ones_like(u)]
    for total in range(1, m_degree + 1):
        for j in range(total + 1):
            basis.append(u ** (total - j) * v ** j)
    P = np.stack(basis, axis=-1)                 # (m, nq, nb)
    PW = P * wq[None, :, None]
    G = np.einsum("mqi,mqj->mij", PW, P)
    r = np.einsum("mqi,mq->mi", PW, vals)
    coef = np.linalg.solve(G, r[..., None])[..., 0]
    fit = np.einsum("mqi,mi->mq", P, coef)
    return vals - fit


def l2_project_element(space, elem, m_degree, fn, quad_degree=8):
    """Best L2 fit of a callable on one element; returns (value_at, err).

    Convenience wrapper used by tests; ``value_at(x, y)`` evaluates the
    projected polynomial, ``err`` is the L2 norm of the remainder.
    """
    bary, wq = triangle_quadrature(quad_degree)
    k = space._leaf_pos.get(int(elem), int(elem))
    tri = space.tri[k]
    xs = bary @ space.x[tri]
    ys = bary @ space.y[tri]
    vals = np.asarray(fn(xs, ys), dtype=float)
    xc = np.sum(wq * xs) / np.sum(wq)
    yc = np.sum(wq * ys) / np.sum(wq)
    h = space.h[k]
    basis = [np.ones_like(xs)]
    for total in range(1, m_degree + 1):
        for j in range(total + 1):
            basis.append(((xs - xc) / h) ** (total - j) * ((ys - yc) / h) ** j)
    P = np.stack(basis, axis=-1)
    G = (P * wq[:, None]).T @ P
    r = (P * wq[:, None]).T @ vals
    coef = np.linalg.solve(G, r)

    def value_at(x, y):
        b2 = [np.ones_like(np.asarray(x, dtype=float))]
        for total in range(1, m_degree + 1):
            for j in range(total + 1):
                b2.append(((x - xc) / h) ** (total - j) * ((y - yc) / h) ** j)
        return np.tensordot(np.stack(b2, axis=-1), coef, axes=([-1], [0]))

    resid = vals - P @ coef
    err = float(np.sqrt(2.0 * space.area[k] * np.sum(wq * resid * resid)))
    return value_at, err


# ----------------------------------------------------------------------
# transfer between nested spaces

def _ancestor_table(coarse_space, fine_space):
    mesh = fine_space.mesh
    # clones keep element ids, so sharing the initial mesh suffices
    if mesh is not coarse_space.mesh \
            and mesh._initial is not coarse_space.mesh._initial:
        raise FemError("spaces must share one mesh forest")
    coarse_pos = coarse_space._leaf_pos
    anc = np.empty(fine_space.num_elems, dtype=int)
    for k, t in enumerate(fine_space.elem_ids):
        s = int(t)
        while s not in coarse_pos:
            s = mesh.parent[s]
            if s < 0:
                raise FemError("fine element has no ancestor in coarse space")
        anc[k] = coarse_pos[s]
    return anc


def carry(coarse_space, coarse_coeffs, fine_space):
    """Represent a coarse FE function exactly on a nested finer space."""
    if coarse_space.degree != fine_space.degree:
        raise FemError("carry requires equal polynomial degree")
    anc = _ancestor_table(coarse_space, fine_space)
    # owner element for every fine dof
    owner = np.zeros(fine_space.num_dofs, dtype=int)
    nd = fine_space.ndloc
    for i in range(nd):
        owner[fine_space.elem_dofs[:, i]] = np.arange(fine_space.num_elems)
    ce = anc[owner]                                  # coarse elem per dof
    px = fine_space.dof_x - coarse_space.x[coarse_space.tri[ce, 0]]
    py = fine_space.dof_y - coarse_space.y[coarse_space.tri[ce, 0]]
    inv = coarse_space.inv_jac[ce]                   # (ndof, 2, 2)
    xi = inv[:, 0, 0] * px + inv[:, 0, 1] * py
    eta = inv[:, 1, 0] * px + inv[:, 1, 1] * py
    bary = np.stack([1.0 - xi - eta, xi, eta], axis=-1)
    phi = basis_values(coarse_space.degree, bary)    # (ndof, nd)
    cf = coarse_coeffs[coarse_space.elem_dofs[ce]]   # (ndof, nd)
    return np.sum(phi * cf, axis=1)
