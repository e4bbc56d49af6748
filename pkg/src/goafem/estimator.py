"""Residual-based indicators, oscillation, and data estimates.

Per-element indicator (p = 1 or 2):

    eta(v,T)^p = h_T^p ||R(v)||_{L2(T)}^p + h_T^{p/2} ||J(v)||_{L2(dT)}^p

with the interior residual R built from the strong form and the jump
residual J the normal flux difference across interior edges; boundary
edges contribute zero.  Each interior edge contributes its full L2 norm
to BOTH adjacent elements (no halving).  Oscillation subtracts the
elementwise L2 projection of R onto polynomials of degree 2n-2, using
the same quadrature points, so osc <= eta holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import (basis_grads_ref, edge_quadrature, fe_gradients_at,
                  fe_hessians, fe_values_at, project_residual,
                  triangle_quadrature)


class EstimatorError(Exception):
    pass


@dataclass
class IndicatorField:
    space: object
    p: int
    side: str
    eta: np.ndarray          # per-element indicator values, >= 0
    osc: np.ndarray          # per-element oscillation, elementwise <= eta
    interior_norm: np.ndarray   # ||R||_{L2(T)}
    jump_norm: np.ndarray       # ||J||_{L2(dT)}

    @property
    def elem_ids(self):
        return self.space.elem_ids


def strong_residual(space, d, fh, bary, side="primal"):
    """Residual values at quadrature points, shape (num_elems, nq).

    primal: R(v) = f + div(A grad v) - b.grad v - c v
    dual:   R*(v) = g + div(A grad v) + b.grad v - c v
    """
    xs, ys = space.quad_points(bary)
    grads = fe_gradients_at(space, fh.coeffs, bary)       # (m, nq, 2)
    vals = fe_values_at(space, fh.coeffs, bary)
    Av = d.A(xs, ys)
    bv = d.b(xs, ys)
    cv = d.c(xs, ys)
    divA = d.A.eval_div(xs, ys)                           # (2, m, nq)
    hess = fe_hessians(space, fh.coeffs)                  # (m, 2, 2)
    diff = (np.einsum("amq,mqa->mq", divA, grads)
            + np.einsum("abmq,mab->mq", Av, hess))
    conv = np.einsum("amq,mqa->mq", bv, grads)
    if side == "primal":
        force = d.f(xs, ys)
        return force + diff - conv - cv * vals
    if side == "dual":
        force = d.goal_g(xs, ys)
        return force + diff + conv - cv * vals
    raise EstimatorError(f"unknown side {side!r}")


def edge_jump_norms(space, d, fh, quad_degree=None):
    """Squared L2 jump norm of the normal flux per interior edge.

    Returns (edges, jump2) with edges aligned to space.interior_edges.
    """
    n = space.degree
    q = quad_degree if quad_degree is not None else 2 * n + 2
    t, wq = edge_quadrature(q)
    edges = space.interior_edges
    ne = len(edges)
    if ne == 0:
        return edges, np.zeros(0)
    a = np.array([e[0] for e in edges])
    b = np.array([e[1] for e in edges])
    sides_elem = np.empty((ne, 2), dtype=int)
    for i, e in enumerate(edges):
        (k1, _), (k2, _) = space.edge_use[e]
        sides_elem[i] = (k1, k2)

    ax, ay = space.x[a], space.y[a]
    bx, by = space.x[b], space.y[b]
    ex, ey = bx - ax, by - ay
    length = np.hypot(ex, ey)
    nx, ny = ey / length, -ex / length        # unit normal, fixed orientation

    px = ax[:, None] + t[None, :] * ex[:, None]       # (ne, nq)
    py = ay[:, None] + t[None, :] * ey[:, None]
    Av = d.A(px, py)                                   # (2, 2, ne, nq)

    jump = np.zeros((ne, len(t)))
    for s in range(2):
        ke = sides_elem[:, s]
        # barycentric coordinates of the edge points inside element ke
        v0x = space.x[space.tri[ke, 0]]
        v0y = space.y[space.tri[ke, 0]]
        inv = space.inv_jac[ke]
        dx, dy = px - v0x[:, None], py - v0y[:, None]
        xi = inv[:, 0, 0, None] * dx + inv[:, 0, 1, None] * dy
        eta_ = inv[:, 1, 0, None] * dx + inv[:, 1, 1, None] * dy
        bary = np.stack([1.0 - xi - eta_, xi, eta_], axis=-1)
        gref = basis_grads_ref(n, bary)                # (ne, nq, nd, 2)
        cf = fh.coeffs[space.elem_dofs[ke]]            # (ne, nd)
        gr = np.einsum("mi,mqib->mqb", cf, gref)
        g = np.einsum("mab,mqb->mqa", space.inv_jac_t[ke], gr)
        flux = (np.einsum("abmq,mqb->mqa", Av, g))
        fn = flux[..., 0] * nx[:, None] + flux[..., 1] * ny[:, None]
        jump += fn if s == 0 else -fn
    jump2 = length * ((jump * jump) @ wq)
    return edges, jump2


def indicators(space, d, fh, p=2, side="primal", quad_degree=None,
               edge_degree=None):
    """Per-element error indicators and oscillation for one solution."""
    if p not in (1, 2):
        raise EstimatorError("p must be 1 or 2")
    n = space.degree
    q = quad_degree if quad_degree is not None else 2 * n + 4
    bary, wq = triangle_quadrature(q)
    R = strong_residual(space, d, fh, bary, side=side)
    interior2 = 2.0 * space.area * ((R * R) @ wq)
    Rosc = project_residual(space, 2 * n - 2, R, bary, wq)
    osc2 = 2.0 * space.area * ((Rosc * Rosc) @ wq)

    edges, jump2 = edge_jump_norms(space, d, fh, quad_degree=edge_degree)
    jump2_elem = np.zeros(space.num_elems)
    for i, e in enumerate(edges):
        for k, _loc in space.edge_use[e]:
            jump2_elem[k] += jump2[i]

    h = space.h
    rnorm = np.sqrt(np.maximum(interior2, 0.0))
    jnorm = np.sqrt(np.maximum(jump2_elem, 0.0))
    eta = ((h * rnorm) ** p + (np.sqrt(h) * jnorm) ** p) ** (1.0 / p)
    osc = h * np.sqrt(np.maximum(osc2, 0.0))
    return IndicatorField(space, p, side, eta, osc, rnorm, jnorm)


def estimator_total(field, subset=None, p=None):
    """l_p aggregate of indicators over a subset of elements (mesh ids)."""
    p = field.p if p is None else p
    vals = field.eta
    if subset is not None:
        pos = field.space._leaf_pos
        idx = sorted(pos[int(t)] for t in subset)
        vals = vals[idx]
    if len(vals) == 0:
        return 0.0
    return float(np.sum(vals ** p) ** (1.0 / p))


def oscillation_total(field, p=None):
    p = field.p if p is None else p
    if len(field.osc) == 0:
        return 0.0
    return float(np.sum(field.osc ** p) ** (1.0 / p))


# ----------------------------------------------------------------------
# data estimator / data oscillation

@dataclass
class DataEstimates:
    eta: np.ndarray
    osc: np.ndarray

    @property
    def eta_max(self):
        return float(self.eta.max()) if len(self.eta) else 0.0

    @property
    def osc_max(self):
        return float(self.osc.max()) if len(self.osc) else 0.0


def _sample_lattice():
    # 15-point barycentric lattice (degree-4 principal lattice)
    pts = []
    for i in range(5):
        for j in range(5 - i):
            k = 4 - i - j
            pts.append((i / 4.0, j / 4.0, k / 4.0))
    return np.array(pts)


def _linf_fit_remainder(vals, u, v, m_degree):
    """Max |remainder| after a least-squares polynomial fit of samples.

    Stand-in for the best-L_infty approximation; exact (zero remainder)
    whenever the samples come from a polynomial of degree <= m_degree.
    m_degree < 0 means the empty space: the remainder is vals itself.
    """
    if m_degree < 0:
        return np.max(np.abs(vals), axis=-1)
    if m_degree == 0:
        mx = np.max(vals, axis=-1)
        mn = np.min(vals, axis=-1)
        return 0.5 * (mx - mn)
    basis = [np.ones_like(u)]
    for total in range(1, m_degree + 1):
        for j in range(total + 1):
            basis.append(u ** (total - j) * v ** j)
    P = np.stack(basis, axis=-1)                  # (m, ns, nb)
    G = np.einsum("msi,msj->mij", P, P)
    r = np.einsum("msi,ms->mi", P, vals)
    coef = np.linalg.solve(G, r[..., None])[..., 0]
    fit = np.einsum("msi,mi->ms", P, coef)
    return np.max(np.abs(vals - fit), axis=-1)


def data_estimates(space, d, p=2):
    """Coefficient-only estimator and oscillation per element."""
    n = space.degree
    lat = _sample_lattice()
    xs = lat @ np.stack([space.x[space.tri[:, k]] for k in range(3)])
    ys = lat @ np.stack([space.y[space.tri[:, k]] for k in range(3)])
    xs, ys = xs.T, ys.T                            # (m, ns)

    Av = d.A(xs, ys)                               # (2,2,m,ns)
    tr = Av[0, 0] + Av[1, 1]
    det = Av[0, 0] * Av[1, 1] - Av[0, 1] * Av[1, 0]
    disc = np.sqrt(np.maximum(0.25 * tr * tr - det, 0.0))
    specA = np.maximum(np.abs(0.5 * tr + disc), np.abs(0.5 * tr - disc))
    A_inf_elem = np.max(specA, axis=1)
    divA = d.A.eval_div(xs, ys)
    divA_inf = np.max(np.hypot(divA[0], divA[1]), axis=1)
    bv = d.b(xs, ys)
    b_inf = np.max(np.hypot(bv[0], bv[1]), axis=1)
    cv = d.c(xs, ys)
    c_inf = np.max(np.abs(cv), axis=1)

    # ||A||_{L_inf(omega_T)}: max over the edge-neighbor patch
    A_patch = A_inf_elem.copy()
    for e, us in space.edge_use.items():
        if len(us) == 2:
            (k1, _), (k2, _) = us
            A_patch[k1] = max(A_patch[k1], A_inf_elem[k2])
            A_patch[k2] = max(A_patch[k2], A_inf_elem[k1])

    h = space.h
    eta_p = h ** p * (divA_inf ** p + h ** (-p) * A_patch ** p
                      + c_inf ** p + b_inf ** p)
    eta = eta_p ** (1.0 / p)

    u = (xs - np.mean(xs, axis=1, keepdims=True)) / h[:, None]
    v = (ys - np.mean(ys, axis=1, keepdims=True)) / h[:, None]
    divA_rem = np.maximum(
        _linf_fit_remainder(divA[0], u, v, n - 1),
        _linf_fit_remainder(divA[1], u, v, n - 1))
    A_rem = np.zeros(space.num_elems)
    for i in range(2):
        for j in range(2):
            A_rem = np.maximum(A_rem, _linf_fit_remainder(Av[i, j], u, v, n))
    c_rem_lo = _linf_fit_remainder(cv, u, v, n - 2)
    c_rem_hi = _linf_fit_remainder(cv, u, v, 2 * n - 2)
    b_rem = np.maximum(
        _linf_fit_remainder(bv[0], u, v, n - 1),
        _linf_fit_remainder(bv[1], u, v, n - 1))
    osc_p = h ** p * (divA_rem ** p + h ** (-p) * A_rem ** p
                      + h ** p * c_rem_lo ** p + c_rem_hi ** p
                      + b_rem ** p)
    osc = osc_p ** (1.0 / p)
    return DataEstimates(eta, osc)
