"""Coefficient data, dual data, and manufactured test problems.

A problem carries D = (A, b, c, f) plus a goal density g; the dual data
is (A, -b, c) driven by g.  Coefficients are closed-form evaluators
(constants or analytic callables with declared derivatives) so strong
residuals never rely on numerical differentiation.  Manufactured cases
fix exact primal/dual solutions and derive f and g from the strong
forms; the registered names are ``square-smooth``, ``square-convect``,
``square-poly``, ``lshape-corner`` and ``lshape-goal``.
"""

from __future__ import annotations

import numpy as np
import sympy as sp

from .mesh import lshape_mesh, unit_square_mesh


class ProblemError(Exception):
    pass


class CoefficientField:
    """Scalar, vector (2,) or matrix (2,2) coefficient on the domain.

    ``fn(x, y)`` must accept numpy arrays and broadcast; component axes
    come first, e.g. a matrix field returns shape (2, 2) + x.shape.
    ``div`` (for matrix fields: row-wise divergence) and ``grad`` are
    optional declared derivatives.
    """

    def __init__(self, shape, fn=None, value=None, grad=None, div=None):
        self.shape = shape        # (), (2,), or (2, 2)
        self.value = None if value is None else np.asarray(value, dtype=float)
        self._fn = fn
        self.grad = grad
        self.div = div
        if self.value is not None and self.value.shape != shape:
            raise ProblemError(f"constant of shape {self.value.shape}, "
                               f"expected {shape}")

    @property
    def is_constant(self):
        return self.value is not None

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        if self.is_constant:
            out = np.broadcast_to(
                self.value.reshape(self.shape + (1,) * x.ndim),
                self.shape + x.shape)
            return out.copy()
        return np.asarray(self._fn(x, y), dtype=float)

    def eval_div(self, x, y):
        x = np.asarray(x, dtype=float)
        if self.is_constant:
            n = self.shape[0] if self.shape else 1
            return np.zeros((n,) + x.shape) if self.shape else np.zeros(x.shape)
        if self.div is None:
            raise ProblemError("analytic coefficient lacks a declared divergence")
        return np.asarray(self.div(x, y), dtype=float)

    def eval_grad(self, x, y):
        x = np.asarray(x, dtype=float)
        if self.is_constant:
            return np.zeros((2,) + x.shape)
        if self.grad is None:
            raise ProblemError("analytic coefficient lacks a declared gradient")
        return np.asarray(self.grad(x, y), dtype=float)


def constant(value):
    value = np.asarray(value, dtype=float)
    return CoefficientField(value.shape, value=value)


class Domain:
    """Bounding box + membership test + initial mesh factory."""

    def __init__(self, name, bbox, inside, mesh_factory):
        self.name = name
        self.bbox = bbox
        self.inside = inside
        self.mesh = mesh_factory


SQUARE = Domain("square", (0.0, 1.0, 0.0, 1.0),
                lambda x, y: (x >= 0) & (x <= 1) & (y >= 0) & (y <= 1),
                unit_square_mesh)
LSHAPE = Domain("lshape", (-1.0, 1.0, -1.0, 1.0),
                lambda x, y: ((x >= -1) & (x <= 1) & (y >= -1) & (y <= 1)
                              & ~((x > 0) & (y < 0))),
                lshape_mesh)


class ProblemData:
    """D = (A, b, c, f) together with the goal density g."""

    def __init__(self, A, b, c, f, goal_g, domain):
        self.A = A
        self.b = b
        self.c = c
        self.f = f
        self.goal_g = goal_g
        self.domain = domain

    def dual(self):
        """Dual data (A, -b, c) with the goal density as forcing."""
        if self.b.is_constant:
            neg_b = constant(-self.b.value)
        else:
            bfn = self.b
            neg_b = CoefficientField(
                (2,), fn=lambda x, y: -bfn(x, y),
                div=None if bfn.div is None
                else (lambda x, y: -np.asarray(bfn.div(x, y), dtype=float)))
        return ProblemData(self.A, neg_b, self.c, self.goal_g, self.f,
                           self.domain)


def dual_data(d):
    return d.dual()


class ValidationReport:
    def __init__(self, mu0_est, mu1_est, div_b_max, c_min):
        self.mu0_est = mu0_est
        self.mu1_est = mu1_est
        self.div_b_max = div_b_max
        self.c_min = c_min


def validate(d, n_samples=500, div_tol=1e-10):
    """Sample SPD/sign assumptions on the data; raise on violation."""
    if n_samples < 1:
        raise ProblemError("n_samples must be >= 1")
    xa, xb, ya, yb = d.domain.bbox
    k = int(np.ceil(np.sqrt(n_samples)))
    gx = xa + (xb - xa) * (np.arange(k) + 0.5) / k
    gy = ya + (yb - ya) * (np.arange(k) + 0.5) / k
    X, Y = np.meshgrid(gx, gy)
    keep = d.domain.inside(X, Y)
    x, y = X[keep], Y[keep]

    A = d.A(x, y)                      # (2, 2, n)
    if not np.allclose(A[0, 1], A[1, 0], atol=1e-12):
        raise ProblemError("A is not symmetric at sampled points")
    tr = A[0, 0] + A[1, 1]
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    disc = np.sqrt(np.maximum(0.25 * tr * tr - det, 0.0))
    lam_min = 0.5 * tr - disc
    lam_max = 0.5 * tr + disc
    mu0 = float(lam_min.min())
    mu1 = float(lam_max.max())
    if mu0 <= 0.0:
        raise ProblemError(f"A not positive definite: sampled lambda_min={mu0}")

    div_b = np.abs(d.b.eval_div(x, y))
    div_b_max = float(div_b.max()) if div_b.size else 0.0
    if d.b.is_constant:
        div_b_max = 0.0
    elif div_b_max > div_tol:
        raise ProblemError(f"b not divergence-free: |div b| up to {div_b_max}")

    cvals = d.c(x, y)
    c_min = float(np.min(cvals))
    if c_min < 0.0:
        raise ProblemError(f"c takes negative value {c_min}")
    return ValidationReport(mu0, mu1, div_b_max, c_min)


# ----------------------------------------------------------------------
# manufactured cases


class ExactField:
    """Closed-form scalar field with gradient, used as exact u or z."""

    def __init__(self, fn, grad):
        self.fn = fn
        self._grad = grad

    def __call__(self, x, y):
        return np.asarray(self.fn(x, y), dtype=float)

    def grad(self, x, y):
        return np.asarray(self._grad(x, y), dtype=float)


class ManufacturedCase:
    def __init__(self, name, data, exact_u, exact_z, goal_fn):
        self.name = name
        self.data = data
        self.exact_u = exact_u
        self.exact_z = exact_z
        self._goal_fn = goal_fn
        self._goal = None

    @property
    def exact_goal(self):
        if self._goal is None:
            self._goal = self._goal_fn()
        return self._goal


def _lambdify(expr, X, Y):
    f = sp.lambdify((X, Y), expr, "numpy")

    def fn(x, y):
        out = f(x, y)
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(x)).copy()
    return fn


def _sympy_exact(expr, X, Y):
    gx = sp.diff(expr, X)
    gy = sp.diff(expr, Y)
    fx, fgx, fgy = (_lambdify(e, X, Y) for e in (expr, gx, gy))
    return ExactField(fx, lambda x, y: np.stack([fgx(x, y), fgy(x, y)]))


def _sympy_case(name, domain, Amat, bvec, cval, u_expr, z_expr):
    """Derive f and g symbolically from the strong primal/dual forms."""
    X, Y = sp.symbols("x y")
    A = sp.Matrix(Amat)
    b = sp.Matrix(bvec)

    def strong(w, conv_sign):
        gw = sp.Matrix([sp.diff(w, X), sp.diff(w, Y)])
        flux = A * gw
        divflux = sp.diff(flux[0], X) + sp.diff(flux[1], Y)
        return sp.simplify(-divflux + conv_sign * (b.T * gw)[0] + cval * w)

    f_expr = strong(u_expr, +1)    # -div(A grad u) + b.grad u + c u
    g_expr = strong(z_expr, -1)    # -div(A grad z) - b.grad z + c z
    data = ProblemData(
        constant(np.array(Amat, dtype=float)),
        constant(np.array(bvec, dtype=float)),
        constant(np.array(cval, dtype=float)),
        CoefficientField((), fn=_lambdify(f_expr, X, Y)),
        CoefficientField((), fn=_lambdify(g_expr, X, Y)),
        domain)
    exact_u = _sympy_exact(u_expr, X, Y)
    exact_z = _sympy_exact(z_expr, X, Y)
    return ManufacturedCase(
        name, data, exact_u, exact_z,
        lambda: _integrate_goal(domain, data.goal_g, exact_u))


def _integrate_goal(domain, g, exact_u, rounds=5, degree=10):
    """High-order quadrature of the exact goal value g(u)."""
    from .fem import triangle_quadrature
    mesh = domain.mesh()
    mesh.refine_uniform(rounds)
    _, tri, x, y = mesh.leaf_arrays()
    bary, w = triangle_quadrature(degree)
    xs = np.einsum("qk,mk->mq", bary, x[tri])
    ys = np.einsum("qk,mk->mq", bary, y[tri])
    ax, ay = x[tri[:, 0]], y[tri[:, 0]]
    areas = 0.5 * np.abs(
        (x[tri[:, 1]] - ax) * (y[tri[:, 2]] - ay)
        - (x[tri[:, 2]] - ax) * (y[tri[:, 1]] - ay))
    vals = g(xs, ys) * exact_u(xs, ys)
    return float(np.sum(2.0 * areas[:, None] * w[None, :] * vals))


# L-shape corner singularity r^(2/3) sin(2 theta / 3), theta in [0, 3 pi/2]

def _lshape_polar(x, y):
    r2 = x * x + y * y
    th = np.mod(np.arctan2(y, x), 2.0 * np.pi)
    return r2, th


def _lshape_sing(x, y):
    r2, th = _lshape_polar(x, y)
    return np.power(r2, 1.0 / 3.0) * np.sin(2.0 * th / 3.0)


def _lshape_sing_grad(x, y):
    # grad in polar: (2/3) r^(-1/3) [sin(2t/3) e_r + cos(2t/3) e_t]
    r2, th = _lshape_polar(x, y)
    r = np.sqrt(r2)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = (2.0 / 3.0) * np.power(r, -1.0 / 3.0)
    s, c = np.sin(2.0 * th / 3.0), np.cos(2.0 * th / 3.0)
    ct, st = np.cos(th), np.sin(th)
    gx = fac * (s * ct - c * st)
    gy = fac * (s * st + c * ct)
    return np.stack([np.where(r > 0, gx, 0.0), np.where(r > 0, gy, 0.0)])


def _lshape_u(x, y):
    w = (1.0 - x * x) * (1.0 - y * y)
    return _lshape_sing(x, y) * w


def _lshape_u_grad(x, y):
    s = _lshape_sing(x, y)
    gs = _lshape_sing_grad(x, y)
    w = (1.0 - x * x) * (1.0 - y * y)
    wx = -2.0 * x * (1.0 - y * y)
    wy = -2.0 * y * (1.0 - x * x)
    return np.stack([w * gs[0] + s * wx, w * gs[1] + s * wy])


def _lshape_f(x, y):
    # f = -lap(s w) = -(s lap w + 2 grad s . grad w); s is harmonic
    s = _lshape_sing(x, y)
    gs = _lshape_sing_grad(x, y)
    lap_w = -2.0 * (1.0 - y * y) - 2.0 * (1.0 - x * x)
    wx = -2.0 * x * (1.0 - y * y)
    wy = -2.0 * y * (1.0 - x * x)
    return -(s * lap_w + 2.0 * (gs[0] * wx + gs[1] * wy))


def _lshape_primal_case(name, goal_g, exact_z, goal_fn):
    data = ProblemData(
        constant(np.eye(2)), constant(np.zeros(2)), constant(np.array(0.0)),
        CoefficientField((), fn=_lshape_f), goal_g, LSHAPE)
    exact_u = ExactField(_lshape_u, _lshape_u_grad)
    case = ManufacturedCase(name, data, exact_u, exact_z, goal_fn)
    return case


def _case_lshape_corner():
    X, Y = sp.symbols("x y")
    z_expr = X * Y * (1 - X ** 2) * (1 - Y ** 2)
    g_expr = sp.simplify(-(sp.diff(z_expr, X, 2) + sp.diff(z_expr, Y, 2)))
    goal_g = CoefficientField((), fn=_lambdify(g_expr, X, Y))
    exact_z = _sympy_exact(z_expr, X, Y)
    case = _lshape_primal_case("lshape-corner", goal_g, exact_z, None)
    case._goal_fn = lambda: _integrate_goal(LSHAPE, goal_g, case.exact_u,
                                            rounds=6)
    return case


def _case_lshape_goal(omega=(-1.0, -0.5, -1.0, -0.5)):
    xa, xb, ya, yb = omega
    area = (xb - xa) * (yb - ya)

    def chi(x, y):
        inside = (x >= xa) & (x <= xb) & (y >= ya) & (y <= yb)
        return np.where(inside, 1.0 / area, 0.0)

    goal_g = CoefficientField((), fn=chi)
    case = _lshape_primal_case("lshape-goal", goal_g, None, None)
    case._goal_fn = lambda: _integrate_goal(LSHAPE, goal_g, case.exact_u,
                                            rounds=6)
    return case


def _case_square_smooth():
    X, Y = sp.symbols("x y")
    return _sympy_case(
        "square-smooth", SQUARE, [[1, 0], [0, 1]], [1, 1], 1,
        sp.sin(sp.pi * X) * sp.sin(sp.pi * Y),
        X * (1 - X) * Y * (1 - Y))


def _case_square_convect(b=(1.0, 1.0)):
    X, Y = sp.symbols("x y")
    return _sympy_case(
        "square-convect", SQUARE, [[1, 0], [0, 1]], list(b), 1,
        sp.sin(sp.pi * X) * sp.sin(sp.pi * Y),
        sp.sin(sp.pi * X) * Y * (1 - Y))


def _case_square_poly():
    X, Y = sp.symbols("x y")
    bub = X * (1 - X) * Y * (1 - Y)
    return _sympy_case(
        "square-poly", SQUARE, [[1, 0], [0, 1]], [0, 0], 1,
        bub, X * bub)


_REGISTRY = {
    "square-smooth": _case_square_smooth,
    "square-convect": _case_square_convect,
    "square-poly": _case_square_poly,
    "lshape-corner": _case_lshape_corner,
    "lshape-goal": _case_lshape_goal,
}


def manufactured(name, **params):
    """Return a registered manufactured case, optionally parameterized."""
    if name not in _REGISTRY:
        raise ProblemError(f"unknown problem {name!r}; "
                           f"known: {sorted(_REGISTRY)}")
    return _REGISTRY[name](**params)


def problem_names():
    return sorted(_REGISTRY)
