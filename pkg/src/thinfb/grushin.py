"""Baouendi-Grushin geometry, polynomial spaces, and the quarter-space solver.

The Baouendi-Grushin operator

    Delta_G u = (y_n^2 + y_{n+1}^2) Delta'' u + d_nn u + d_{n+1,n+1} u

acts on functions of y = (y'', y_n, y_{n+1}) in R^{n+1}; the tangential
variables y'' carry weight 2 and the two normal variables weight 1 under the
anisotropic dilations delta_lambda(y) = (lambda^2 y'', lambda y_n,
lambda y_{n+1}).  This module provides:

* the algebraic quasi-metric equivalent to the intrinsic (Carnot-Caratheodory)
  distance of the Grushin vector fields,
* exact-rational weighted-homogeneous polynomial algebra, including the
  nullspace of Delta_G on each homogeneous slice (with or without the mixed
  Dirichlet/Neumann symmetry conditions),
* a finite difference solver for the mixed Dirichlet-Neumann problem
  Delta_G u = f on the quarter region {y_n >= 0, y_{n+1} <= 0},
* Campanato-type measurement of the best polynomial approximation error on
  dyadic cylinders centered on the degenerate set P = {y_n = y_{n+1} = 0}.

Convention: polynomials over n+1 variables are indexed 0..n with tangential
variables first, then y_n (index n-1) and y_{n+1} (index n).
"""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._util import loglog_slope

# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class GrushinPoint:
    """A point (y'', y_n, y_{n+1}) with its distance r to P."""

    coords: tuple

    @property
    def r(self):
        yn, yp = self.coords[-2], self.coords[-1]
        return float(np.hypot(yn, yp))

    @property
    def in_quarter(self):
        return self.coords[-2] >= 0 and self.coords[-1] <= 0


def _coords(p):
    if isinstance(p, GrushinPoint):
        return np.asarray(p.coords, dtype=float)
    return np.asarray(p, dtype=float)


def quasi_metric(p, q):
    """Algebraic quasi-metric equivalent to the intrinsic Grushin distance.

    d(p,q) = |p_n - q_n| + |p_{n+1} - q_{n+1}|
             + |p'' - q''| / (|p_n|+|p_{n+1}|+|q_n|+|q_{n+1}|+|p''-q''|^{1/2})

    Exactly 1-homogeneous under the dilations delta_lambda.  Operates on
    single points or broadcastable arrays whose last axis is the coordinate.
    """
    p, q = _coords(p), _coords(q)
    dn = np.abs(p[..., -2] - q[..., -2])
    dp_ = np.abs(p[..., -1] - q[..., -1])
    dtan = np.sqrt(np.sum((p[..., :-2] - q[..., :-2]) ** 2, axis=-1))
    denom = (np.abs(p[..., -2]) + np.abs(p[..., -1])
             + np.abs(q[..., -2]) + np.abs(q[..., -1]) + np.sqrt(dtan))
    with np.errstate(invalid="ignore", divide="ignore"):
        tan_term = np.where(dtan > 0, dtan / denom, 0.0)
    return dn + dp_ + tan_term


def dilate(lam, p):
    """Anisotropic dilation delta_lambda(y'', y_n, y_{n+1}) = (lam^2 y'', lam y_n, lam y_{n+1})."""
    if lam <= 0:
        raise ValueError("dilation parameter must be positive")
    c = _coords(p).copy()
    c[..., :-2] *= lam ** 2
    c[..., -2:] *= lam
    if isinstance(p, GrushinPoint):
        return GrushinPoint(tuple(c))
    return c


def dist_to_edge(points):
    """r(y) = sqrt(y_n^2 + y_{n+1}^2), the distance to P."""
    pts = _coords(points)
    return np.hypot(pts[..., -2], pts[..., -1])


# ---------------------------------------------------------------------------
# weighted-homogeneous polynomial algebra


def _weights(n):
    return tuple([2] * (n - 1) + [1, 1])


@dataclass(frozen=True)
class GrushinPolynomial:
    """Polynomial over (y'', y_n, y_{n+1}) with a sparse exponent->coefficient map.

    Coefficients may be exact ``Fraction``s (for nullspace computations) or
    floats.  The weighted degree counts tangential exponents twice.
    """

    n: int
    coeffs: dict = field(default_factory=dict)

    # -- construction ------------------------------------------------------
    @classmethod
    def zero(cls, n):
        return cls(n, {})

    @classmethod
    def monomial(cls, beta, n, c=1):
        beta = tuple(int(b) for b in beta)
        if len(beta) != n + 1:
            raise ValueError("exponent tuple must have n+1 entries")
        return cls(n, {beta: c} if c else {})

    @classmethod
    def from_dict(cls, coeffs, n):
        clean = {tuple(k): v for k, v in coeffs.items() if v}
        return cls(n, clean)

    # -- algebra -----------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, GrushinPolynomial):
            out = dict(self.coeffs)
            for b, c in other.coeffs.items():
                out[b] = out.get(b, 0) + c
                if not out[b]:
                    del out[b]
            return GrushinPolynomial(self.n, out)
        return self + GrushinPolynomial.monomial((0,) * (self.n + 1), self.n, other)

    __radd__ = __add__

    def __neg__(self):
        return GrushinPolynomial(self.n, {b: -c for b, c in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-other if isinstance(other, GrushinPolynomial)
                       else GrushinPolynomial.monomial((0,) * (self.n + 1), self.n, -other))

    def __mul__(self, other):
        if isinstance(other, GrushinPolynomial):
            out = {}
            for b1, c1 in self.coeffs.items():
                for b2, c2 in other.coeffs.items():
                    b = tuple(e1 + e2 for e1, e2 in zip(b1, b2))
                    out[b] = out.get(b, 0) + c1 * c2
            return GrushinPolynomial.from_dict(out, self.n)
        if not other:
            return GrushinPolynomial.zero(self.n)
        return GrushinPolynomial(self.n, {b: c * other for b, c in self.coeffs.items()})

    __rmul__ = __mul__

    def diff(self, i):
        out = {}
        for b, c in self.coeffs.items():
            if b[i] == 0:
                continue
            nb = list(b)
            nb[i] -= 1
            out[tuple(nb)] = out.get(tuple(nb), 0) + c * b[i]
        return GrushinPolynomial.from_dict(out, self.n)

    def eval(self, points):
        """Evaluate at an array of points with shape (..., n+1)."""
        pts = np.asarray(points, dtype=float)
        out = np.zeros(pts.shape[:-1])
        for b, c in self.coeffs.items():
            term = np.full(pts.shape[:-1], float(c))
            for i, e in enumerate(b):
                if e:
                    term = term * pts[..., i] ** e
            out += term
        return out

    def eval_exact(self, point):
        """Evaluate at a single point with Fraction coordinates, exactly."""
        total = Fraction(0)
        for b, c in self.coeffs.items():
            term = Fraction(c)
            for i, e in enumerate(b):
                if e:
                    term *= Fraction(point[i]) ** e
            total += term
        return total

    # -- structure ---------------------------------------------------------
    def weighted_degree(self, beta=None):
        w = _weights(self.n)
        if beta is not None:
            return sum(wi * bi for wi, bi in zip(w, beta))
        if not self.coeffs:
            return 0
        return max(sum(wi * bi for wi, bi in zip(w, b)) for b in self.coeffs)

    def is_homogeneous(self, k=None):
        if not self.coeffs:
            return True
        degs = {self.weighted_degree(b) for b in self.coeffs}
        if k is None:
            return len(degs) == 1
        return degs == {k}

    def vanishes_on_yn0(self):
        """True iff p == 0 on {y_n = 0} (every monomial contains y_n)."""
        return all(b[-2] >= 1 for b in self.coeffs)

    def neumann_on_yp0(self):
        """True iff d_{n+1} p == 0 on {y_{n+1} = 0} (no monomial linear in y_{n+1})."""
        return all(b[-1] != 1 for b in self.coeffs)

    def primitive(self):
        """Scale so the coefficients are coprime integers, leading one positive."""
        if not self.coeffs:
            return self
        fracs = {b: Fraction(c) for b, c in self.coeffs.items()}
        from math import gcd, lcm
        den = lcm(*[f.denominator for f in fracs.values()])
        nums = {b: f.numerator * (den // f.denominator) for b, f in fracs.items()}
        g = gcd(*[abs(v) for v in nums.values()])
        lead = nums[min(nums)]
        sign = -1 if lead < 0 else 1
        return GrushinPolynomial(self.n, {b: sign * v // g for b, v in nums.items()})

    def as_float(self):
        return GrushinPolynomial(self.n, {b: float(c) for b, c in self.coeffs.items()})

    def coeff_strings(self):
        """Exact rational coefficient map keyed by exponent strings, for reports."""
        return {",".join(map(str, b)): str(Fraction(c))
                for b, c in sorted(self.coeffs.items())}

    def __repr__(self):
        terms = []
        for b, c in sorted(self.coeffs.items()):
            mono = "*".join(f"y{i}^{e}" for i, e in enumerate(b) if e) or "1"
            terms.append(f"{c}*{mono}")
        return " + ".join(terms) or "0"


def apply_grushin(p):
    """Apply Delta_G = (y_n^2+y_{n+1}^2) Delta'' + d_nn + d_{n+1,n+1}.

    For a :class:`GrushinPolynomial` the result is computed exactly in the
    coefficient arithmetic of the input.
    """
    if not isinstance(p, GrushinPolynomial):
        raise TypeError("apply_grushin expects a GrushinPolynomial; "
                        "use grushin_stencil_apply for grid fields")
    n = p.n
    yn2 = GrushinPolynomial.monomial((0,) * (n - 1) + (2, 0), n)
    yp2 = GrushinPolynomial.monomial((0,) * (n - 1) + (0, 2), n)
    out = p.diff(n - 1).diff(n - 1) + p.diff(n).diff(n)
    for i in range(n - 1):
        out = out + (yn2 + yp2) * p.diff(i).diff(i)
    return out


def homogeneous_basis(k, n):
    """All monomials of weighted degree exactly k, in lexicographic order."""
    if k < 0:
        raise ValueError("degree must be nonnegative")
    w = _weights(n)
    betas = []

    def rec(i, remaining, prefix):
        if i == n + 1:
            if remaining == 0:
                betas.append(tuple(prefix))
            return
        for e in range(remaining // w[i] + 1):
            rec(i + 1, remaining - e * w[i], prefix + [e])

    rec(0, k, [])
    betas.sort()
    return [GrushinPolynomial.monomial(b, n) for b in betas]


def harmonic_polynomials(k, n, with_bc=True):
    """Exact-rational basis of ker(Delta_G) on the weighted-degree-k slice.

    When ``with_bc`` is set, the slice is first intersected with the symmetry
    conditions p = 0 on {y_n = 0} and d_{n+1} p = 0 on {y_{n+1} = 0} (both are
    monomial-wise constraints).  Returns primitive-integer polynomials.
    """
    if k > 8:
        raise ValueError("combinatorial cap: k <= 8")
    basis = homogeneous_basis(k, n)
    if with_bc:
        basis = [p for p in basis
                 if p.vanishes_on_yn0() and p.neumann_on_yp0()]
    if not basis:
        return []
    images = [apply_grushin(p) for p in basis]
    target = sorted({b for im in images for b in im.coeffs})
    if not target:
        return [p.primitive() for p in basis]
    index = {b: i for i, b in enumerate(target)}
    import sympy
    mat = sympy.zeros(len(target), len(basis))
    for j, im in enumerate(images):
        for b, c in im.coeffs.items():
            mat[index[b], j] = sympy.Rational(c)
    null = mat.nullspace()
    out = []
    for vec in null:
        p = GrushinPolynomial.zero(n)
        for j, mono in enumerate(basis):
            c = Fraction(int(sympy.fraction(vec[j])[0]), int(sympy.fraction(vec[j])[1]))
            if c:
                p = p + mono * c
        out.append(p.primitive())
    out.sort(key=lambda p: sorted(p.coeffs))
    return out


# ---------------------------------------------------------------------------
# quarter-region grid fields and the mixed BVP


@dataclass
class QuarterGridField:
    """Uniform grid samples on [-1,1]^{n-1} x [0,1] x [-1,0] (tangential, y_n, y_{n+1}).

    ``values`` has shape (m_tan,)*(n-1) + (m_yn, m_yp).  For n=1 there is no
    tangential axis.
    """

    n: int
    yn: np.ndarray
    yp: np.ndarray
    ytan: np.ndarray | None
    values: np.ndarray

    @classmethod
    def from_function(cls, f, n, n_per_axis):
        yn = np.linspace(0.0, 1.0, n_per_axis)
        yp = np.linspace(-1.0, 0.0, n_per_axis)
        if n == 1:
            pts = np.stack(np.meshgrid(yn, yp, indexing="ij"), axis=-1)
            ytan = None
        elif n == 2:
            ytan = np.linspace(-1.0, 1.0, 2 * n_per_axis - 1)
            pts = np.stack(np.meshgrid(ytan, yn, yp, indexing="ij"), axis=-1)
        else:
            raise ValueError("n must be 1 or 2")
        vals = f(pts) if callable(f) else np.asarray(f, dtype=float)
        return cls(n, yn, yp, ytan, np.asarray(vals, dtype=float))

    @property
    def spacing(self):
        return float(self.yn[1] - self.yn[0])

    def points(self):
        if self.n == 1:
            return np.stack(np.meshgrid(self.yn, self.yp, indexing="ij"), axis=-1)
        return np.stack(np.meshgrid(self.ytan, self.yn, self.yp, indexing="ij"),
                        axis=-1)

    def bc_masks(self):
        """Classification masks: dirichlet (y_n=0 and outer), neumann (y_{n+1}=0)."""
        shape = self.values.shape
        idx = np.indices(shape)
        i_n, i_p = idx[-2], idx[-1]
        dirichlet = (i_n == 0) | (i_n == shape[-2] - 1) | (i_p == 0)
        if self.n == 2:
            i_t = idx[0]
            dirichlet |= (i_t == 0) | (i_t == shape[0] - 1)
        neumann = (i_p == shape[-1] - 1) & ~dirichlet
        interior = ~dirichlet & ~neumann
        return {"dirichlet": dirichlet, "neumann": neumann, "interior": interior}


def solve_mixed_bvp(f, outer_data, n=1, n_per_axis=65):
    """Solve Delta_G u = f on the quarter region with mixed boundary conditions.

    u = 0 on {y_n = 0}; d_{n+1} u = 0 on {y_{n+1} = 0} (even-reflection ghost
    row); Dirichlet ``outer_data`` on the remaining outer faces.  ``f`` and
    ``outer_data`` are callables of point arrays (or ``f`` a QuarterGridField).

    The degenerate tangential coefficient (y_n^2 + y_{n+1}^2) is evaluated at
    the node; on P the rows reduce to the 1D operator d_nn + d_{n+1,n+1}.
    """
    if isinstance(f, QuarterGridField):
        template = f
        fvals = f.values
    else:
        template = QuarterGridField.from_function(
            lambda pts: np.zeros(pts.shape[:-1]), n, n_per_axis)
        fvals = f(template.points())
    pts = template.points()
    shape = template.values.shape
    h = template.spacing
    masks = template.bc_masks()
    N = int(np.prod(shape))
    flat = np.arange(N).reshape(shape)

    r2 = pts[..., -2] ** 2 + pts[..., -1] ** 2

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(np.broadcast_to(v, r.shape).ravel().astype(float))

    free = ~masks["dirichlet"]
    # assemble -Delta_G (M-matrix) on free rows
    idx = np.indices(shape)
    coeff_axes = ([r2] * (template.n - 1)) + [np.ones(shape), np.ones(shape)]
    diag = np.zeros(shape)
    naxes = len(shape)
    for ax in range(naxes):
        c = coeff_axes[ax] / h ** 2
        for s in (-1, +1):
            nb = idx.copy()
            nb[ax] = idx[ax] + s
            inside = (nb[ax] >= 0) & (nb[ax] < shape[ax])
            if ax == naxes - 1:
                # Neumann edge y_{n+1}=0: even reflection sends the ghost
                # neighbor back to the interior one
                ghost = nb[ax] > shape[ax] - 1
                nb[ax] = np.where(ghost, shape[ax] - 2, nb[ax])
                inside = inside | ghost
            m = free & inside
            if not np.any(m):
                continue
            nbr = flat[tuple(n_[m] for n_ in nb)]
            add(flat[m], nbr, -c[m])
            diag[m] += c[m]
    m = free
    add(flat[m], flat[m], diag[m])

    A = sp.csr_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))

    u = np.zeros(shape)
    bvals = outer_data(pts) if callable(outer_data) else np.asarray(outer_data)
    u[masks["dirichlet"]] = bvals[masks["dirichlet"]]
    # y_n = 0 face is the homogeneous Dirichlet condition
    u[(np.indices(shape)[-2] == 0)] = 0.0

    rhs = -fvals.copy()  # solve -Delta_G u = -f
    # fold the Dirichlet values into the right side
    fixed = masks["dirichlet"].ravel()
    freef = ~fixed
    Aff = A[freef][:, freef]
    Afd = A[freef][:, fixed]
    bf = rhs.ravel()[freef] - Afd @ u.ravel()[fixed]

    if Aff.shape[0] <= 200000:
        sol = spla.spsolve(Aff.tocsc(), bf)
    else:
        M = sp.diags(1.0 / Aff.diagonal())
        sol, info = spla.cg(Aff, bf, rtol=1e-12, maxiter=20000, M=M)
        if info != 0:
            raise RuntimeError(f"Grushin BVP iteration did not converge (info={info})")
    uf = u.ravel()
    uf[freef] = sol
    out = QuarterGridField(template.n, template.yn, template.yp, template.ytan,
                           uf.reshape(shape))
    return out


def grushin_residual(u, f=None):
    """Pointwise stencil residual Delta_G u - f on interior nodes (NaN elsewhere)."""
    pts = u.points()
    h = u.spacing
    vals = u.values
    r2 = pts[..., -2] ** 2 + pts[..., -1] ** 2
    res = np.full(vals.shape, np.nan)
    core = tuple(slice(1, -1) for _ in vals.shape)
    lap = np.zeros_like(vals[core])
    naxes = vals.ndim
    for ax in range(naxes):
        d2 = (np.diff(vals, 2, axis=ax) / h ** 2)
        sl = tuple(slice(1, -1) if a != ax else slice(None)
                   for a in range(naxes))
        c = r2[core] if ax < naxes - 2 else 1.0
        lap += c * d2[sl]
    res[core] = lap
    if f is not None:
        fv = f(pts) if callable(f) else np.asarray(f)
        res[core] -= fv[core]
    return res


# ---------------------------------------------------------------------------
# Campanato approximation decay


def _profile_basis(n, max_degree=3):
    """Degree<=max_degree BC-harmonic basis extended by the profile monomials.

    The span is {y_n, y_i y_n, y_n^3, y_n y_{n+1}^2} (plus any BC-harmonic
    polynomials of weighted degree <= max_degree not already contained in it).
    """
    polys = []
    seen = set()

    def push(p):
        key = tuple(sorted(p.coeffs))
        if key and key not in seen:
            seen.add(key)
            polys.append(p.as_float())

    zeros = (0,) * (n - 1)
    push(GrushinPolynomial.monomial(zeros + (1, 0), n))
    for i in range(n - 1):
        beta = [0] * (n + 1)
        beta[i] = 1
        beta[n - 1] = 1
        push(GrushinPolynomial.monomial(tuple(beta), n))
    if max_degree >= 3:
        push(GrushinPolynomial.monomial(zeros + (3, 0), n))
        push(GrushinPolynomial.monomial(zeros + (1, 2), n))
    for k in range(1, max_degree + 1):
        for p in harmonic_polynomials(k, n, with_bc=True):
            push(p)
    return polys


def campanato_decay(u, y0, radii=None, max_degree=3):
    """Mean-square error of the best degree<=3 boundary-respecting polynomial fit.

    For each dyadic radius r the field is fitted on the non-isotropic cylinder
    B_r^+(y0) = {|y''-y0''| <= r^2, y_n^2+y_{n+1}^2 <= r^2, y_n>=0, y_{n+1}<=0}
    by least squares over the profile/harmonic basis; reported is the mean
    square residual per radius and its fitted log-log slope.
    """
    pts = u.points()
    vals = u.values
    y0 = np.asarray(y0, dtype=float)
    if abs(y0[-1]) > 1e-14 or abs(y0[-2]) > 1e-14:
        raise ValueError("anchor must lie on P = {y_n = y_{n+1} = 0}")
    if radii is None:
        radii = [0.5 / 2 ** m for m in range(4)]
    radii = sorted(radii, reverse=True)
    basis = _profile_basis(u.n, max_degree)
    r_np = np.hypot(pts[..., -2], pts[..., -1])
    dtan = (np.sqrt(np.sum((pts[..., :-2] - y0[:-2]) ** 2, axis=-1))
            if u.n > 1 else np.zeros(vals.shape))
    rows = []
    shifted = pts.copy()
    shifted[..., :-2] -= y0[:-2]
    for r in radii:
        m = (r_np <= r) & (dtan <= r ** 2)
        npts = int(m.sum())
        if npts < len(basis) + 2:
            continue
        A = np.stack([p.eval(shifted[m]) for p in basis], axis=-1)
        b = vals[m]
        coef, _, _, _ = np.linalg.lstsq(A, b, rcond=None)
        resid = b - A @ coef
        rows.append({"r": float(r), "count": npts,
                     "mean_sq": float(np.mean(resid ** 2)),
                     "coefficients": coef.tolist()})
    if len(rows) < 3:
        raise ValueError("fewer than 3 resolvable radii for Campanato decay")
    rr = [row["r"] for row in rows]
    ee = [row["mean_sq"] for row in rows]
    if max(ee) < 1e-24:
        slope, info = float("inf"), {"note": "error at rounding level"}
    else:
        slope, info = loglog_slope(rr, ee)
    return {"radii": rows, "slope": slope, "fit": info,
            "basis_size": len(basis)}
