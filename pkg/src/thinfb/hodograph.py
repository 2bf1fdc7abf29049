"""Partial Hodograph-Legendre transform and the fully nonlinear PDE.

The transform T(x) = (x'', d_n w(x), d_{n+1} w(x)) straightens the free
boundary of the thin obstacle problem onto the degenerate edge
P = {y_n = y_{n+1} = 0} of the quarter region Q_+ = {y_n >= 0, y_{n+1} <= 0};
the Legendre function v(y) = w(x) - x_n y_n - x_{n+1} y_{n+1} then satisfies
the fully nonlinear, degenerate elliptic equation

    F(v,y) = sum_{i,j} a~^{ij}(y) G^{ij}(v)
             - J(v) (sum_j b~^j d_j v + b~^n y_n + b~^{n+1} y_{n+1}) = 0,

where G^{ij} are the Hessian minors listed in ``G_TABLE_DOC`` below,
J(v) = v_nn v_pp - v_np^2, and a~/b~ are the coefficients composed with the
inverse transform x = (y'', -d_n v, -d_{n+1} v).  The linearization of F at
the model cubic is a Baouendi-Grushin operator; at a general edge point y_0
the expansion F = L_{y_0} v + c_0 y_n + E_{y_0} holds with E decaying at rate
eta_0 = min(1 + 4 alpha, 3) in the Grushin quasi-metric.

Index convention: y = (y'', y_n, y_{n+1}) with the two normal variables last,
matching the x-side convention of the solver; "p" abbreviates n+1.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import LinearNDInterpolator
from scipy.spatial import cKDTree

from ._util import dyadic_radii, loglog_slope, shell_stats
from .grushin import GrushinPolynomial, quasi_metric

G_TABLE_DOC = """
G^{ij} = -det3(i,j)                       i,j tangential
G^{in} = 2 det[[v_in, v_ip], [v_np, v_pp]]
G^{ip} = 2 det[[v_ip, v_in], [v_np, v_nn]]
G^{nn} = v_pp ;  G^{pp} = v_nn ;  G^{np} = -v_np
det3(i,j) = det[[v_ij, v_in, v_ip], [v_jn, v_nn, v_np], [v_jp, v_np, v_pp]]
"""


# ---------------------------------------------------------------------------
# jets: pointwise (value, gradient, Hessian) bundles


def polynomial_jet(poly, pts):
    """Jet of a GrushinPolynomial on an array of points."""
    pts = np.asarray(pts, dtype=float)
    d = pts.shape[-1]
    grad = np.empty(pts.shape)
    hess = np.empty(pts.shape[:-1] + (d, d))
    firsts = [poly.diff(i) for i in range(d)]
    for i in range(d):
        grad[..., i] = firsts[i].eval(pts)
        for j in range(i, d):
            hess[..., i, j] = hess[..., j, i] = firsts[i].diff(j).eval(pts)
    return {"y": pts, "v": poly.eval(pts), "grad": grad, "hess": hess}


def _jet_add(jet, poly, scale):
    """jet + scale * (jet of poly), leaving the base jet untouched."""
    pj = polynomial_jet(poly, jet["y"])
    return {"y": jet["y"],
            "v": jet["v"] + scale * pj["v"],
            "grad": jet["grad"] + scale * pj["grad"],
            "hess": jet["hess"] + scale * pj["hess"]}


# ---------------------------------------------------------------------------
# the nonlinear operator


def _hessian_minors(H):
    """All G^{ij} contributions and J for Hessian arrays of shape (...,d,d)."""
    d = H.shape[-1]
    n = d - 1
    vnn = H[..., n - 1, n - 1]
    vnp = H[..., n - 1, n]
    vpp = H[..., n, n]
    J = vnn * vpp - vnp ** 2
    return n, vnn, vnp, vpp, J


def F_pointwise(jet, metric, mode="homogeneous", f=None):
    """Evaluate F(v, y) pointwise from a jet of the Legendre function.

    ``metric`` supplies a^{ij} and its gradient in x-variables; the
    composition point is x = (y'', -d_n v, -d_{n+1} v).  In mode
    "inhomogeneous" the result is F - g with g(y) = -J(v) f(x(y)).
    """
    y = jet["y"]
    H = jet["hess"]
    g = jet["grad"]
    d = y.shape[-1]
    n, vnn, vnp, vpp, J = _hessian_minors(H)

    x = np.empty(y.shape)
    x[..., :n - 1] = y[..., :n - 1]
    x[..., n - 1] = -g[..., n - 1]
    x[..., n] = -g[..., n]
    a = metric(x)
    b = metric.divergence(x)

    F = a[..., n - 1, n - 1] * vpp + a[..., n, n] * vnn \
        - 2.0 * a[..., n - 1, n] * vnp
    for i in range(n - 1):
        vin = H[..., i, n - 1]
        vip = H[..., i, n]
        # G^{in} and G^{ip}, each appearing twice in the symmetric sum
        F = F + 2.0 * a[..., i, n - 1] * (vin * vpp - vip * vnp)
        F = F + 2.0 * a[..., i, n] * (vip * vnn - vin * vnp)
        for j in range(n - 1):
            vjn = H[..., j, n - 1]
            vjp = H[..., j, n]
            vij = H[..., i, j]
            det3 = (vij * (vnn * vpp - vnp ** 2)
                    - vin * (vjn * vpp - vnp * vjp)
                    + vip * (vjn * vnp - vnn * vjp))
            F = F - a[..., i, j] * det3

    lower = b[..., n - 1] * y[..., n - 1] + b[..., n] * y[..., n]
    for j in range(n - 1):
        lower = lower + b[..., j] * g[..., j]
    F = F - J * lower

    if mode == "inhomogeneous":
        if f is None:
            raise ValueError("inhomogeneous mode needs the source f")
        F = F + J * f(x)
    return F


def G_polynomials(poly):
    """The minors G^{ij} of a polynomial Hessian, computed exactly.

    Returns a dict keyed by (i, j) with i <= j, together with J, all as
    polynomials in the same variables.
    """
    n1 = poly.n + 1
    n = poly.n
    H = {}
    for i in range(n1):
        for j in range(i, n1):
            H[(i, j)] = H[(j, i)] = poly.diff(i).diff(j)
    vnn, vnp, vpp = H[(n - 1, n - 1)], H[(n - 1, n)], H[(n, n)]
    J = vnn * vpp - vnp * vnp
    out = {}
    for i in range(n - 1):
        for j in range(i, n - 1):
            det3 = (H[(i, j)] * J
                    - H[(i, n - 1)] * (H[(j, n - 1)] * vpp - vnp * H[(j, n)])
                    + H[(i, n)] * (H[(j, n - 1)] * vnp - vnn * H[(j, n)]))
            out[(i, j)] = -1 * det3
        out[(i, n - 1)] = 2 * (H[(i, n - 1)] * vpp - H[(i, n)] * vnp)
        out[(i, n)] = 2 * (H[(i, n)] * vnn - H[(i, n - 1)] * vnp)
    out[(n - 1, n - 1)] = vpp
    out[(n, n)] = vnn
    out[(n - 1, n)] = -1 * vnp
    return out, J


def _g_degree(i, j, n):
    """Homogeneity degree of G^{ij} as a function of the Hessian entries."""
    if i < n - 1 and j < n - 1:
        return 3
    if (i < n - 1) != (j < n - 1):
        return 2
    return 1


# ---------------------------------------------------------------------------
# linearization


def apply_gateaux(jet, metric, probe, eps=1e-5, mode="homogeneous", f=None):
    """Central-difference Gateaux derivative of F at the jet, direction probe."""
    Fp = F_pointwise(_jet_add(jet, probe, +eps), metric, mode, f)
    Fm = F_pointwise(_jet_add(jet, probe, -eps), metric, mode, f)
    return (Fp - Fm) / (2.0 * eps)


def linearize_F(jet, metric, eps=1e-5):
    """Coefficient fields of the linearization D_v F at the jet.

    Probes F with the polynomials {1, y_k, y_k y_l / (1 + delta_kl)} and
    peels off zeroth/first/second order coefficients; returns a dict with
    "c2" of shape (..., d, d) (second order, symmetric), "c1" (..., d), and
    "c0" (...).
    """
    y = jet["y"]
    d = y.shape[-1]
    n = jet["y"].shape[-1] - 1

    one = GrushinPolynomial.monomial((0,) * d, n)
    c0 = apply_gateaux(jet, metric, one, eps)

    c1 = np.empty(y.shape)
    for k in range(d):
        beta = [0] * d
        beta[k] = 1
        mono = GrushinPolynomial.monomial(tuple(beta), n)
        c1[..., k] = apply_gateaux(jet, metric, mono, eps) - c0 * y[..., k]

    c2 = np.empty(y.shape[:-1] + (d, d))
    for k in range(d):
        for l in range(k, d):
            beta = [0] * d
            beta[k] += 1
            beta[l] += 1
            mono = GrushinPolynomial.monomial(tuple(beta), n,
                                              0.5 if k == l else 1.0)
            val = apply_gateaux(jet, metric, mono, eps)
            val = val - c0 * mono.eval(y)
            if k == l:
                val = val - c1[..., k] * y[..., k]
                c2[..., k, k] = val
            else:
                val = val - c1[..., k] * y[..., l] - c1[..., l] * y[..., k]
                c2[..., k, l] = c2[..., l, k] = 0.5 * val
    return {"c2": c2, "c1": c1, "c0": c0}


def grushin_reference_apply(poly_or_jet, pts=None, factor=4.0):
    """(factor (y_n^2+y_{n+1}^2) Delta'' + d_nn + d_pp) applied to a polynomial."""
    poly = poly_or_jet
    n = poly.n
    jet = polynomial_jet(poly, pts)
    H = jet["hess"]
    r2 = pts[..., -2] ** 2 + pts[..., -1] ** 2
    out = H[..., -2, -2] + H[..., -1, -1]
    for i in range(n - 1):
        out = out + factor * r2 * H[..., i, i]
    return out


# ---------------------------------------------------------------------------
# blow-up Legendre profile (cubic of the regular free boundary point)


def blowup_legendre(profile, y0, g_y0=0.0):
    """Cubic-plus-linear Legendre blow-up polynomial at an edge point y0.

    With a = profile.amplitude, nu the in-plane normal, A = A(x0):

      v_y0 = -4/(27 a^2) [ (nu.A nu / nu_n)^3 y_n^3
                           - 3 (nu.A nu / nu_n) a^{n+1,n+1} y_n y_{n+1}^2 ]
             - g(y0) y_n + y_n (y'' - y0'') . nu'' / nu_n.
    """
    nu = np.asarray(profile.nu, dtype=float)
    d = nu.shape[0]
    n = d - 1
    nu_n = nu[n - 1]
    if nu_n <= 0:
        raise ValueError("graph direction degenerate: nu_n <= 0")
    a = profile.amplitude
    q = profile.nu_A_nu
    avert = profile.a_vert
    pref = -4.0 / (27.0 * a * a)
    zeros = (0,) * (d - n - 1)

    def mono(beta, c):
        return GrushinPolynomial.monomial(tuple(beta), n, float(c))

    terms = []
    b3 = [0] * d
    b3[n - 1] = 3
    terms.append(mono(b3, pref * (q / nu_n) ** 3))
    bnp = [0] * d
    bnp[n - 1] = 1
    bnp[n] = 2
    terms.append(mono(bnp, pref * (-3.0) * (q / nu_n) * avert))
    bn = [0] * d
    bn[n - 1] = 1
    terms.append(mono(bn, -float(g_y0)))
    y0 = np.asarray(y0, dtype=float)
    for i in range(n - 1):
        bi = [0] * d
        bi[i] = 1
        bi[n - 1] = 1
        terms.append(mono(bi, nu[i] / nu_n))
        terms.append(mono(bn, -y0[i] * nu[i] / nu_n))
    out = GrushinPolynomial.zero(n)
    for t in terms:
        out = out + t
    return out


# ---------------------------------------------------------------------------
# hodograph map


@dataclass
class HodographMap:
    """Forward samples of T and a slice-wise inverse interpolant."""

    dim: int
    x: np.ndarray                  # (N, d) source points
    y: np.ndarray                  # (N, d) image points
    jac_det: np.ndarray            # (N,)
    labels: np.ndarray             # (N,) strings: interior/contact/positivity/fb
    hgrid: float
    slice_vals: np.ndarray = None  # tangential slice coordinates (3D)
    slice_interps: list = None     # inverse interpolants per slice
    inverse_2d: object = None      # single interpolant in 2D
    gw: np.ndarray = None          # grad w at the forward samples
    Hw: np.ndarray = None          # Hessian of w at the forward samples

    def inverse(self, ypts):
        """Interpolated T^{-1}; NaN outside the sampled image region."""
        ypts = np.asarray(ypts, dtype=float)
        single = ypts.ndim == 1
        ypts = np.atleast_2d(ypts)
        out = np.full(ypts.shape, np.nan)
        if self.dim == 2:
            xn_xp = self.inverse_2d(ypts[:, -2:])
            out[:, :] = xn_xp
        else:
            out[:, 0] = ypts[:, 0]
            sv = self.slice_vals
            pos = np.interp(ypts[:, 0], sv, np.arange(len(sv)))
            k0 = np.clip(np.floor(pos).astype(int), 0, len(sv) - 2)
            t = np.clip(pos - k0, 0.0, 1.0)
            for k in np.unique(k0):
                m = k0 == k
                lo = self.slice_interps[k](ypts[m, 1:])
                hi = self.slice_interps[k + 1](ypts[m, 1:])
                out[m, 1:] = (1 - t[m])[:, None] * lo + t[m][:, None] * hi
        return out[0] if single else out

    def round_trip_error(self, subsample=2):
        """max |T^{-1}(T(x)) - x| over every ``subsample``-th forward sample."""
        xs = self.x[::subsample]
        ys = self.y[::subsample]
        back = self.inverse(ys)
        ok = np.all(np.isfinite(back), axis=1)
        if not ok.any():
            raise ValueError("inverse undefined on all test samples")
        return float(np.abs(back[ok] - xs[ok]).max())


def _classify(solution, pts_idx, tol_fb=1e-8):
    grid = solution.grid
    masks = grid.masks()
    labels = np.empty(len(pts_idx[0]), dtype=object)
    thin = masks["thin_plane"][pts_idx]
    wv = solution.w[pts_idx]
    labels[:] = "interior"
    labels[thin & (wv <= tol_fb)] = "contact"
    labels[thin & (wv > tol_fb)] = "positivity"
    return labels


def hodograph_map(solution, oracle=None, window=0.5, tol_fb=1e-8):
    """Build the transform y = (x'', d_n w, d_{n+1} w) on the trusted window.

    Derivatives are analytic when an oracle backs the field, otherwise
    second-order grid differences (one-sided at the thin plane).  The inverse
    is a per-tangential-slice scattered linear interpolant on the image
    quarter region.
    """
    grid = solution.grid
    d = grid.dim
    pts = grid.points()
    if oracle is not None:
        gw = oracle.w_exact.gradient(pts)
        Hw = oracle.w_exact.hessian(pts)
    else:
        gw = np.stack(np.gradient(solution.w, grid.hgrid, edge_order=2),
                      axis=-1)
        Hw = np.stack([np.stack(np.gradient(gw[..., i], grid.hgrid,
                                            edge_order=2), axis=-1)
                       for i in range(d)], axis=-2)

    inwin = np.ones(grid.shape, dtype=bool)
    for ax in range(d):
        inwin &= np.abs(pts[..., ax]) <= window + 1e-12
    idx = np.nonzero(inwin)

    x = pts[idx]
    y = np.empty_like(x)
    y[:, :d - 2] = x[:, :d - 2]
    y[:, -2] = gw[idx][:, -2]
    y[:, -1] = gw[idx][:, -1]
    Hs = Hw[idx]
    jac = Hs[:, -2, -2] * Hs[:, -1, -1] - Hs[:, -2, -1] ** 2
    labels = _classify(solution, idx, tol_fb)

    # clean the image: contact maps into {y_n=0, y_p<=0}, positivity into
    # {y_n>=0, y_p=0}; clamp the sub-tolerance excursions of sampled data
    contact = labels == "contact"
    positivity = labels == "positivity"
    y[contact, -2] = 0.0
    y[positivity, -1] = 0.0

    if d == 2:
        interp = LinearNDInterpolator(y[:, -2:], x[:, -2:])
        hmap = HodographMap(d, x, y, jac, labels, grid.hgrid,
                            inverse_2d=interp, gw=gw[idx], Hw=Hs)
    else:
        svals = np.unique(x[:, 0])
        interps = []
        for s in svals:
            m = np.abs(x[:, 0] - s) < 1e-12
            interps.append(LinearNDInterpolator(y[m][:, 1:], x[m][:, 1:]))
        hmap = HodographMap(d, x, y, jac, labels, grid.hgrid,
                            slice_vals=svals, slice_interps=interps,
                            gw=gw[idx], Hw=Hs)
    return hmap


def quadrant_report(hmap, collar_cells=1.0):
    """Check the quadrant mapping law on the forward samples.

    interior -> {y_n > 0, y_p < 0}; contact -> {y_n = 0, y_p <= 0};
    positivity -> {y_n >= 0, y_p = 0}; free boundary points -> P.  Nodes
    within ``collar_cells`` grid cells of the free boundary are excused.
    """
    y = hmap.y
    labels = hmap.labels
    tol = 1e-10
    # collar: x-distance to nearest sign change, approximated via image size
    r_img = np.hypot(y[:, -2], y[:, -1])
    near_fb = r_img <= 1.5 * np.sqrt(hmap.hgrid * collar_cells)
    bad = np.zeros(len(y), dtype=bool)
    m = labels == "interior"
    bad[m] = (y[m, -2] <= tol) | (y[m, -1] >= -tol)
    m = labels == "contact"
    bad[m] = (np.abs(y[m, -2]) > tol) | (y[m, -1] > tol)
    m = labels == "positivity"
    bad[m] = (y[m, -2] < -tol) | (np.abs(y[m, -1]) > tol)
    misclassified = int(np.sum(bad & ~near_fb))
    jac_interior = hmap.jac_det[(labels == "interior") & ~near_fb]
    return {
        "misclassified_beyond_collar": misclassified,
        "jacobian_max_interior": float(jac_interior.max())
        if jac_interior.size else float("nan"),
        "jacobian_negative_everywhere": bool(np.all(jac_interior < 0.0))
        if jac_interior.size else True,
        "samples": int(len(y)),
    }


# ---------------------------------------------------------------------------
# Legendre field


@dataclass
class LegendreField:
    """Scattered Legendre samples v(y) = w(x) - x_n y_n - x_{n+1} y_{n+1}."""

    dim: int
    y: np.ndarray
    v: np.ndarray
    x: np.ndarray
    w: np.ndarray
    hgrid: float
    labels: np.ndarray
    grad: np.ndarray = None        # dual-relation gradient of v at samples
    hess: np.ndarray = None        # dual-relation Hessian of v at samples

    def dual_residual(self):
        """Relative residual of the involution w = v + x_n y_n + x_p y_p."""
        recon = self.v + self.x[:, -2] * self.y[:, -2] \
            + self.x[:, -1] * self.y[:, -1]
        scale = max(float(np.abs(self.w).max()), 1e-300)
        return float(np.abs(recon - self.w).max()) / scale

    def boundary_residuals(self):
        on_yn0 = np.abs(self.y[:, -2]) <= 1e-12
        res_v = float(np.abs(self.v[on_yn0]).max()) if on_yn0.any() else 0.0
        return {"v_on_yn0": res_v}

    def fb_parametrization(self):
        """x_n = -d_n v(y'', 0, 0): the free boundary graph from the edge."""
        onP = (np.abs(self.y[:, -2]) <= 1e-12) & (np.abs(self.y[:, -1]) <= 1e-12)
        if self.dim == 2:
            raise ValueError("edge parametrization needs tangential variables")
        ys = self.y[onP][:, 0]
        xn = self.x[onP][:, 1]
        order = np.argsort(ys)
        return ys[order], xn[order]


def dual_jet(hmap):
    """Gradient and Hessian of v at the forward samples via duality.

    With M the normal 2x2 block of D^2 w at x(y):
      d_i v = d_i w (tangential),  d_n v = -x_n,  d_p v = -x_p,
      normal block of D^2 v = -M^{-1},
      d_{i,n/p} v = (M^{-1} [w_in, w_ip])_{n/p},
      d_{ij} v = w_ij - [w_in, w_ip] M^{-1} [w_jn, w_jp].
    Samples where M is numerically singular get NaN entries.
    """
    d = hmap.dim
    gw, Hw, x = hmap.gw, hmap.Hw, hmap.x
    N = len(x)
    grad = np.empty((N, d))
    grad[:, :d - 2] = gw[:, :d - 2]
    grad[:, -2] = -x[:, -2]
    grad[:, -1] = -x[:, -1]
    M = Hw[:, -2:, -2:]
    det = M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.empty_like(M)
        inv[:, 0, 0] = M[:, 1, 1] / det
        inv[:, 1, 1] = M[:, 0, 0] / det
        inv[:, 0, 1] = inv[:, 1, 0] = -M[:, 0, 1] / det
        hess = np.empty((N, d, d))
        hess[:, -2:, -2:] = -inv
        for i in range(d - 2):
            mi = np.einsum("mab,mb->ma", inv, Hw[:, i, -2:])
            hess[:, i, -2] = hess[:, -2, i] = mi[:, 0]
            hess[:, i, -1] = hess[:, -1, i] = mi[:, 1]
            for j in range(i, d - 2):
                corr = np.einsum("ma,mab,mb->m", Hw[:, i, -2:], inv,
                                 Hw[:, j, -2:])
                hess[:, i, j] = hess[:, j, i] = Hw[:, i, j] - corr
    bad = ~np.isfinite(det) | (np.abs(det) < 1e-12)
    hess[bad] = np.nan
    return grad, hess


def legendre_transform(hmap, solution):
    """Legendre function on the forward samples of a hodograph map."""
    grid = solution.grid
    # forward samples store x exactly on grid nodes: read w by rounding
    ix = np.rint((hmap.x + 1.0) / grid.hgrid).astype(int)
    ix[:, -1] = np.rint(hmap.x[:, -1] / grid.hgrid).astype(int)
    w_at = solution.w[tuple(ix.T)]
    v = w_at - hmap.x[:, -2] * hmap.y[:, -2] - hmap.x[:, -1] * hmap.y[:, -1]
    grad, hess = dual_jet(hmap)
    return LegendreField(grid.dim, hmap.y.copy(), v, hmap.x.copy(), w_at,
                         grid.hgrid, hmap.labels.copy(), grad, hess)


# ---------------------------------------------------------------------------
# moving least squares resampling of the image side


def _poly_powers(d, deg):
    out = []

    def rec(i, rem, cur):
        if i == d:
            out.append(tuple(cur))
            return
        for e in range(rem + 1):
            rec(i + 1, rem - e, cur + [e])

    rec(0, deg, [])
    out.sort(key=lambda b: (sum(b), b))
    return out


def _mls_plane(data_yx, data_v, targets, deg, k_neighbors):
    """2D moving least squares value interpolation, multiple components.

    ``data_v`` has shape (N, C); each component is fitted by a local weighted
    polynomial of degree ``deg`` and evaluated at the target.  Local
    coordinates are normalized by the kNN radius per target, so the normal
    equations stay well conditioned regardless of data density.  Returns
    (values (M, C), covered (M,)).
    """
    k = min(k_neighbors, len(data_yx))
    tree = cKDTree(data_yx)
    dist, idx = tree.query(targets, k=k)
    powers = _poly_powers(2, deg)
    nb = len(powers)
    rho = dist[:, -1] + 1e-300
    rel = (data_yx[idx] - targets[:, None, :]) / rho[:, None, None]
    w_loc = np.exp(-(2.0 * dist / rho[:, None]) ** 2)
    A = np.ones(rel.shape[:2] + (nb,))
    for c, beta in enumerate(powers):
        col = np.ones(rel.shape[:2])
        for i, e in enumerate(beta):
            if e:
                col = col * rel[..., i] ** e
        A[..., c] = col
    Aw = A * w_loc[..., None]
    ATA = np.einsum("mkb,mkc->mbc", Aw, A)
    ATb = np.einsum("mkb,mkc->mbc", Aw, data_v[idx])
    ATA += 1e-10 * np.eye(nb)
    coef = np.linalg.solve(ATA, ATb)
    vals = coef[:, 0, :]               # constant term = value at the target
    # coverage: a target inside the filled data region sees its nearest
    # sample at about that sample's own nearest-neighbor spacing; beyond
    # that we would be extrapolating, so the target is marked unusable
    dnn = tree.query(data_yx, k=2)[0][:, 1]
    covered = dist[:, 0] <= 2.5 * dnn[idx[:, 0]]
    return vals, covered


def _jet_components(field):
    """Stack v, grad v and the upper-triangular Hessian as (N, C) columns."""
    d = field.dim
    cols = [field.v]
    for i in range(d):
        cols.append(field.grad[:, i])
    pairs = [(i, j) for i in range(d) for j in range(i, d)]
    for i, j in pairs:
        cols.append(field.hess[:, i, j])
    return np.stack(cols, axis=-1), pairs


def resample_legendre(field, ny=33, deg=2, radius=None, k_neighbors=40,
                      tangential_window=0.5):
    """Resample the scattered Legendre jet onto a regular quarter grid.

    The value, gradient and Hessian of v are known at the scattered samples
    through the duality relations, so each jet component is interpolated
    independently (no numerical differentiation of scattered data).  The
    image cloud is stratified into exact tangential slices, hence a per-slice
    2D moving least squares fit; targets outside a slice's data coverage are
    NaN.  The normal section covers [0, radius] x [-radius, 0] with ``ny``
    nodes per side.  Returns a jet dict with additional keys "axes", "shape",
    "covered", "spacing", "radius".
    """
    y = field.y
    d = field.dim
    if radius is None:
        r = np.hypot(y[:, -2], y[:, -1])
        radius = 0.9 * float(np.quantile(r, 0.75))
        radius = max(0.2, round(radius / 0.05) * 0.05)
    yn_ax = np.linspace(0.0, radius, ny)
    yp_ax = np.linspace(-radius, 0.0, ny)
    mesh2 = np.stack(np.meshgrid(yn_ax, yp_ax, indexing="ij"), axis=-1)
    targets2 = mesh2.reshape(-1, 2)
    comps, pairs = _jet_components(field)
    usable = np.all(np.isfinite(comps), axis=1)
    nc = comps.shape[1]

    if d == 3:
        svals = np.unique(y[:, 0])
        svals = svals[np.abs(svals) <= tangential_window + 1e-12]
        axes = [svals, yn_ax, yp_ax]
        tshape = (len(svals), ny, ny)
        vals = np.empty((len(svals), ny * ny, nc))
        cover = np.empty((len(svals), ny * ny), dtype=bool)
        for k, s in enumerate(svals):
            m = usable & (np.abs(y[:, 0] - s) < 1e-12)
            vk, ck = _mls_plane(y[m][:, 1:], comps[m], targets2, deg,
                                k_neighbors)
            vals[k] = np.where(ck[:, None], vk, np.nan)
            cover[k] = ck
        vals = vals.reshape(tshape + (nc,))
        cover = cover.reshape(tshape)
    else:
        axes = [yn_ax, yp_ax]
        tshape = (ny, ny)
        vk, ck = _mls_plane(y[usable], comps[usable], targets2, deg,
                            k_neighbors)
        vals = np.where(ck[:, None], vk, np.nan).reshape(tshape + (nc,))
        cover = ck.reshape(tshape)

    val = vals[..., 0]
    grad = vals[..., 1:1 + d]
    hess = np.empty(tshape + (d, d))
    for c, (i, j) in enumerate(pairs):
        hess[..., i, j] = hess[..., j, i] = vals[..., 1 + d + c]

    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return {"y": mesh, "v": val, "grad": grad, "hess": hess,
            "axes": axes, "shape": tshape, "covered": cover,
            "spacing": float(yn_ax[1] - yn_ax[0]), "radius": radius}


def oracle_legendre_jet(oracle, hmap, targets, newton_iter=30, tol=1e-12):
    """Exact jet of the Legendre function at quarter-grid targets.

    The inverse point x(y) is found by Newton refinement of grad w(x) = y
    (seeded by the interpolated inverse); first derivatives follow from the
    duality relations and the Hessian from the inverse of the normal block
    of D^2 w.  Targets whose Newton iteration leaves the window are NaN.
    """
    targets = np.asarray(targets, dtype=float)
    tshape = targets.shape[:-1]
    ypts = targets.reshape(-1, targets.shape[-1])
    d = ypts.shape[1]
    x = hmap.inverse(ypts)
    x = np.atleast_2d(x)
    bad = ~np.all(np.isfinite(x), axis=1)
    # seed unreachable targets from the nearest valid neighbor
    if bad.any() and (~bad).any():
        tree = cKDTree(ypts[~bad])
        _, j = tree.query(ypts[bad])
        x[bad] = x[~bad][j]
    x[:, :d - 2] = ypts[:, :d - 2]

    for _ in range(newton_iter):
        gw = oracle.w_exact.gradient(x)
        res = gw[:, -2:] - ypts[:, -2:]
        if np.abs(res).max() <= tol:
            break
        Hw = oracle.w_exact.hessian(x)
        Hb = Hw[:, -2:, -2:]
        det = Hb[:, 0, 0] * Hb[:, 1, 1] - Hb[:, 0, 1] ** 2
        det = np.where(np.abs(det) < 1e-300, np.nan, det)
        dx_n = (Hb[:, 1, 1] * res[:, 0] - Hb[:, 0, 1] * res[:, 1]) / det
        dx_p = (-Hb[:, 0, 1] * res[:, 0] + Hb[:, 0, 0] * res[:, 1]) / det
        step = np.stack([dx_n, dx_p], axis=-1)
        lim = 0.25
        step = np.clip(step, -lim, lim)
        x[:, -2:] -= step

    gw = oracle.w_exact.gradient(x)
    conv = np.abs(gw[:, -2:] - ypts[:, -2:]).max(axis=1) <= 1e-9
    w_val = oracle.w_exact(x)
    Hw = oracle.w_exact.hessian(x)

    v = w_val - x[:, -2] * ypts[:, -2] - x[:, -1] * ypts[:, -1]
    grad = np.empty_like(ypts)
    grad[:, :d - 2] = gw[:, :d - 2]
    grad[:, -2] = -x[:, -2]
    grad[:, -1] = -x[:, -1]

    Hb = Hw[:, -2:, -2:]
    det = Hb[:, 0, 0] * Hb[:, 1, 1] - Hb[:, 0, 1] ** 2
    inv = np.empty_like(Hb)
    inv[:, 0, 0] = Hb[:, 1, 1] / det
    inv[:, 1, 1] = Hb[:, 0, 0] / det
    inv[:, 0, 1] = inv[:, 1, 0] = -Hb[:, 0, 1] / det
    hess = np.empty((len(ypts), d, d))
    hess[:, -2:, -2:] = -inv
    for i in range(d - 2):
        mi = np.einsum("mab,mb->ma", inv, Hw[:, i, -2:])
        hess[:, i, -2] = mi[:, 0]
        hess[:, i, -1] = mi[:, 1]
        hess[:, -2, i] = mi[:, 0]
        hess[:, -1, i] = mi[:, 1]
    for i in range(d - 2):
        for j in range(i, d - 2):
            corr = np.einsum("ma,mab,mb->m", Hw[:, i, -2:], inv,
                             Hw[:, j, -2:])
            hess[:, i, j] = hess[:, j, i] = Hw[:, i, j] - corr

    mark = ~conv
    for arr in (v,):
        arr[mark] = np.nan
    grad[mark] = np.nan
    hess[mark] = np.nan
    return {"y": targets,
            "v": v.reshape(tshape),
            "grad": grad.reshape(tshape + (targets.shape[-1],)),
            "hess": hess.reshape(tshape + (targets.shape[-1],) * 2),
            "x": x.reshape(tshape + (targets.shape[-1],)),
            "converged": conv.reshape(tshape)}


# ---------------------------------------------------------------------------
# residual and expansion measurements


def nonlinear_residual_F(jet, metric, mode="homogeneous", f=None,
                         collar_cells=4.0, spacing=None, collar_radius=None,
                         face_margin_cells=2.0):
    """Pointwise F (or F - g) on a resampled jet, with dyadic shell stats.

    Points within ``collar_cells`` grid cells of the edge P are excluded;
    ``collar_radius`` overrides the cell-based collar with an absolute one
    (useful when comparing resamples of differently refined sources).
    Targets within ``face_margin_cells`` cells of the quarter faces and on
    the outermost tangential slices are also excluded: interpolation there
    rests on one-sided neighborhoods and loses an order of accuracy.
    """
    y = jet["y"]
    r = np.hypot(y[..., -2], y[..., -1])
    h = spacing if spacing is not None else jet.get("spacing", None)
    if h is None:
        raise ValueError("need the resample spacing for the collar")
    Fv = F_pointwise(jet, metric, mode, f)
    r_coll = collar_radius if collar_radius is not None else collar_cells * h
    keep = (r >= r_coll) & np.isfinite(Fv)
    fm = face_margin_cells * h
    keep &= (y[..., -2] >= fm) & (y[..., -1] <= -fm)
    axes = jet.get("axes")
    if axes is not None and y.shape[-1] == 3 and len(axes[0]) > 2:
        keep &= (y[..., 0] > axes[0][0] + 1e-12) \
            & (y[..., 0] < axes[0][-1] - 1e-12)
    radii = dyadic_radii(max(r_coll, 1e-6),
                         max(float(r[keep].max()), 2 * collar_cells * h),
                         base=np.sqrt(2.0))
    stats = shell_stats(r[keep].ravel(), Fv[keep].ravel(), radii)
    return {"F": Fv, "mask": keep,
            "max_abs": float(np.abs(Fv[keep]).max()) if keep.any() else np.nan,
            "shells": stats}


def fit_cubic_profile(jet, y0, r_fit=0.35):
    """Least-squares cubic profile of v at an edge point y0.

    Fits v ~ c_n y_n + sum_i B_i (y_i - y0_i) y_n + (A0/6) y_n^3
            + (A1/2) y_n y_p^2  on the quarter-ball r <= r_fit around y0.
    Returns dict with coefficients and the fit residual.
    """
    y = jet["y"]
    v = jet["v"]
    d = y.shape[-1]
    y0 = np.asarray(y0, dtype=float)
    r = np.hypot(y[..., -2], y[..., -1])
    dt = np.zeros(r.shape)
    if d == 3:
        dt = np.abs(y[..., 0] - y0[0])
    sel = (r <= r_fit) & (dt <= r_fit ** 2 * 4) & np.isfinite(v)
    ys = y[sel]
    vs = v[sel]
    cols = [ys[:, -2]]
    names = ["dn"]
    for i in range(d - 2):
        cols.append((ys[:, i] - y0[i]) * ys[:, -2])
        names.append(f"B{i}")
    cols.append(ys[:, -2] ** 3 / 6.0)
    names.append("A0")
    cols.append(ys[:, -2] * ys[:, -1] ** 2 / 2.0)
    names.append("A1")
    A = np.stack(cols, axis=-1)
    coef, _, _, _ = np.linalg.lstsq(A, vs, rcond=None)
    resid = vs - A @ coef
    rel = float(np.linalg.norm(resid) / max(np.linalg.norm(vs), 1e-300))
    out = dict(zip(names, map(float, coef)))
    out["rel_residual"] = rel
    out["count"] = int(sel.sum())
    if rel > 0.5:
        raise ValueError(f"cubic profile fit residual {rel:.2f} too large")
    return out


def profile_polynomial(coeffs, y0, d):
    """The cubic v_{y0} of a fitted coefficient dict as a polynomial."""
    n = d - 1
    terms = []

    def mono(beta, c):
        return GrushinPolynomial.monomial(tuple(beta), n, float(c))

    bn = [0] * d
    bn[-2] = 1
    terms.append(mono(bn, coeffs["dn"]))
    for i in range(d - 2):
        bi = [0] * d
        bi[i] = 1
        bi[-2] = 1
        terms.append(mono(bi, coeffs[f"B{i}"]))
        terms.append(mono(bn, -coeffs[f"B{i}"] * y0[i]))
    b3 = [0] * d
    b3[-2] = 3
    terms.append(mono(b3, coeffs["A0"] / 6.0))
    bnp = [0] * d
    bnp[-2] = 1
    bnp[-1] = 2
    terms.append(mono(bnp, coeffs["A1"] / 2.0))
    out = GrushinPolynomial.zero(n)
    for t in terms:
        out = out + t
    return out


def expand_at_point(jet, metric, y0, collar_cells=4.0, spacing=None,
                    r_fit=0.35):
    """Expansion F = L_{y0} v + c_0 y_n + E_{y0} at an edge point y0.

    The cubic profile of v at y0 supplies (A0, A1, B_j); L_{y0} is the
    explicit constant-coefficient Baouendi-Grushin type operator built from
    them, P_{y0} = c_0 y_n is computed exactly from the Euler identity
    (1 - deg) G^{ij}(v_{y0}), and E is measured on the samples with its
    quasi-metric shell decay exponent.
    """
    y = jet["y"]
    d = y.shape[-1]
    n = d - 1
    y0 = np.asarray(y0, dtype=float)
    h = spacing if spacing is not None else jet.get("spacing")

    coeffs = fit_cubic_profile(jet, y0, r_fit)
    vy0 = profile_polynomial(coeffs, y0, d)
    x0 = np.zeros(d)
    x0[:d - 2] = y0[:d - 2]
    x0[-2] = -coeffs["dn"]
    x0[-1] = 0.0
    a0 = metric(x0[None, :])[0]
    A0c, A1c = coeffs["A0"], coeffs["A1"]
    B = [coeffs.get(f"B{i}", 0.0) for i in range(d - 2)]

    # explicit constant-coefficient leading operator at y0
    H = jet["hess"]
    yn = y[..., -2]
    yp = y[..., -1]
    Lv = a0[-2, -2] * H[..., -1, -1] + a0[-1, -1] * H[..., -2, -2]
    for i in range(d - 2):
        for j in range(d - 2):
            Lv = Lv + a0[i, j] * ((A1c ** 2) * yp ** 2
                                  - A0c * A1c * yn ** 2) * H[..., i, j]
            Lv = Lv + 2.0 * a0[i, j] * B[j] * A1c * (
                yn * H[..., i, -2] - yp * H[..., i, -1])
            Lv = Lv + a0[i, j] * B[i] * B[j] * H[..., -1, -1]
        Lv = Lv + 2.0 * a0[i, -2] * (A1c * yn * H[..., i, -2]
                                     - A1c * yp * H[..., i, -1]
                                     + B[i] * H[..., -1, -1])

    # P_{y0} = sum a~^{ij}(y0) (1 - deg) G^{ij}(v_{y0}) via Euler's identity
    Gs, _J = G_polynomials(vy0)
    P = GrushinPolynomial.zero(n)
    for (i, j), Gij in Gs.items():
        deg = _g_degree(i, j, n)
        fac = a0[i, j] * (1 - deg) * (1.0 if i == j else 2.0)
        if fac:
            P = P + fac * Gij
    # verify the linear-in-y_n structure
    bn = tuple([0] * (d - 2) + [1, 0])
    c0 = float(P.coeffs.get(bn, 0.0))
    P_clean = {b: c for b, c in P.coeffs.items()
               if b != bn and abs(float(c)) > 1e-9}
    structure_ok = not P_clean

    Fv = F_pointwise(jet, metric)
    Pvals = c0 * yn
    E = Fv - Lv - Pvals

    dG = quasi_metric(y, y0)
    keep = (np.hypot(yn, yp) >= collar_cells * h) & np.isfinite(E)
    radii = dyadic_radii(max(collar_cells * h, 1e-6),
                         float(np.nanquantile(dG[keep], 0.999)),
                         base=np.sqrt(2.0))
    stats = shell_stats(dG[keep].ravel(), E[keep].ravel(), radii)
    # the decay rate is an asymptotic statement as d_G -> 0: fit the slope on
    # the inner portion of the shell range, where the power law is clean
    inner = [s for s in stats if s["r"] <= 0.35 * radii[0]]
    if len(inner) < 3:
        inner = stats[-3:]
    maxima = [s["max"] for s in inner]
    if len(inner) >= 3 and max(maxima) > 1e-12:
        slope, _ = loglog_slope([s["r"] for s in inner], maxima)
    else:
        slope = None
    return {"coefficients": coeffs, "c0": c0, "P_structure_ok": structure_ok,
            "E": E, "mask": keep, "shells": stats, "decay_exponent": slope,
            "operator_at": {"A0": A0c, "A1": A1c, "B": B}}


# ---------------------------------------------------------------------------
# tangential flow diffeomorphisms


def _eta_cutoff(yn, yp):
    """Radial cutoff: 1 for r^2 <= 1/4, 0 for r^2 >= 1/2, quintic bridge."""
    s = np.asarray(yn, dtype=float) ** 2 + np.asarray(yp, dtype=float) ** 2
    u = (0.5 - s) / 0.25
    u = np.clip(u, 0.0, 1.0)
    return u ** 3 * (6 * u ** 2 - 15 * u + 10)


def flow_diffeomorphism(a, y, steps=64):
    """Tangential flow Phi_a(y) of the ODE phi' = a ((3/4)^2 - |phi|^2)_+^5 eta.

    Only the tangential components move; y_n and y_{n+1} are preserved
    exactly, Phi_0 = id, and points outside {|y''| < 3/4} x {r^2 < 1/2} are
    fixed.  Fixed-step RK4 on t in [0, 1].
    """
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    ys = np.atleast_2d(y).astype(float)
    d = ys.shape[1]
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape[-1] != d - 2:
        raise ValueError("flow vector must be tangential (length n-1)")
    eta = _eta_cutoff(ys[:, -2], ys[:, -1])

    def rate(phi):
        cap = (0.75 ** 2 - np.sum(phi ** 2, axis=-1))
        cap = np.maximum(cap, 0.0) ** 5
        return a[None, :] * (cap * eta)[:, None]

    phi = ys[:, :d - 2].copy()
    dt = 1.0 / steps
    for _ in range(steps):
        k1 = rate(phi)
        k2 = rate(phi + 0.5 * dt * k1)
        k3 = rate(phi + 0.5 * dt * k2)
        k4 = rate(phi + dt * k3)
        phi = phi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    out = ys.copy()
    out[:, :d - 2] = phi
    return out[0] if single else out
