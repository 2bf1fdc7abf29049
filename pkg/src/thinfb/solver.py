"""Finite difference solver for the thin obstacle (Signorini) problem.

The variational inequality

    min J(w) = sum_ij int a^{ij} d_i w d_j w + 2 int f w,   w >= 0 on {x_{n+1}=0},

is discretized on a uniform half-box grid [-1,1]^n x [0,1] by an
energy-consistent symmetric stencil (edge-midpoint quadrature for the
diagonal coefficients, node quadrature with centered differences for the
mixed ones).  The complementarity system is solved by projected SOR with
red-black sweeps, followed by an active-set conjugate gradient polish that
drives the inactive-set residual to the requested tolerance while
re-verifying the Karush-Kuhn-Tucker signs.

The module also carries the low-regularity splitting w = u + u~, where u~
absorbs the divergence-of-coefficients source through a strongly coercive
equation with a dist(x, free boundary)^{-2} zero-order term, solved in
non-divergence form.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .metrics import ScalarField


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class HalfGrid:
    """Uniform node grid on [-1,1]^n x [0,1] with spacing 2/(n_per_axis-1)."""

    dim: int
    n_per_axis: int

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.n_per_axis < 5 or self.n_per_axis % 2 == 0:
            raise ValueError("n_per_axis must be odd and >= 5")

    @property
    def hgrid(self):
        return 2.0 / (self.n_per_axis - 1)

    @property
    def shape(self):
        m = self.n_per_axis
        mz = (m - 1) // 2 + 1
        return (m,) * (self.dim - 1) + (mz,)

    @property
    def axes(self):
        m = self.n_per_axis
        mz = (m - 1) // 2 + 1
        tang = np.linspace(-1.0, 1.0, m)
        vert = np.linspace(0.0, 1.0, mz)
        return [tang] * (self.dim - 1) + [vert]

    def points(self):
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def masks(self):
        """Node classification: thin_plane, outer_boundary, interior."""
        shape = self.shape
        idx = np.indices(shape)
        lateral = np.zeros(shape, dtype=bool)
        for ax in range(self.dim - 1):
            lateral |= (idx[ax] == 0) | (idx[ax] == shape[ax] - 1)
        top = idx[-1] == shape[-1] - 1
        outer = lateral | top
        thin = (idx[-1] == 0) & ~outer
        interior = ~outer & ~thin
        return {"thin_plane": thin, "outer_boundary": outer,
                "interior": interior}


# ---------------------------------------------------------------------------
# assembly


@dataclass
class DiscreteOperator:
    """Energy form J(w) = w^T Q w + 2 (vol f)^T w and its metadata."""

    grid: HalfGrid
    Q: sp.csr_matrix
    vol: np.ndarray
    f_term: np.ndarray      # vol * f per node (zero when f is None)
    masks: dict

    @property
    def rhs(self):
        return -self.f_term

    def energy(self, w):
        wf = w.ravel()
        return float(wf @ (self.Q @ wf) + 2.0 * self.f_term.ravel() @ wf)


def _diff_matrix_1d(m, h, kind):
    """1D difference matrix: 'forward' ((m-1) x m) or 'centered' (m x m)."""
    if kind == "forward":
        return sp.diags([-np.ones(m - 1), np.ones(m - 1)], [0, 1],
                        shape=(m - 1, m)) / h
    e = np.ones(m)
    D = sp.diags([-e[1:], e[1:]], [-1, 1], shape=(m, m)).tolil()
    D[0, 0], D[0, 1] = -2.0, 2.0
    D[-1, -2], D[-1, -1] = -2.0, 2.0
    return (D / (2.0 * h)).tocsr()


def _axis_operator(grid, axis, kind):
    """Kronecker lift of the 1D difference along ``axis`` to the full grid."""
    shape = grid.shape
    h = grid.hgrid
    mats = []
    for ax, mm in enumerate(shape):
        if ax == axis:
            mats.append(_diff_matrix_1d(mm, h, kind))
        else:
            mats.append(sp.identity(mm))
    out = mats[0]
    for m_ in mats[1:]:
        out = sp.kron(out, m_)
    return out.tocsr()


def _node_volumes(grid):
    shape = grid.shape
    idx = np.indices(shape)
    vol = np.full(shape, grid.hgrid ** grid.dim)
    for ax in range(grid.dim):
        on_bd = (idx[ax] == 0) | (idx[ax] == shape[ax] - 1)
        vol[on_bd] *= 0.5
    return vol


def assemble(spec, grid):
    """Assemble the symmetric discrete energy for a validated problem spec.

    Diagonal terms use edge-midpoint coefficients (vol_edge a^{ii} |D_i w|^2
    with transverse boundary faces half-weighted); mixed terms use centered
    differences with node volumes.  Row sums of the resulting stiffness
    vanish (discrete divergence of constants).
    """
    if spec.dim != grid.dim:
        raise ValueError("spec/grid dimension mismatch")
    shape = grid.shape
    h = grid.hgrid
    d = grid.dim
    axes = grid.axes
    N = int(np.prod(shape))
    flat = np.arange(N).reshape(shape)
    idx = np.indices(shape)

    pts = grid.points()
    rows, cols, vals = [], [], []

    def push(r, c, v):
        rows.append(np.asarray(r).ravel())
        cols.append(np.asarray(c).ravel())
        vals.append(np.asarray(v, dtype=float).ravel())

    for i in range(d):
        # midpoints of edges along axis i
        sl_lo = tuple(slice(None, -1) if ax == i else slice(None)
                      for ax in range(d))
        sl_hi = tuple(slice(1, None) if ax == i else slice(None)
                      for ax in range(d))
        mid = 0.5 * (pts[sl_lo] + pts[sl_hi])
        aii = spec.metric(mid)[..., i, i]
        if np.any(aii <= 0):
            raise ValueError("ellipticity violation in assembly (a^{ii} <= 0)")
        # transverse boundary halving
        w_edge = np.full(aii.shape, h ** d)
        sub_idx = np.indices(aii.shape)
        for ax in range(d):
            if ax == i:
                continue
            on_bd = (sub_idx[ax] == 0) | (sub_idx[ax] == aii.shape[ax] - 1)
            w_edge[on_bd] *= 0.5
        t = w_edge * aii / h ** 2
        p = flat[sl_lo]
        q = flat[sl_hi]
        push(p, p, t)
        push(q, q, t)
        push(p, q, -t)
        push(q, p, -t)

    # mixed terms via centered differences at nodes
    vol = _node_volumes(grid)
    a_nodes = spec.metric(pts)
    Dmats = None
    for i in range(d):
        for j in range(i + 1, d):
            aij = a_nodes[..., i, j]
            if np.abs(aij).max() == 0.0:
                continue
            if Dmats is None:
                Dmats = [_axis_operator(grid, ax, "centered") for ax in range(d)]
            C = sp.diags((2.0 * vol * aij).ravel())
            S = Dmats[i].T @ C @ Dmats[j]
            S = 0.5 * (S + S.T) * 2.0
            S = S.tocoo()
            push(S.row, S.col, S.data)

    Q = sp.csr_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N))
    Q.sum_duplicates()

    if spec.f is not None:
        f_term = vol * spec.f(pts)
    else:
        f_term = np.zeros(shape)
    return DiscreteOperator(grid, Q, vol, f_term, grid.masks())


# ---------------------------------------------------------------------------
# Signorini solve


@dataclass
class SignoriniSolution:
    grid: HalfGrid
    w: np.ndarray
    flux: np.ndarray           # conormal a^{n+1,j} d_j w estimate on thin nodes (NaN elsewhere)
    iterations: int
    residual_norms: list
    energy_history: list = field(default_factory=list)
    spec: object = None
    converged: bool = True

    def thin_values(self):
        m = self.grid.masks()["thin_plane"]
        return self.w[m], self.flux[m]


def solve_signorini(op, spec, grid, tol_c=1e-8, tol_r=1e-8, max_iter=200000,
                    omega=1.5):
    """Projected SOR + active-set CG for the discrete Signorini problem.

    Red-black projected over-relaxation identifies the contact set while
    monotonically decreasing the energy; a conjugate gradient polish on the
    inactive set then reduces the equation residual to ``tol_r`` (in the
    h^{d-2}-scaled max norm).  The active set is re-verified against the
    Karush-Kuhn-Tucker sign conditions and the polish repeats until no node
    changes state.
    """
    shape = grid.shape
    h = grid.hgrid
    d = grid.dim
    Q = op.Q
    rhs = op.rhs.ravel()
    masks = op.masks
    thin = masks["thin_plane"].ravel()
    fixed = masks["outer_boundary"].ravel()
    free = ~fixed

    pts = grid.points()
    w = np.zeros(shape)
    if spec.boundary_data is not None:
        w[masks["outer_boundary"]] = spec.boundary_data(
            pts[masks["outer_boundary"]])
    w = w.ravel()
    w[thin] = np.maximum(w[thin], 0.0)

    diag = Q.diagonal()
    if np.any(diag[free] <= 0):
        raise ValueError("indefinite operator: nonpositive diagonal")
    parity = (np.indices(shape).sum(axis=0) % 2).ravel().astype(bool)
    colors = [free & parity, free & ~parity]

    scale_r = h ** (d - 2)       # PDE-scale interior residual
    scale_f = h ** (d - 1)       # flux scale on the thin plane
    res_hist, en_hist = [], []
    it = 0
    sweep_block = 25
    n_psor = 0
    stable_active = None

    def residual():
        return rhs - Q @ w

    # ---- phase 1: projected SOR sweeps -----------------------------------
    while it < max_iter:
        for _ in range(sweep_block):
            for cm in colors:
                r = rhs - Q @ w
                w[cm] += omega * r[cm] / diag[cm]
                clamp = cm & thin
                w[clamp] = np.maximum(w[clamp], 0.0)
            it += 1
        r = residual()
        active = thin & (w <= 0.0) & (r < 0.0)
        inactive = free & ~active
        res_inact = np.abs(r[inactive]).max() / scale_r if inactive.any() else 0.0
        res_hist.append(float(res_inact))
        en_hist.append(op.energy(w))
        if stable_active is not None and np.array_equal(active, stable_active):
            break
        stable_active = active.copy()
        if res_inact <= 100 * tol_r:
            break
        if len(en_hist) >= 2 and abs(en_hist[-1] - en_hist[-2]) \
                <= 1e-14 * (1 + abs(en_hist[-1])):
            break

    # ---- phase 2: active-set CG polish -----------------------------------
    converged = False
    for _round in range(60):
        r = residual()
        active = thin & (w <= tol_c) & (r <= 0.0)
        solve_mask = free & ~active
        w[thin & active] = 0.0
        sub = np.flatnonzero(solve_mask)
        Qss = Q[sub][:, sub]
        others = np.flatnonzero(~solve_mask)
        bsub = rhs[sub] - Q[sub][:, others] @ w[others]
        M = sp.diags(1.0 / Qss.diagonal())
        x0 = w[sub]
        sol, info = spla.cg(Qss, bsub, x0=x0, M=M, rtol=1e-14,
                            atol=0.25 * tol_r * scale_r, maxiter=20000)
        w[sub] = sol
        r = residual()
        # KKT verification
        went_neg = thin & solve_mask & (w < -tol_c)
        release = active & (r > tol_c * scale_f)
        en_hist.append(op.energy(w))
        res_hist.append(float(np.abs(r[solve_mask]).max() / scale_r))
        if not went_neg.any() and not release.any() \
                and res_hist[-1] <= tol_r:
            converged = True
            break
        w[went_neg] = 0.0
        it += 1

    r = residual()
    flux = np.full(w.shape, np.nan)
    flux[thin] = r[thin] / scale_f
    sol = SignoriniSolution(grid, w.reshape(shape), flux.reshape(shape),
                            it, res_hist, en_hist, spec, converged)
    return sol


def sample_oracle(oracle, grid):
    """Exact-solution samples packaged as a SignoriniSolution."""
    pts = grid.points()
    masks = grid.masks()
    w = oracle.w_exact(pts)
    g = oracle.w_exact.gradient(pts)
    a = oracle.metric(pts)
    conormal = np.einsum("...j,...j->...", a[..., -1, :], g)
    flux = np.full(grid.shape, np.nan)
    thin = masks["thin_plane"]
    flux[thin] = conormal[thin]
    # exact zero on the contact set, where the one-sided gradient is taken
    # from inside the contact region
    thin_pts = pts[thin]
    contact = oracle.contact_indicator(thin_pts)
    wt = w[thin]
    wt[contact & (np.abs(wt) < 1e-13)] = 0.0
    w[thin] = np.maximum(wt, 0.0)
    from .metrics import ProblemSpec
    spec = ProblemSpec(oracle.metric, None, None,
                       ScalarField(grid.dim, oracle.w_exact.value))
    return SignoriniSolution(grid, w, flux, 0, [0.0], [], spec, True)


def residual_report(solution, op=None, tol_c=1e-8, tol_r=1e-8):
    """Invariant magnitudes of a SignoriniSolution as a JSON-ready dict."""
    grid = solution.grid
    masks = grid.masks()
    thin = masks["thin_plane"]
    w_thin = solution.w[thin]
    flux_thin = solution.flux[thin]
    rep = {
        "w_min_thin": float(w_thin.min()),
        "flux_max_thin": float(np.nanmax(flux_thin)),
        "complementarity_max": float(np.nanmax(np.abs(w_thin * flux_thin))),
        "iterations": int(solution.iterations),
        "converged": bool(solution.converged),
    }
    if op is not None:
        r = op.rhs.ravel() - op.Q @ solution.w.ravel()
        interior = masks["interior"].ravel()
        rep["interior_residual"] = float(
            np.abs(r[interior]).max() / grid.hgrid ** (grid.dim - 2))
        rep["interior_residual_pass"] = rep["interior_residual"] <= tol_r
    rep["w_nonneg_pass"] = rep["w_min_thin"] >= -tol_c
    rep["flux_sign_pass"] = rep["flux_max_thin"] <= tol_c
    rep["complementarity_pass"] = rep["complementarity_max"] <= tol_c
    return rep


# ---------------------------------------------------------------------------
# splitting


@dataclass
class SplitPair:
    u_tilde: np.ndarray
    u: np.ndarray
    dist_to_fb: np.ndarray
    dist_to_contact: np.ndarray


def _distance_fields(grid, fbm):
    """Euclidean distances to the free boundary polyline and the contact set."""
    pts = grid.points()
    fb_pts = np.asarray(fbm.fb_points, dtype=float)
    if fb_pts.size == 0:
        raise ValueError("distance field degenerate: no free boundary points")
    tree = cKDTree(fb_pts)
    dist_fb, _ = tree.query(pts.reshape(-1, grid.dim))
    dist_fb = dist_fb.reshape(grid.shape)
    thin_pts = pts[grid.masks()["thin_plane"]]
    contact_mask = fbm.contact_mask_at(thin_pts)
    contact_pts = thin_pts[contact_mask]
    if contact_pts.size == 0:
        raise ValueError("distance field degenerate: empty contact set")
    tree_c = cKDTree(contact_pts)
    dist_c, _ = tree_c.query(pts.reshape(-1, grid.dim))
    dist_c = dist_c.reshape(grid.shape)
    floor = grid.hgrid / 2.0
    return np.maximum(dist_fb, floor), np.maximum(dist_c, floor)


def solve_split(spec, solution, fbm):
    """Low-regularity splitting w = u + u~ (non-divergence form).

    u~ solves  a^{ij} d_ij u~ - dist(x,FB)^{-2} u~ = f - (d_i a^{ij}) d_j w
    with u~ = 0 on contact nodes and the outer boundary, and an even
    reflection (zero conormal) condition on the thin-plane positivity nodes;
    u := w - u~ then carries the free boundary structure and satisfies
    a^{ij} d_ij u = -dist^{-2} u~ at the continuum level.
    """
    grid = solution.grid
    shape = grid.shape
    d = grid.dim
    h = grid.hgrid
    pts = grid.points()
    masks = grid.masks()
    thin = masks["thin_plane"]

    dist_fb, dist_c = _distance_fields(grid, fbm)

    # right side: f - b^j d_j w with differenced w (one-sided in the vertical)
    b = spec.metric.divergence(pts)
    gw = np.stack(np.gradient(solution.w, h, edge_order=2), axis=-1)
    rhs_field = -np.einsum("...j,...j->...", b, gw)
    if spec.f is not None:
        rhs_field = rhs_field + spec.f(pts)

    thin_pts = pts[thin]
    contact_thin = fbm.contact_mask_at(thin_pts)
    contact = np.zeros(shape, dtype=bool)
    contact[thin] = contact_thin
    dirichlet = masks["outer_boundary"] | contact
    freerows = ~dirichlet

    N = int(np.prod(shape))
    flat = np.arange(N).reshape(shape)
    idx = np.indices(shape)
    a_nodes = spec.metric(pts)

    rows, cols, vals = [], [], []

    def push(r, c, v):
        rows.append(np.asarray(r).ravel())
        cols.append(np.asarray(c).ravel())
        vals.append(np.asarray(v, dtype=float).ravel())

    diag = -(dist_fb ** -2)
    for ax in range(d):
        c = a_nodes[..., ax, ax] / h ** 2
        for s in (-1, +1):
            nb = idx.copy()
            nb[ax] = idx[ax] + s
            inside = (nb[ax] >= 0) & (nb[ax] < shape[ax])
            if ax == d - 1 and s == -1:
                # even reflection below the thin plane on positivity nodes
                ghost = nb[ax] < 0
                nb[ax] = np.where(ghost, 1, nb[ax])
                inside = inside | ghost
            m = freerows & inside
            if not np.any(m):
                continue
            nbr = flat[tuple(n_[m] for n_ in nb)]
            push(flat[m], nbr, c[m])
        diag = diag - 2.0 * c
    m = freerows
    push(flat[m], flat[m], diag[m])
    A = sp.csr_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N))
    # mixed second derivatives (zero for diagonal metrics)
    for i in range(d):
        for j in range(i + 1, d):
            if np.abs(a_nodes[..., i, j]).max() == 0.0:
                continue
            Di = _axis_operator(grid, i, "centered")
            Dj = _axis_operator(grid, j, "centered")
            mask_diag = sp.diags(freerows.ravel().astype(float))
            A = A + mask_diag @ sp.diags(
                2.0 * a_nodes[..., i, j].ravel()) @ (Di @ Dj)

    fixedm = dirichlet.ravel()
    freem = ~fixedm
    u_t = np.zeros(N)
    bvec = rhs_field.ravel().copy()
    Aff = A[freem][:, freem]
    bf = bvec[freem]
    u_t[freem] = spla.spsolve(Aff.tocsc(), bf)
    u_tilde = u_t.reshape(shape)
    u = solution.w - u_tilde
    return SplitPair(u_tilde, u, dist_fb, dist_c)
