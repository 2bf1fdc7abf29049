"""Intrinsic Hoelder seminorms and the generalized X/Y norms on the quarter region.

The functions here operate on "grid jets": dictionaries describing a scalar
field sampled on the quarter region [-1,1]^{n-1} x [0,1] x [-1,0] with keys

    y        (..., d) sample coordinates, d = n+1
    v        (...,)   field values
    grad     optional (..., d) analytic first derivatives
    hess     optional (..., d, d) analytic second derivatives
    axes     tuple of 1-D coordinate arrays (tangential..., y_n, y_{n+1})
    spacing  grid step along the two normal axes

Analytic derivatives are used when present; otherwise centred finite
differences on the grid are substituted.  All supremum-type quantities are
evaluated over finite pair samples and are therefore lower bounds of the true
suprema; reports carry a ``lower_bound`` flag to make this explicit.
"""

import numpy as np

from ._util import loglog_slope
from .grushin import GrushinPolynomial, quasi_metric
from .hodograph import polynomial_jet

DEFAULT_EPS_CAP = 0.25


# ---------------------------------------------------------------------------
# grid jets


def quarter_axes(n, n_per_axis):
    """Coordinate axes of the quarter-region grid (tangential, y_n, y_{n+1})."""
    yn = np.linspace(0.0, 1.0, n_per_axis)
    yp = np.linspace(-1.0, 0.0, n_per_axis)
    if n == 1:
        return (yn, yp)
    if n == 2:
        ytan = np.linspace(-1.0, 1.0, 2 * n_per_axis - 1)
        return (ytan, yn, yp)
    raise ValueError("n must be 1 or 2")


def sample_quarter_jet(source, n=2, n_per_axis=33):
    """Sample a field (polynomial or callable) as a grid jet.

    ``GrushinPolynomial`` sources get exact derivatives; callables receive the
    point array of shape (..., n+1) and are differentiated by finite
    differences on demand.
    """
    axes = quarter_axes(n, n_per_axis)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    spacing = float(axes[-1][1] - axes[-1][0])
    if isinstance(source, GrushinPolynomial):
        jet = polynomial_jet(source, pts)
    else:
        jet = {"y": pts, "v": np.asarray(source(pts), dtype=float)}
    jet["axes"] = axes
    jet["spacing"] = spacing
    return jet


def jet_derivatives(jet):
    """First and second derivative arrays of a grid jet (finite differences
    along ``axes`` when analytic ones are absent)."""
    if jet.get("grad") is not None and jet.get("hess") is not None:
        return jet["grad"], jet["hess"]
    axes = jet["axes"]
    v = jet["v"]
    d = len(axes)
    grads = np.gradient(v, *axes, edge_order=2)
    if d == 1:
        grads = [grads]
    grad = np.stack(grads, axis=-1)
    hess = np.empty(v.shape + (d, d))
    for a in range(d):
        rows = np.gradient(grad[..., a], *axes, edge_order=2)
        if d == 1:
            rows = [rows]
        for b in range(d):
            hess[..., a, b] = rows[b]
    hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
    return grad, hess


# ---------------------------------------------------------------------------
# pair sampling for supremum-type seminorms


def sample_pairs(jet, max_pairs=100000, seed=0, d_min=None, d_max=1.0):
    """Deterministic pair sample stratified over dyadic quasi-distance bands.

    Candidate pairs combine dyadic-stride neighbours along every grid axis
    (these realise the sup along normal and tangential segments) with a seeded
    batch of random pairs.  Pairs are binned by the quasi-metric into bands
    [2^{-j-1}, 2^{-j}) and each band is capped so the total stays below
    ``max_pairs``.
    """
    pts = np.asarray(jet["y"], dtype=float)
    shape = pts.shape[:-1]
    N = int(np.prod(shape))
    flat = pts.reshape(N, -1)
    idx = np.arange(N).reshape(shape)
    ii, jj = [], []
    for axis in range(len(shape)):
        s = 1
        while s < shape[axis]:
            sl_lo = [slice(None)] * len(shape)
            sl_hi = [slice(None)] * len(shape)
            sl_lo[axis] = slice(0, shape[axis] - s)
            sl_hi[axis] = slice(s, shape[axis])
            ii.append(idx[tuple(sl_lo)].ravel())
            jj.append(idx[tuple(sl_hi)].ravel())
            s *= 2
    rng = np.random.default_rng(seed)
    rand = rng.integers(0, N, size=(max_pairs, 2))
    rand = rand[rand[:, 0] != rand[:, 1]]
    ii.append(rand[:, 0])
    jj.append(rand[:, 1])
    i = np.concatenate(ii)
    j = np.concatenate(jj)
    d = quasi_metric(flat[i], flat[j])
    if d_min is None:
        d_min = float(jet.get("spacing") or 0.0) * 0.999
    keep = (d > max(d_min, 1e-14)) & (d <= d_max)
    i, j, d = i[keep], j[keep], d[keep]
    if i.size == 0:
        raise ValueError("empty pair set: no sampled pairs in distance range")
    band = np.floor(-np.log2(np.maximum(d / d_max, 1e-300))).astype(int)
    sel = []
    bands = []
    nb = int(band.max()) + 1
    cap = max(max_pairs // max(nb, 1), 1)
    for b in range(nb):
        where = np.nonzero(band == b)[0]
        if where.size == 0:
            continue
        if where.size > cap:
            where = rng.choice(where, size=cap, replace=False)
        sel.append(where)
        bands.append({"d_hi": d_max * 2.0 ** (-b), "d_lo": d_max * 2.0 ** (-b - 1),
                      "pairs": int(where.size)})
    sel = np.concatenate(sel)
    return {"i": i[sel], "j": j[sel], "d": d[sel],
            "band": band[sel], "bands": bands}


def pair_ratios(values, pairs, alpha):
    """Largest |f(p)-f(q)| / d_G(p,q)^alpha over a pair sample (NaN-safe)."""
    f = np.asarray(values, dtype=float).ravel()
    with np.errstate(invalid="ignore"):
        r = np.abs(f[pairs["i"]] - f[pairs["j"]]) / pairs["d"] ** alpha
    if not np.isfinite(r).any():
        return 0.0, []
    per_band = []
    for b, info in zip(sorted(set(pairs["band"].tolist())), pairs["bands"]):
        mask = pairs["band"] == b
        val = np.nanmax(r[mask]) if np.isfinite(r[mask]).any() else 0.0
        per_band.append({**info, "max_ratio": float(val)})
    return float(np.nanmax(r)), per_band


# ---------------------------------------------------------------------------
# modified vector fields (y_n d_1, y_{n+1} d_1, ..., d_n, d_{n+1})


def _field_table(d):
    """(coefficient kind, direction) table for the modified vector fields."""
    table = []
    for j in range(d - 2):
        table.append(("yn", j))
        table.append(("yp", j))
    table.append(("one", d - 2))
    table.append(("one", d - 1))
    return table


def _coeff(kind, pts):
    if kind == "yn":
        return pts[..., -2]
    if kind == "yp":
        return pts[..., -1]
    return np.ones(pts.shape[:-1])


def _dcoeff(kind, direction, d):
    if kind == "yn":
        return 1.0 if direction == d - 2 else 0.0
    if kind == "yp":
        return 1.0 if direction == d - 1 else 0.0
    return 0.0


def vector_field_derivatives(jet, k):
    """All order-k derivative fields along the modified Grushin frame.

    Returns a list of (label, values) pairs; k = 0 is the field itself.
    """
    v = jet["v"]
    if k == 0:
        return [("f", v)]
    pts = jet["y"]
    d = pts.shape[-1]
    grad, hess = jet_derivatives(jet)
    table = _field_table(d)
    if k == 1:
        return [("T%d" % (a + 1), _coeff(ka, pts) * grad[..., ma])
                for a, (ka, ma) in enumerate(table)]
    if k == 2:
        out = []
        for a, (ka, ma) in enumerate(table):
            ca = _coeff(ka, pts)
            for b, (kb, mb) in enumerate(table):
                cb = _coeff(kb, pts)
                field = ca * (_dcoeff(kb, ma, d) * grad[..., mb]
                              + cb * hess[..., ma, mb])
                out.append(("T%dT%d" % (a + 1, b + 1), field))
        return out
    raise ValueError("vector_field_order must be 0, 1 or 2")


def grushin_holder_seminorm(jet, alpha, k=0, max_pairs=100000, seed=0):
    """Intrinsic Hoelder seminorm sup |u(p)-u(q)| / d_G(p,q)^alpha.

    For k >= 1 the seminorm is taken over all order-k derivative fields along
    the modified Grushin frame.  Finite pair sample: the result is a lower
    bound of the true supremum.
    """
    pairs = sample_pairs(jet, max_pairs=max_pairs, seed=seed)
    fields = vector_field_derivatives(jet, k)
    best = 0.0
    best_bands = []
    per_field = {}
    for label, vals in fields:
        val, bands = pair_ratios(vals, pairs, alpha)
        per_field[label] = val
        if val >= best:
            best, best_bands = val, bands
    return {"seminorm": best, "alpha": alpha, "order": k,
            "per_field": per_field, "bands": best_bands,
            "pairs": int(pairs["i"].size), "lower_bound": True}


# ---------------------------------------------------------------------------
# one-sided stencils on the grid


def _dn_on_P(values, h):
    """One-sided d_n on {y_n = y_{n+1} = 0} (third-order stencil, exact on
    cubics so the cubic-profile decomposition has no stencil bias)."""
    line = values[..., :, -1]
    return (-11.0 * line[..., 0] + 18.0 * line[..., 1]
            - 9.0 * line[..., 2] + 2.0 * line[..., 3]) / (6.0 * h)


def _dnnn_on_P(values, h):
    line = values[..., :, -1]
    return (-2.5 * line[..., 0] + 9.0 * line[..., 1] - 12.0 * line[..., 2]
            + 7.0 * line[..., 3] - 1.5 * line[..., 4]) / h ** 3


def _dpp_at_p0(values, h):
    """One-sided d_{n+1}^2 at y_{n+1} = 0 (from the y_{n+1} < 0 side)."""
    return (2.0 * values[..., -1] - 5.0 * values[..., -2]
            + 4.0 * values[..., -3] - values[..., -4]) / h ** 2


def _dnpp_on_P(values, h):
    g = _dpp_at_p0(values, h)
    return (-11.0 * g[..., 0] + 18.0 * g[..., 1]
            - 9.0 * g[..., 2] + 2.0 * g[..., 3]) / (6.0 * h)


def _dp_at_p0(values, h):
    return (3.0 * values[..., -1] - 4.0 * values[..., -2]
            + values[..., -3]) / (2.0 * h)


def _anchor_indices(shape):
    """Even-index tangential anchors on P (single origin anchor in 2-D)."""
    if len(shape) == 2:
        return [()]
    return [(it,) for it in range(0, shape[0], 2)]


def _broadcast_P(arr, shape):
    """Broadcast a P-function (tangential shape) over the normal axes."""
    return np.asarray(arr)[..., None, None] * np.ones(shape[-2:])


# ---------------------------------------------------------------------------
# Y_{alpha,eps} norm


def y_norm(jet, alpha, eps=None, max_pairs=30000, seed=0, tol=1e-8):
    """Generalized Campanato-type Y norm with its first-order decomposition.

    Decomposes f = f0(y'') y_n + r^{1+2a-e} f1 with f0 = d_n f on P from a
    one-sided stencil, and evaluates the anchored weighted Hoelder seminorm
    sup_{anchor} [d_G(., anchor)^{-(1+2a-e)} (f - y_n d_n f(anchor))]_{C^{0,e}}
    over even-index P anchors.  Supremum quantities are sample lower bounds.
    """
    if eps is None:
        eps = min(alpha, DEFAULT_EPS_CAP)
    pts, v = jet["y"], jet["v"]
    h = float(jet["spacing"])
    if v.shape[-2] < 4 or v.shape[-1] < 3:
        raise ValueError("grid too coarse for one-sided stencils")
    kappa = 1.0 + 2.0 * alpha - eps
    yn = pts[..., -2]
    r = np.hypot(pts[..., -2], pts[..., -1])
    f0 = _dn_on_P(v, h)
    with np.errstate(divide="ignore", invalid="ignore"):
        f1 = np.where(r > 0, (v - _broadcast_P(f0, v.shape) * yn) / r ** kappa, 0.0)
    recon = _broadcast_P(f0, v.shape) * yn + np.where(r > 0, r ** kappa, 0.0) * f1
    recon_res = float(np.max(np.abs(v - recon)))
    if recon_res > tol:
        raise ValueError("reconstruction residual %.3e above tol" % recon_res)

    pairs = sample_pairs(jet, max_pairs=max_pairs, seed=seed)
    anchors = _anchor_indices(v.shape)
    per_anchor = []
    seminorm = 0.0
    for a in anchors:
        ybar = pts[a + (0, -1)]
        slope = f0[a] if a else float(f0)
        dG = quasi_metric(pts, ybar)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(dG > 0, (v - slope * yn) / dG ** kappa, 0.0)
        val, _ = pair_ratios(g, pairs, eps)
        per_anchor.append({"anchor": [float(c) for c in ybar], "value": val})
        seminorm = max(seminorm, val)

    # classical Hoelder seminorm of f0 along P (d_G restricted to P)
    P_jet = {"y": pts[..., 0, -1, :], "v": np.atleast_1d(np.asarray(f0, dtype=float)),
             "spacing": 0.0}
    if P_jet["v"].size > 1:
        f0_semi = grushin_holder_seminorm(P_jet, alpha, k=0,
                                          max_pairs=max_pairs, seed=seed)["seminorm"]
    else:
        f0_semi = 0.0

    near = (r > 0) & (r <= 3.0 * h)
    return {"space": "Y", "alpha": alpha, "eps": eps, "kappa": kappa,
            "seminorm": seminorm, "per_anchor": per_anchor,
            "f0": f0, "f1": f1, "f0_seminorm": f0_semi,
            "f1_sup": float(np.nanmax(np.abs(f1))),
            "f1_near_P": float(np.max(np.abs(f1[near]))) if near.any() else 0.0,
            "reconstruction_residual": recon_res,
            "f_on_P": float(np.max(np.abs(v[..., 0, -1]))),
            "dpf_on_P": float(np.max(np.abs(_dp_at_p0(v, h)[..., 0]))),
            "lower_bound": True}


# ---------------------------------------------------------------------------
# X_{alpha,eps} norm


def _profile_coefficients(v, axes, h):
    """Cubic-profile coefficients d_n v, d_in v, d_nnn v, d_npp v on P.

    All four are computed at every tangential node by one-sided stencils along
    the normal axes (second-order accurate, exact on cubics).
    """
    if v.shape[-2] < 5 or v.shape[-1] < 4:
        raise ValueError("profile fit underdetermined: need >= 5 normal nodes")
    dn = _dn_on_P(v, h)
    dnnn = _dnnn_on_P(v, h)
    dnpp = _dnpp_on_P(v, h)
    if v.ndim == 3:
        din = np.gradient(dn, axes[0], edge_order=2)
    else:
        din = None
    return {"dn": dn, "din": din, "dnnn": dnnn, "dnpp": dnpp}


def _profile_jet(coef, anchor, pts):
    """Values, gradient and Hessian of the anchored cubic profile P_anchor."""
    d = pts.shape[-1]
    yn = pts[..., -2]
    yp = pts[..., -1]
    dn = coef["dn"][anchor] if anchor else float(coef["dn"])
    dnnn = coef["dnnn"][anchor] if anchor else float(coef["dnnn"])
    dnpp = coef["dnpp"][anchor] if anchor else float(coef["dnpp"])
    val = dn * yn + dnnn * yn ** 3 / 6.0 + dnpp * yn * yp ** 2 / 2.0
    grad = np.zeros(pts.shape)
    hess = np.zeros(pts.shape + (d,))
    grad[..., -2] = dn + dnnn * yn ** 2 / 2.0 + dnpp * yp ** 2 / 2.0
    grad[..., -1] = dnpp * yn * yp
    hess[..., -2, -2] = dnnn * yn
    hess[..., -1, -1] = dnpp * yn
    hess[..., -2, -1] = hess[..., -1, -2] = dnpp * yp
    if d == 3:
        di = float(coef["din"][anchor])
        t0 = pts[anchor + (0, -1, 0)]
        val = val + di * (pts[..., 0] - t0) * yn
        grad[..., 0] += di * yn
        grad[..., -2] += di * (pts[..., 0] - t0)
        hess[..., 0, -2] += di
        hess[..., -2, 0] += di
    return val, grad, hess


def _grushin_second_fields(pts, grad, hess):
    """All compositions Y_a Y_b applied to a field with the given jet,
    where Y_i = r d_i (tangential), Y_n = d_n, Y_{n+1} = d_{n+1}."""
    d = pts.shape[-1]
    r = np.hypot(pts[..., -2], pts[..., -1])
    with np.errstate(divide="ignore", invalid="ignore"):
        ern = np.where(r > 0, pts[..., -2] / r, 0.0)
        erp = np.where(r > 0, pts[..., -1] / r, 0.0)
    coeff = [r] * (d - 2) + [np.ones(r.shape)] * 2
    dcoeff = [[np.zeros(r.shape)] * (d - 2) + [ern, erp]] * (d - 2) \
        + [[np.zeros(r.shape)] * d] * 2
    # dcoeff[b][m] = d_m coeff_b;  tangential coefficients equal r
    out = []
    for a in range(d):
        for b in range(d):
            field = coeff[a] * (dcoeff[b][a] * grad[..., b]
                                + coeff[b] * hess[..., a, b])
            out.append(("Y%dY%d" % (a + 1, b + 1), field))
    return out


def x_norm(jet, alpha, eps=None, max_pairs=30000, seed=0, tol=1e-8):
    """Generalized X norm: weighted L^inf plus anchored weighted Hoelder
    seminorms of the Grushin second derivatives, with the full first-order
    decomposition of the field and its derivatives.

    Profile coefficients on P come from one-sided stencils; all suprema are
    finite-sample lower bounds.  The far-field term vanishes since the sampled
    quarter region is contained in the unit-scale intrinsic ball.
    """
    if eps is None:
        eps = min(alpha, DEFAULT_EPS_CAP)
    pts, v = jet["y"], jet["v"]
    axes = jet["axes"]
    h = float(jet["spacing"])
    kappa = 1.0 + 2.0 * alpha - eps
    yn, yp = pts[..., -2], pts[..., -1]
    r = np.hypot(yn, yp)
    coef = _profile_coefficients(v, axes, h)
    grad, hess = jet_derivatives(jet)

    pairs = sample_pairs(jet, max_pairs=max_pairs, seed=seed)
    anchors = _anchor_indices(v.shape)
    per_anchor = []
    seminorm = 0.0
    for a in anchors:
        ybar = pts[a + (0, -1)]
        pval, pgrad, phess = _profile_jet(coef, a, pts)
        diff = v - pval
        dG = quasi_metric(pts, ybar)
        with np.errstate(divide="ignore", invalid="ignore"):
            linf = np.where(dG > 0, np.abs(diff) / dG ** (3.0 + 2.0 * alpha), 0.0)
        linf_term = float(np.nanmax(linf))
        holder_term = 0.0
        for _, field in _grushin_second_fields(pts, grad - pgrad, hess - phess):
            with np.errstate(divide="ignore", invalid="ignore"):
                g = np.where(dG > 0, field / dG ** kappa, 0.0)
            val, _ = pair_ratios(g, pairs, eps)
            holder_term += val
        total = linf_term + holder_term
        per_anchor.append({"anchor": [float(c) for c in ybar],
                           "linf": linf_term, "holder": holder_term,
                           "total": total})
        seminorm = max(seminorm, total)

    # decomposition table: remainder fields against the P-coefficient functions
    dnP = _broadcast_P(coef["dn"], v.shape)
    dnnnP = _broadcast_P(coef["dnnn"], v.shape)
    dnppP = _broadcast_P(coef["dnpp"], v.shape)
    d = pts.shape[-1]
    rem = {}

    def _weighted(num, power):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, num / r ** power, 0.0)

    rem["C1"] = _weighted(v - dnP * yn - dnnnP * yn ** 3 / 6.0
                          - dnppP * yn * yp ** 2 / 2.0, 2.0 + kappa)
    rem["Vn"] = _weighted(grad[..., -2] - dnP - dnnnP * yn ** 2 / 2.0
                          - dnppP * yp ** 2 / 2.0, 1.0 + kappa)
    rem["Vp"] = _weighted(grad[..., -1] - dnppP * yn * yp, 1.0 + kappa)
    rem["Cnn"] = _weighted(hess[..., -2, -2] - dnnnP * yn, kappa)
    rem["Cnp"] = _weighted(hess[..., -2, -1] - dnppP * yp, kappa)
    rem["Cpp"] = _weighted(hess[..., -1, -1] - dnppP * yn, kappa)
    if d == 3:
        dinP = _broadcast_P(coef["din"], v.shape)
        rem["V1"] = _weighted(grad[..., 0] - dinP * yn, kappa)
        rem["C11"] = hess[..., 0, 0] * np.where(r > 0, r ** (1.0 - (kappa - 1.0)), 0.0)
        rem["C1n"] = _weighted(hess[..., 0, -2] - dinP, kappa - 1.0)
        rem["C1p"] = _weighted(hess[..., 0, -1], kappa - 1.0)

    near = (r > 0) & (r <= 3.0 * h)
    yn0 = (np.abs(yn) < 1e-14) & (r > 0)
    rem_sup = {k: float(np.nanmax(np.abs(f))) for k, f in rem.items()}
    rem_near = {k: (float(np.nanmax(np.abs(f[near]))) if near.any() else 0.0)
                for k, f in rem.items()}
    on_yn0 = {k: (float(np.nanmax(np.abs(rem[k][yn0]))) if yn0.any() else 0.0)
              for k in ("C1", "Vp")}

    return {"space": "X", "alpha": alpha, "eps": eps, "kappa": kappa,
            "seminorm": seminorm, "per_anchor": per_anchor,
            "coefficients": coef, "remainders": rem,
            "remainder_sup": rem_sup, "remainder_near_P": rem_near,
            "remainder_on_yn0": on_yn0, "far_field_term": 0.0,
            "v_on_yn0": float(np.max(np.abs(v[..., 0, :]))),
            "dpv_on_p0": float(np.max(np.abs(grad[..., -1][..., -1]))),
            "dnnv_on_P": float(np.max(np.abs(hess[..., -2, -2][..., 0, -1]))),
            "lower_bound": True}


# ---------------------------------------------------------------------------
# empirical Hoelder exponent of graphs on a tangential line


def fit_holder_exponent(t, values):
    """Estimate the Hoelder exponent of g' from samples of g on a line.

    Uses the maximal centred second difference over dyadic separations: for
    g in C^{1,alpha} it scales like tau^{1+alpha}, so the fitted log-log slope
    minus one estimates alpha (clamped to [0, 1]; smooth graphs saturate the
    cap).  Returns (alpha_hat, confidence) with a two-sigma slope confidence.
    """
    t = np.asarray(t, dtype=float)
    g = np.asarray(values, dtype=float)
    order = np.argsort(t)
    t, g = t[order], g[order]
    if t.size < 16:
        raise ValueError("need at least 16 samples on the line")
    steps = np.diff(t)
    if not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-12):
        raise ValueError("samples must be uniformly spaced")
    hstep = float(steps[0])
    seps, amps = [], []
    s = 1
    while s <= t.size // 4:
        D = g[2 * s:] - 2.0 * g[s:-s] + g[:-2 * s]
        amp = float(np.max(np.abs(D)))
        if amp > 0:
            seps.append(s * hstep)
            amps.append(amp)
        s *= 2
    if len(seps) < 3:
        raise ValueError("dynamic range under 2 dyadic levels")
    lx, ly = np.log(seps), np.log(amps)
    coef, cov = np.polyfit(lx, ly, 1, cov=True)
    slope = float(coef[0])
    alpha_hat = min(max(slope - 1.0, 0.0), 1.0)
    confidence = 2.0 * float(np.sqrt(max(cov[0, 0], 0.0)))
    return alpha_hat, confidence


def report_scalars(report):
    """JSON-friendly copy of a norm report (arrays reduced to their sup)."""
    out = {}
    for k, val in report.items():
        if isinstance(val, np.ndarray):
            out[k] = float(np.nanmax(np.abs(val))) if val.size else 0.0
        elif isinstance(val, dict):
            out[k] = report_scalars(val)
        elif isinstance(val, (np.floating, np.integer)):
            out[k] = float(val)
        else:
            out[k] = val
    return out
