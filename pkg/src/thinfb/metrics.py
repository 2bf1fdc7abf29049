"""Coefficient tensors, problem data, and exact-solution oracles.

Conventions.  Points live in the closed half box [-1,1]^n x [0,1] of R^{n+1}
with n+1 in {2,3}; the thin plane is {x_{n+1}=0}.  Index order is
(x_1, ..., x_{n-1}, x_n, x_{n+1}) so the last coordinate is the ambient one
and x_n (index -2) is the in-plane direction transversal to the free
boundary.  Normalizations enforced throughout:

  (A1)  a^{ij}(0) = identity,
  (A2)  (1/2)|xi|^2 <= a^{ij} xi_i xi_j <= 2|xi|^2,
  (A3)  a^{i,n+1}(x',0) = 0 for i <= n.

The model solution is w_{3/2}(x) = Re(x_n + i x_{n+1})^{3/2} with unit
amplitude.  The pullback oracle transplants it by y = (x_1, h(x_2), x_3):
w~(y) = Re((h^{-1}(y_2) - y_1)/sqrt(2) + i y_3)^{3/2} solves the thin
obstacle problem for the exact divergence-form pushforward metric
A(y) = diag(1/h', h', 1/h') evaluated at h^{-1}(y_2), with free boundary
y_2 = h(y_1).
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

SQRT2 = float(np.sqrt(2.0))


# ---------------------------------------------------------------------------
# scalar fields


def fd_gradient(f, pts, h=1e-5):
    """Central-difference gradient of a callable at points of shape (..., d)."""
    pts = np.asarray(pts, dtype=float)
    d = pts.shape[-1]
    out = np.empty(pts.shape)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out[..., i] = (f(pts + e) - f(pts - e)) / (2 * h)
    return out


def fd_hessian(f, pts, h=1e-4):
    """Central-difference Hessian of a callable at points of shape (..., d)."""
    pts = np.asarray(pts, dtype=float)
    d = pts.shape[-1]
    out = np.empty(pts.shape[:-1] + (d, d))
    f0 = f(pts)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        out[..., i, i] = (f(pts + ei) - 2 * f0 + f(pts - ei)) / h ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h
            mixed = (f(pts + ei + ej) - f(pts + ei - ej)
                     - f(pts - ei + ej) + f(pts - ei - ej)) / (4 * h ** 2)
            out[..., i, j] = mixed
            out[..., j, i] = mixed
    return out


@dataclass(frozen=True)
class ScalarField:
    """A scalar function with optional analytic first/second derivatives.

    ``value`` maps point arrays of shape (..., dim) to shape (...).  When
    ``grad``/``hess`` are absent they fall back to central differences.
    """

    dim: int
    value: Callable
    grad: Callable | None = None
    hess: Callable | None = None

    def __call__(self, pts):
        return self.value(np.asarray(pts, dtype=float))

    def gradient(self, pts):
        if self.grad is not None:
            return self.grad(np.asarray(pts, dtype=float))
        return fd_gradient(self.value, pts)

    def hessian(self, pts):
        if self.hess is not None:
            return self.hess(np.asarray(pts, dtype=float))
        return fd_hessian(self.value, pts)

    @classmethod
    def zero(cls, dim):
        return cls(dim, lambda p: np.zeros(p.shape[:-1]),
                   lambda p: np.zeros(p.shape),
                   lambda p: np.zeros(p.shape + (p.shape[-1],)))

    @classmethod
    def constant(cls, dim, c):
        return cls(dim, lambda p: np.full(p.shape[:-1], float(c)),
                   lambda p: np.zeros(p.shape),
                   lambda p: np.zeros(p.shape + (p.shape[-1],)))


# ---------------------------------------------------------------------------
# metric fields


@dataclass(frozen=True)
class MetricField:
    """Symmetric coefficient tensor a^{ij}(x) with optional gradient.

    ``eval`` maps (..., dim) points to (..., dim, dim) matrices; ``grad_eval``
    maps points to (..., dim, dim, dim) arrays indexed [..., k, i, j] holding
    d_k a^{ij}.  ``regularity_class`` is a tag ("analytic", ("Ckgamma", k, g),
    or ("W1p", p)); ``ellipticity_bounds`` the pair (lambda, Lambda).
    """

    dim: int
    eval: Callable
    grad_eval: Callable | None = None
    regularity_class: object = "analytic"
    ellipticity_bounds: tuple = (0.5, 2.0)

    def __call__(self, pts):
        return self.eval(np.asarray(pts, dtype=float))

    def gradient(self, pts):
        pts = np.asarray(pts, dtype=float)
        if self.grad_eval is not None:
            return self.grad_eval(pts)
        d = self.dim
        out = np.empty(pts.shape[:-1] + (d, d, d))
        h = 1e-5
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            out[..., k, :, :] = (self.eval(pts + e) - self.eval(pts - e)) / (2 * h)
        return out

    def divergence(self, pts):
        """b^j(x) = sum_i d_i a^{ij}(x), shape (..., dim)."""
        g = self.gradient(pts)
        return np.einsum("...iij->...j", g)


def make_flat(dim):
    """Identity coefficient tensor in dimension ``dim`` (n+1)."""
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    eye = np.eye(dim)

    def ev(pts):
        return np.broadcast_to(eye, pts.shape[:-1] + (dim, dim)).copy()

    def gr(pts):
        return np.zeros(pts.shape[:-1] + (dim, dim, dim))

    return MetricField(dim, ev, gr, "analytic", (0.5, 2.0))


def validate_normalization(metric, tol=1e-10, n_samples=200, seed=0):
    """Check (A1)-(A3) and symmetry on a sampled point/direction set."""
    rng = np.random.default_rng(seed)
    d = metric.dim
    pts = rng.uniform(-1, 1, size=(n_samples, d))
    pts[:, -1] = np.abs(pts[:, -1])
    thin = pts.copy()
    thin[:, -1] = 0.0
    a_pts = metric(pts)
    a0 = metric(np.zeros((1, d)))[0]
    a_thin = metric(thin)
    dirs = rng.normal(size=(n_samples, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    sym = float(np.abs(a_pts - np.swapaxes(a_pts, -1, -2)).max())
    a1 = float(np.abs(a0 - np.eye(d)).max())
    quad = np.einsum("si,sij,sj->s", dirs, a_pts, dirs)
    lam, Lam = metric.ellipticity_bounds
    a2_low = float(max(0.0, (lam - quad.min())))
    a2_high = float(max(0.0, (quad.max() - Lam)))
    a3 = float(np.abs(a_thin[:, :-1, -1]).max())

    report = {
        "symmetry": {"violation": sym, "pass": sym <= tol},
        "A1_identity_at_origin": {"violation": a1, "pass": a1 <= max(tol, 1e-12)},
        "A2_ellipticity": {"violation_low": a2_low, "violation_high": a2_high,
                           "pass": a2_low <= tol and a2_high <= tol},
        "A3_thin_plane_offdiagonal": {"violation": a3, "pass": a3 <= tol},
    }
    report["pass"] = all(v["pass"] for k, v in report.items() if k != "pass")
    return report


# ---------------------------------------------------------------------------
# free boundary graph generators


@dataclass(frozen=True)
class GraphGenerator:
    """Monotone scalar generator h with h(0)=0, h'(0)=1 and a fast inverse.

    kinds:
      - "poly": h(t) = sum_k c_k t^k, coefficients listed from power 0.
      - "abs_power": h(t) = t + c|t|^power.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("poly", "abs_power"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if abs(self(0.0)) > 1e-14 or abs(self.deriv(0.0) - 1.0) > 1e-14:
            raise ValueError("generator must satisfy h(0)=0 and h'(0)=1")
        t = np.linspace(-1, 1, 4001)
        if np.any(self.deriv(t) <= 0):
            raise ValueError("generator must be strictly increasing on (-1,1)")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "poly":
            return np.polynomial.polynomial.polyval(t, self.params["coefficients"])
        c, p = self.params["c"], self.params["power"]
        return t + c * np.abs(t) ** p

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "poly":
            cs = np.polynomial.polynomial.polyder(self.params["coefficients"])
            return np.polynomial.polynomial.polyval(t, cs)
        c, p = self.params["c"], self.params["power"]
        # d/dt |t|^p = p sign(t) |t|^{p-1}; the generator adds it to slope 1
        return 1.0 + c * p * np.sign(t) * np.abs(t) ** (p - 1)

    def second_deriv(self, t, h=1e-6):
        t = np.asarray(t, dtype=float)
        if self.kind == "poly":
            cs = np.polynomial.polynomial.polyder(self.params["coefficients"], 2)
            return np.polynomial.polynomial.polyval(t, cs)
        return (self.deriv(t + h) - self.deriv(t - h)) / (2 * h)

    def inverse(self, y, tol=1e-12, max_iter=100):
        """Safeguarded Newton (bisection fallback) solve of h(t) = y."""
        y = np.asarray(y, dtype=float)
        lo = np.full(y.shape, -2.0)
        hi = np.full(y.shape, 2.0)
        t = np.clip(y, -2.0, 2.0)  # h(t) ~ t near 0
        for _ in range(max_iter):
            f = self(t) - y
            below = f < 0
            lo = np.where(below, t, lo)
            hi = np.where(below, hi, t)
            if np.all(np.abs(f) <= tol):
                break
            d = self.deriv(t)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(d > 0, f / np.where(d > 0, d, 1.0), 0.0)
            tn = t - step
            bad = (tn <= lo) | (tn >= hi) | ~np.isfinite(tn)
            t = np.where(bad, 0.5 * (lo + hi), tn)
        return t

    @classmethod
    def from_config(cls, cfg):
        kind = cfg.get("kind")
        if kind == "poly":
            return cls("poly", {"coefficients": list(map(float, cfg["coefficients"]))})
        if kind == "abs_power":
            return cls("abs_power", {"c": float(cfg["c"]),
                                     "power": float(cfg["power"])})
        raise ValueError(f"unknown generator kind {kind!r}")


def graph_identity():
    return GraphGenerator("poly", {"coefficients": [0.0, 1.0]})


# ---------------------------------------------------------------------------
# exact-solution oracles


@dataclass(frozen=True)
class ExactSolutionOracle:
    """Closed-form thin obstacle solution with its metric and free boundary.

    ``w_exact`` vanishes exactly on the contact set {x_n <= fb position,
    x_{n+1}=0}; ``fb_graph_exact`` maps x_1 to the free boundary position x_2
    (dim 3) or returns the point x_1 = 0 (dim 2, constant 0 map).
    """

    dim: int
    w_exact: ScalarField
    fb_graph_exact: Callable
    metric: MetricField
    h: GraphGenerator | None = None

    def contact_indicator(self, pts):
        """Boolean mask of thin-plane contact membership (pts on {x_{n+1}=0})."""
        pts = np.asarray(pts, dtype=float)
        if self.dim == 3:
            return pts[..., 1] <= self.fb_graph_exact(pts[..., 0])
        return pts[..., 0] <= 0.0


def _zeta_powers(zeta):
    """(zeta^{3/2}, (3/2)zeta^{1/2}, (3/4)zeta^{-1/2}) on the principal branch.

    The inverse square root is set to +inf at the branch point zeta = 0.
    """
    z12 = np.sqrt(zeta)
    ok = np.abs(z12) > 0
    zm12 = np.full(z12.shape, np.inf + 0j)
    zm12[ok] = 0.75 / z12[ok]
    return z12 ** 3, 1.5 * z12, zm12


def make_model_oracle(dim):
    """Flat-metric model w_{3/2}(x) = Re(x_n + i x_{n+1})^{3/2}, unit amplitude."""
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")

    def zeta_of(pts):
        return pts[..., -2] + 1j * pts[..., -1]

    def value(pts):
        z32, _, _ = _zeta_powers(zeta_of(pts))
        return z32.real

    def grad(pts):
        _, z12, _ = _zeta_powers(zeta_of(pts))
        out = np.zeros(pts.shape)
        out[..., -2] = z12.real
        out[..., -1] = -z12.imag  # Re(i * 3/2 zeta^{1/2}) = -Im(...)
        return out

    def hess(pts):
        _, _, zm12 = _zeta_powers(zeta_of(pts))
        d = pts.shape[-1]
        out = np.zeros(pts.shape[:-1] + (d, d))
        out[..., -2, -2] = zm12.real
        out[..., -2, -1] = out[..., -1, -2] = -zm12.imag
        out[..., -1, -1] = -zm12.real
        return out

    w = ScalarField(dim, value, grad, hess)
    if dim == 3:
        fb = lambda x1: np.zeros_like(np.asarray(x1, dtype=float))
    else:
        fb = lambda x1: np.zeros_like(np.asarray(x1, dtype=float))
    return ExactSolutionOracle(dim, w, fb, make_flat(dim), graph_identity())


def make_pullback_oracle(h, dim=3):
    """Transplanted model solution with curved free boundary y_2 = h(y_1).

    w~(y) = Re zeta^{3/2} with zeta = (h^{-1}(y_2) - y_1)/sqrt(2) + i y_3.
    The accompanying divergence-form metric is the exact pushforward of the
    identity under (x_1, x_2, x_3) -> (x_1, h(x_2), x_3):

        A(y) = diag(1/h'(s), h'(s), 1/h'(s)),   s = h^{-1}(y_2),

    for which d_i(A^{ij} d_j w~) = 0 away from the free boundary.
    """
    if dim != 3:
        raise ValueError("pullback oracle is a 3D construction")
    if isinstance(h, dict):
        h = GraphGenerator.from_config(h)
    if not isinstance(h, GraphGenerator):
        raise TypeError("h must be a GraphGenerator or config dict")

    def s_of(pts):
        return h.inverse(pts[..., 1])

    def zeta_of(pts, s=None):
        if s is None:
            s = s_of(pts)
        return (s - pts[..., 0]) / SQRT2 + 1j * pts[..., 2]

    def value(pts):
        z32, _, _ = _zeta_powers(zeta_of(pts))
        return z32.real

    def grad(pts):
        s = s_of(pts)
        _, z12, _ = _zeta_powers(zeta_of(pts, s))
        hp = h.deriv(s)
        out = np.empty(pts.shape)
        out[..., 0] = (z12 * (-1 / SQRT2)).real
        out[..., 1] = (z12 / (SQRT2 * hp)).real
        out[..., 2] = (z12 * 1j).real
        return out

    def hess(pts):
        s = s_of(pts)
        zeta = zeta_of(pts, s)
        _, z12, zm12 = _zeta_powers(zeta)
        hp = h.deriv(s)
        hpp = h.second_deriv(s)
        zk = np.stack([np.full(s.shape, -1 / SQRT2, dtype=complex),
                       1.0 / (SQRT2 * hp) + 0j,
                       np.full(s.shape, 1j)], axis=-1)
        out = np.empty(pts.shape[:-1] + (3, 3))
        with np.errstate(invalid="ignore"):
            for i in range(3):
                for j in range(i, 3):
                    second = 0.0
                    if i == 1 and j == 1:
                        second = -hpp / (SQRT2 * hp ** 3)
                    val = (zm12 * zk[..., i] * zk[..., j]
                           + z12 * second).real
                    out[..., i, j] = out[..., j, i] = val
        return out

    w = ScalarField(3, value, grad, hess)

    def metric_eval(pts):
        s = h.inverse(np.asarray(pts, dtype=float)[..., 1])
        hp = h.deriv(s)
        out = np.zeros(pts.shape[:-1] + (3, 3))
        out[..., 0, 0] = 1.0 / hp
        out[..., 1, 1] = hp
        out[..., 2, 2] = 1.0 / hp
        return out

    def metric_grad(pts):
        # only d/dy_2 is nonzero; d s/d y_2 = 1/h'(s)
        pts = np.asarray(pts, dtype=float)
        s = h.inverse(pts[..., 1])
        hp = h.deriv(s)
        hpp = h.second_deriv(s)
        out = np.zeros(pts.shape[:-1] + (3, 3, 3))
        out[..., 1, 0, 0] = -hpp / hp ** 3
        out[..., 1, 1, 1] = hpp / hp
        out[..., 1, 2, 2] = -hpp / hp ** 3
        return out

    reg = "analytic" if h.kind == "poly" else ("Ckgamma", 1,
                                               min(1.0, h.params["power"] - 1.0))
    metric = MetricField(3, metric_eval, metric_grad, reg, (0.5, 2.0))
    fb = lambda x1: h(x1)
    return ExactSolutionOracle(3, w, fb, metric, h)


def divergence_residual(oracle, pts, h=1e-4):
    """Centered finite-difference residual of d_i(a^{ij} d_j w) at points."""
    pts = np.asarray(pts, dtype=float)
    d = oracle.dim

    def flux(p):
        a = oracle.metric(p)
        g = oracle.w_exact.gradient(p)
        return np.einsum("...ij,...j->...i", a, g)

    out = np.zeros(pts.shape[:-1])
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out += (flux(pts + e)[..., i] - flux(pts - e)[..., i]) / (2 * h)
    return out


# ---------------------------------------------------------------------------
# problem specifications


@dataclass(frozen=True)
class ProblemSpec:
    """Data for one thin obstacle problem on the half box."""

    metric: MetricField
    f: ScalarField | None = None
    obstacle: ScalarField | None = None
    boundary_data: ScalarField | None = None

    @property
    def dim(self):
        return self.metric.dim


def reduce_obstacle(spec):
    """Zero out the obstacle, folding it into the inhomogeneity.

    Returns a spec with obstacle None and f replaced by
    f - d_i a^{ij} d_j phi = f - (b^j d_j phi + a^{ij} d_ij phi); the solution
    convention becomes w := w~ - phi.  Idempotent when the obstacle is absent.
    """
    phi = spec.obstacle
    if phi is None:
        return spec
    metric = spec.metric
    f_old = spec.f

    def f_new(pts):
        pts = np.asarray(pts, dtype=float)
        a = metric(pts)
        b = metric.divergence(pts)
        g = phi.gradient(pts)
        H = phi.hessian(pts)
        div_term = (np.einsum("...j,...j->...", b, g)
                    + np.einsum("...ij,...ij->...", a, H))
        base = f_old(pts) if f_old is not None else 0.0
        return base - div_term

    bdata = spec.boundary_data
    if bdata is not None:
        bd = ScalarField(spec.dim, lambda p: bdata(p) - phi(p))
    else:
        bd = None
    return ProblemSpec(metric, ScalarField(spec.dim, f_new), None, bd)
