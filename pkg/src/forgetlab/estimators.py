"""Divergence and expectation estimators plus the brute-force oracle suite.

Two independent routes are kept available for every quantity:

- projected quadrature: expectations of ratio-functions of shared-covariance
  mixtures reduce to Gauss-Hermite integrals over the (at most rank-3) span
  of whitened mean differences;
- Monte Carlo with counter-based sampling and per-batch jackknife errors.

Divergence integrands are evaluated from log ratios in extended precision:
separations up to 12 produce density ratios far beyond float64 range while
the weighted sums stay finite.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_triangular

from . import backend
from .errors import InputError, MethodError, NumericError
from .mixture import ProjectionBasis

__all__ = [
    "EstimatorConfig",
    "FGenerator",
    "make_generator",
    "GENERATOR_KINDS",
    "ReducedSpace",
    "union_space",
    "divergence",
    "expectation",
    "finite_difference_oracle",
    "jackknife_mean",
    "jackknife_ratio",
]

GENERATOR_KINDS = ("kl", "js", "triangular", "hellinger", "pearson", "neyman", "alpha")

_SQRT_2PI = np.sqrt(2.0 * np.pi)
# Curvature-and-normalization checks run on this grid at construction.
_CHECK_GRID = np.exp(np.linspace(np.log(1e-6), np.log(1e6), 121))


def _const(value):
    def fn(t):
        return value * np.ones_like(np.asarray(t))

    return fn


@dataclass(frozen=True)
class EstimatorConfig:
    """Method selector and budgets for all estimators.

    ``quad_order`` is the per-dimension Gauss-Hermite order for reduced
    ranks 1 and 2; rank-3 integrals shrink the per-dimension order to keep
    the tensor grid near ``quad_order**2`` nodes.
    """

    method: str = "projected_quadrature"
    quad_order: int = 200
    mc_samples: int = 100_000
    seed: int = 0
    rel_tol: float = 1e-8

    def __post_init__(self):
        if self.method not in ("projected_quadrature", "monte_carlo"):
            raise InputError(f"unknown method {self.method!r}")
        if self.quad_order < 16:
            raise InputError("quad_order must be >= 16")
        if self.mc_samples < 1000:
            raise InputError("mc_samples must be >= 1000")
        if not 0.0 < self.rel_tol <= 1e-2:
            raise InputError("rel_tol must lie in (0, 1e-2]")

    def with_(self, **kw):
        d = {
            "method": self.method,
            "quad_order": self.quad_order,
            "mc_samples": self.mc_samples,
            "seed": self.seed,
            "rel_tol": self.rel_tol,
        }
        d.update(kw)
        return EstimatorConfig(**d)


# ---------------------------------------------------------------------------
# f-divergence generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FGenerator:
    """Convex generator normalized to ``f(1) = f'(1) = 0``.

    ``kappa(t) = t f''(t)`` is the curvature weight entering old-mean
    gradient decompositions; ``kappa_sup`` is its supremum over t > 0
    (``inf`` when unbounded).
    """

    kind: str
    f: callable
    f1: callable
    f2: callable
    kappa: callable
    kappa_sup: float

    def __post_init__(self):
        if abs(float(self.f(1.0))) > 1e-12 or abs(float(self.f1(1.0))) > 1e-12:
            raise InputError(f"generator {self.kind!r} is not affinely normalized")
        grid = _CHECK_GRID
        f2 = np.asarray(self.f2(grid), dtype=np.float64)
        if np.any(f2 < -1e-12):
            raise InputError(f"generator {self.kind!r} is not convex on the check grid")
        if np.max(np.abs(np.asarray(self.kappa(grid)) - grid * f2)) > 1e-12 * max(
            1.0, float(np.max(np.abs(grid * f2)))
        ):
            raise InputError(f"generator {self.kind!r}: kappa != t f''(t)")

    def adjoint(self):
        """Generator of the reversed divergence, ``f*(t) = t f(1/t)``."""
        f, f1, f2 = self.f, self.f1, self.f2
        return FGenerator(
            kind=f"{self.kind}-adjoint",
            f=lambda t: t * f(1.0 / t),
            f1=lambda t: f(1.0 / t) - f1(1.0 / t) / t,
            f2=lambda t: f2(1.0 / t) / t**3,
            kappa=lambda t: f2(1.0 / t) / t**2,
            kappa_sup=np.inf,
        )


def make_generator(kind, alpha=None):
    """Build one of the supported generators.

    ``alpha`` is required for ``kind='alpha'`` and must lie in [-2, 3]
    excluding {0, 1}; those removable limits are covered by the ``kl`` and
    ``neyman`` kinds.
    """
    if kind == "kl":
        return FGenerator(
            "kl",
            f=lambda t: t * np.log(t) - (t - 1.0),
            f1=np.log,
            f2=lambda t: 1.0 / t,
            kappa=_const(1.0),
            kappa_sup=1.0,
        )
    if kind == "js":
        return FGenerator(
            "js",
            f=lambda t: t * np.log(t) - (t + 1.0) * np.log(0.5 * (t + 1.0)),
            f1=lambda t: np.log(2.0 * t / (t + 1.0)),
            f2=lambda t: 1.0 / (t * (t + 1.0)),
            kappa=lambda t: 1.0 / (t + 1.0),
            kappa_sup=1.0,
        )
    if kind == "triangular":
        return FGenerator(
            "triangular",
            f=lambda t: (t - 1.0) ** 2 / (t + 1.0),
            f1=lambda t: (t - 1.0) * (t + 3.0) / (t + 1.0) ** 2,
            f2=lambda t: 8.0 / (t + 1.0) ** 3,
            kappa=lambda t: 8.0 * t / (t + 1.0) ** 3,
            kappa_sup=32.0 / 27.0,
        )
    if kind == "hellinger":
        return FGenerator(
            "hellinger",
            f=lambda t: (np.sqrt(t) - 1.0) ** 2,
            f1=lambda t: 1.0 - 1.0 / np.sqrt(t),
            f2=lambda t: 0.5 * t ** (-1.5),
            kappa=lambda t: 0.5 / np.sqrt(t),
            kappa_sup=np.inf,
        )
    if kind == "pearson":
        return FGenerator(
            "pearson",
            f=lambda t: (t - 1.0) ** 2,
            f1=lambda t: 2.0 * (t - 1.0),
            f2=_const(2.0),
            kappa=lambda t: 2.0 * t,
            kappa_sup=np.inf,
        )
    if kind == "neyman":
        return FGenerator(
            "neyman",
            f=lambda t: (1.0 - t) ** 2 / t,
            f1=lambda t: 1.0 - 1.0 / t**2,
            f2=lambda t: 2.0 / t**3,
            kappa=lambda t: 2.0 / t**2,
            kappa_sup=np.inf,
        )
    if kind == "alpha":
        if alpha is None:
            raise InputError("alpha generator requires the exponent")
        a = float(alpha)
        if not -2.0 <= a <= 3.0 or a in (0.0, 1.0):
            raise InputError(
                "alpha exponent must lie in [-2, 3] excluding {0, 1}; "
                "use the kl/neyman kinds for the removable limits"
            )
        c = 1.0 / (a * (a - 1.0))
        return FGenerator(
            f"alpha({a})",
            f=lambda t: (t**a - a * (t - 1.0) - 1.0) * c,
            f1=lambda t: (t ** (a - 1.0) - 1.0) / (a - 1.0),
            f2=lambda t: t ** (a - 2.0),
            kappa=lambda t: t ** (a - 1.0),
            kappa_sup=np.inf,
        )
    raise InputError(f"unknown generator kind {kind!r}")


# ---------------------------------------------------------------------------
# Projected quadrature
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _gh_1d(order):
    x, w = np.polynomial.hermite_e.hermegauss(order)
    return x, np.log(w) - 0.5 * np.log(2.0 * np.pi)


@lru_cache(maxsize=64)
def _gh_grid(rank, order):
    """Tensor nodes and log weights for a standard normal in ``rank`` dims."""
    x, logw = _gh_1d(order)
    if rank == 1:
        return x[:, None].copy(), logw.copy()
    axes = np.meshgrid(*([x] * rank), indexing="ij")
    nodes = np.stack([a.ravel() for a in axes], axis=1)
    lw = np.zeros(nodes.shape[0])
    waxes = np.meshgrid(*([logw] * rank), indexing="ij")
    for a in waxes:
        lw += a.ravel()
    return nodes, lw


def _per_dim_order(rank, order):
    if rank <= 2:
        return order
    if rank == 3:
        return max(16, int(round(order ** (2.0 / 3.0))))
    raise MethodError(f"projected quadrature supports rank <= 3, got {rank}")


class ReducedSpace:
    """Shared-covariance mean set reduced to the span of its differences.

    Registers ``M`` full-space means; exposes Gauss-Hermite node grids per
    component and scalar/score expectations of ratio-functions, all in the
    reduced coordinates where every component is a standard normal.
    """

    def __init__(self, cov, means):
        self.cov = cov
        self.means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        self.pbasis = ProjectionBasis.from_means(cov, self.means)
        self.rank = self.pbasis.rank
        self.b = self.pbasis.reduce(cov, self.means)  # (M, rank)

    def index_of(self, mean):
        mean = np.asarray(mean, dtype=np.float64)
        for i, m in enumerate(self.means):
            if np.array_equal(m, mean):
                return i
        raise InputError("mean is not registered in this reduced space")

    def nodes_for(self, j, order):
        """Quadrature nodes centered at component ``j`` plus log weights."""
        grid, logw = _gh_grid(self.rank, _per_dim_order(self.rank, order))
        return grid + self.b[j], logw

    def logmix(self, u, idx, weights):
        """Reduced log density of the sub-mixture ``idx`` with ``weights``.

        Only meaningful inside ratios: the component constant shared with
        the orthogonal complement cancels there.
        """
        with np.errstate(divide="ignore"):
            lw = np.log(np.asarray(weights, dtype=np.float64))
        return backend.mixture_logpdf(u, self.b[list(idx)], lw)

    def resp(self, u, idx, weights):
        with np.errstate(divide="ignore"):
            lw = np.log(np.asarray(weights, dtype=np.float64))
        return backend.responsibilities(u, self.b[list(idx)], lw)

    def expect_scalar(self, j, order, fn):
        """``E_{N(mean_j, Sigma)}[fn]`` for ratio-functions ``fn(u) -> (n,)``."""
        u, logw = self.nodes_for(j, order)
        vals = np.asarray(fn(u))
        return float(np.sum(np.exp(logw) * vals))

    def expect_score(self, j, m_index, order, fn):
        """``E_{N(mean_j, Sigma)}[Sigma^{-1}(Y - mean_m) fn]`` as a (d,) vector.

        Valid because ``mean_m`` is registered: the orthogonal component of
        the score is mean-zero and independent of the ratio coordinates.
        """
        u, logw = self.nodes_for(j, order)
        vals = np.exp(logw) * np.asarray(fn(u))
        first = vals @ (u - self.b[m_index])  # (rank,)
        full = self.pbasis.basis.T @ first
        return solve_triangular(self.cov.chol.T, full, lower=False)

    def expect_score_moments(self, j, m_index, order, fn):
        """Zeroth, first and second reduced moments of ``(u - b_m)`` under fn.

        Returns ``(c0, first, second)`` with shapes ``(), (rank,), (rank, rank)``;
        used to assemble full-dimensional Fisher blocks analytically.
        """
        u, logw = self.nodes_for(j, order)
        w = np.exp(logw) * np.asarray(fn(u))
        du = u - self.b[m_index]
        c0 = float(np.sum(w))
        first = w @ du
        second = (du * w[:, None]).T @ du
        return c0, first, second

    def lift(self, u):
        """Full-space points whose reduced coordinates are ``u``."""
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        return self.pbasis.center + (u @ self.pbasis.basis) @ self.cov.chol.T

    def lift_offset(self, u, perp_scale):
        """Lift with an offset along the orthogonal complement (probing)."""
        if self.rank >= self.cov.dim:
            return self.lift(u)
        _, _, vt = np.linalg.svd(self.pbasis.basis, full_matrices=True)
        perp = vt[self.rank]
        pts = self.lift(u)
        return pts + perp_scale * (self.cov.chol @ perp)


def union_space(cov, mean_groups):
    """Reduced space over the union of several mean stacks.

    Returns the space plus one index array per group, in registration order.
    """
    stacks = [np.atleast_2d(np.asarray(g, dtype=np.float64)) for g in mean_groups]
    all_means = np.vstack(stacks)
    space = ReducedSpace(cov, all_means)
    idx, start = [], 0
    for g in stacks:
        idx.append(np.arange(start, start + g.shape[0]))
        start += g.shape[0]
    return space, idx


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def jackknife_mean(values, n_batches=32):
    """Mean and per-batch jackknife standard error along axis 0."""
    values = np.asarray(values, dtype=np.float64)
    mean = values.mean(axis=0)
    batches = np.array_split(values, n_batches, axis=0)
    total = values.sum(axis=0)
    n = values.shape[0]
    loo = np.stack(
        [(total - b.sum(axis=0)) / (n - b.shape[0]) for b in batches], axis=0
    )
    center = loo.mean(axis=0)
    b = len(batches)
    se = np.sqrt((b - 1) / b * np.sum((loo - center) ** 2, axis=0))
    return mean, se


def jackknife_ratio(numer, denom, n_batches=32):
    """Self-normalized ratio ``sum(numer)/sum(denom)`` with jackknife error."""
    numer = np.asarray(numer, dtype=np.float64)
    denom = np.asarray(denom, dtype=np.float64)
    est = numer.sum() / denom.sum()
    nb = np.array_split(numer, n_batches)
    db = np.array_split(denom, n_batches)
    loo = np.array(
        [(numer.sum() - a.sum()) / (denom.sum() - c.sum()) for a, c in zip(nb, db)]
    )
    b = len(nb)
    se = np.sqrt((b - 1) / b * np.sum((loo - loo.mean()) ** 2))
    return float(est), float(se)


def _longdouble_ratio_values(gen, log_ratio):
    t = np.exp(log_ratio.astype(np.longdouble))
    vals = gen.f(t)
    return np.asarray(vals, dtype=np.longdouble)


def divergence(q, p, gen, cfg):
    """``D_gen(q || p) = E_{Y ~ p}[ f(q(Y)/p(Y)) ]``.

    Nonnegative for normalized generators; exactly zero (to rounding) when
    the two mixtures coincide; equals ``KL(q || p)`` for the ``kl`` kind.
    The log-ratio is formed by log-sum-exp and the generator is applied in
    extended precision, so large separations stay finite.
    """
    if q.dim != p.dim:
        raise InputError("q and p must share the same dimension")
    if cfg.method == "monte_carlo":
        points, _ = p.sample(cfg.mc_samples, cfg.seed)
        s = q.log_density(points) - p.log_density(points)
        vals = _longdouble_ratio_values(gen, s)
        if not np.all(np.isfinite(vals)):
            raise NumericError("non-finite divergence integrand")
        return float(vals.mean())

    space, (qi, pi) = union_space(q.cov, [q.means, p.means])
    total = np.longdouble(0.0)
    for j_local, j in enumerate(pi):
        u, logw = space.nodes_for(j, cfg.quad_order)
        s = space.logmix(u, qi, q.weights) - space.logmix(u, pi, p.weights)
        vals = _longdouble_ratio_values(gen, s)
        if not np.all(np.isfinite(vals)):
            raise NumericError("non-finite divergence integrand")
        total += np.longdouble(p.weights[j_local]) * np.sum(
            np.exp(logw.astype(np.longdouble)) * vals
        )
    return float(total)


def kl_divergence(q, p, cfg):
    return divergence(q, p, make_generator("kl"), cfg)


def expectation(density, h, cfg):
    """``E_density[h]`` with the configured method.

    Monte Carlo returns ``(value, std_err)`` with a 32-batch jackknife
    error; projected quadrature returns ``(value, None)`` and requires
    ``h`` to factor through the projection basis of the density's means.
    The factorization claim is probed by re-evaluating ``h`` at points
    displaced along the orthogonal complement.
    """
    if cfg.method == "monte_carlo":
        points, _ = density.sample(cfg.mc_samples, cfg.seed)
        vals = np.asarray(h(points), dtype=np.float64)
        if not np.all(np.isfinite(vals)):
            raise NumericError("non-finite Monte Carlo integrand")
        mean, se = jackknife_mean(vals)
        if vals.ndim == 1:
            return float(mean), float(se)
        return mean, se

    space = ReducedSpace(density.cov, density.means)
    if space.rank < density.dim:
        probe = space.b[np.arange(min(2, len(space.b)))] + 0.37
        base = np.asarray(h(space.lift(probe)), dtype=np.float64)
        moved = np.asarray(h(space.lift_offset(probe, 1.7)), dtype=np.float64)
        scale = max(1.0, float(np.max(np.abs(base))))
        if np.max(np.abs(base - moved)) > 1e-8 * scale:
            raise MethodError(
                "h does not factor through the projection basis; "
                "use the monte_carlo method"
            )
    parts = []
    for j in range(density.n_components):
        u, logw = space.nodes_for(j, cfg.quad_order)
        vals = np.asarray(h(space.lift(u)), dtype=np.float64)
        if not np.all(np.isfinite(vals)):
            raise NumericError("non-finite quadrature integrand")
        w = np.exp(logw)
        parts.append(w @ vals if vals.ndim > 1 else float(np.sum(w * vals)))
    value = sum(density.weights[j] * parts[j] for j in range(density.n_components))
    if np.ndim(value) == 0:
        return float(value), None
    return value, None


def finite_difference_oracle(f, theta, h=1e-4):
    """Central-difference gradient and Hessian of a scalar function.

    The step must lie in [1e-6, 1e-3] (unit-scaled parameters); the Hessian
    is returned in symmetrized form.  Non-finite evaluations raise.
    """
    if not 1e-6 <= h <= 1e-3:
        raise InputError("finite-difference step must lie in [1e-6, 1e-3]")
    theta = np.asarray(theta, dtype=np.float64)
    n = theta.size

    def ev(point):
        v = float(f(point))
        if not np.isfinite(v):
            raise NumericError("non-finite function value in finite differences")
        return v

    grad = np.zeros(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        grad[i] = (ev(theta + e) - ev(theta - e)) / (2.0 * h)

    hess = np.zeros((n, n))
    f0 = ev(theta)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        hess[i, i] = (ev(theta + ei) - 2.0 * f0 + ev(theta - ei)) / h**2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h
            hess[i, j] = (
                ev(theta + ei + ej)
                - ev(theta + ei - ej)
                - ev(theta - ei + ej)
                + ev(theta - ei - ej)
            ) / (4.0 * h**2)
            hess[j, i] = hess[i, j]
    return grad, 0.5 * (hess + hess.T)
