"""Beyond two Gaussian modes: f-divergences, K mixtures, log-concave shifts.

Three independent generalizations of the core mass-forgetting and drift
results: smooth f-divergence objectives (curvature-weighted drift), finite
K-component mixtures (subset training collapses the complement; matched
modes are pairwise-overlap protected), and one-dimensional strongly
log-concave location families (overlap and drift bounds with the
convexity constants replacing the Gaussian exponent).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import ConsistencyError, InputError, NumericError, ScopeError
from .estimators import EstimatorConfig, union_space
from .mixture import MixtureDensity, bhattacharyya_equal_cov
from .objectives import TargetSpec

__all__ = [
    "fdiv_sft_scan",
    "fdiv_oldmean_grad",
    "fdiv_loss_in_old_mean",
    "kmode_analysis",
    "KmodeReport",
    "LocationFamily1D",
    "logconcave_checks",
    "LogConcaveReport",
    "ibp_residual",
]


# ---------------------------------------------------------------------------
# f-divergence objectives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FdivScan:
    betas: np.ndarray
    losses: np.ndarray
    monotone: bool


def fdiv_sft_scan(gen, spec, cfg=EstimatorConfig(), n_grid=101):
    """New-data-only f-divergence loss over a mixture-weight grid.

    ``D_f(p_new || q_beta)`` is evaluated through the adjoint generator,
    which turns the scan into a single expectation under ``p_new`` of
    ``f*((1-beta) + beta X)`` with ``X`` the old/new likelihood ratio.
    ``monotone`` asserts strictly increasing losses across the grid.
    """
    adj = gen.adjoint()
    space, (oi, ni) = union_space(spec.cov, [[spec.mu_old], [spec.mu_new]])
    u, logw = space.nodes_for(int(ni[0]), cfg.quad_order)
    s = (space.logmix(u, oi, [1.0]) - space.logmix(u, ni, [1.0])).astype(np.longdouble)
    w = np.exp(logw.astype(np.longdouble))
    x_ratio = np.exp(s)

    betas = np.linspace(0.0, 1.0, n_grid)
    losses = np.empty(n_grid)
    for i, beta in enumerate(betas):
        z = (1.0 - beta) + beta * x_ratio
        vals = adj.f(z)
        if not np.all(np.isfinite(vals)):
            raise NumericError("non-finite scan integrand")
        losses[i] = float(np.sum(w * vals))
    monotone = bool(np.all(np.diff(losses) > 0.0))
    return FdivScan(betas=betas, losses=losses, monotone=monotone)


@dataclass(frozen=True)
class FdivDrift:
    grad: np.ndarray
    a_f: float
    b_f: float
    bound: float
    eps_q: float
    eps_p: float


def fdiv_oldmean_grad(gen, beta, m_new, spec, cfg=EstimatorConfig()):
    """Curvature-weighted old-mean gradient of ``D_f(q || p_alpha)``.

    Exact decomposition at the correct old mean:

    ``grad = beta Sigma^{-1} (A_f (m_new - mu_old) - B_f (mu_new - mu_old))``

    with ``A_f = E_old[kappa_f(w)(1 - r_old)]`` and
    ``B_f = E_old[kappa_f(w)(1 - s_old)]``.  The overlap bound is finite
    only for bounded-curvature generators; the decomposition itself holds
    for all of them.
    """
    beta = float(beta)
    if not 0.0 < beta < 1.0:
        raise InputError("beta must lie in (0, 1)")
    m_new = np.atleast_1d(np.asarray(m_new, dtype=np.float64))
    space, (qi, pi) = union_space(
        spec.cov, [[spec.mu_old, m_new], [spec.mu_old, spec.mu_new]]
    )
    qw = [beta, 1.0 - beta]
    pw = [spec.alpha, 1.0 - spec.alpha]
    j_old = int(qi[0])
    order = cfg.quad_order

    def kappa_vals(u):
        s = (space.logmix(u, qi, qw) - space.logmix(u, pi, pw)).astype(np.longdouble)
        return np.asarray(gen.kappa(np.exp(s)), dtype=np.float64)

    a_f = space.expect_scalar(
        j_old, order, lambda u: kappa_vals(u) * space.resp(u, qi, qw)[:, 1]
    )
    b_f = space.expect_scalar(
        j_old, order, lambda u: kappa_vals(u) * space.resp(u, pi, pw)[:, 1]
    )
    eps_q = space.expect_scalar(j_old, order, lambda u: space.resp(u, qi, qw)[:, 1])
    eps_p = space.expect_scalar(j_old, order, lambda u: space.resp(u, pi, pw)[:, 1])
    grad = beta * spec.cov.solve(
        a_f * (m_new - spec.mu_old) - b_f * (spec.mu_new - spec.mu_old)
    )
    if np.isfinite(gen.kappa_sup):
        bound = (
            beta
            * gen.kappa_sup
            * spec.cov.inv_operator_norm
            * (
                eps_q * np.linalg.norm(m_new - spec.mu_old)
                + eps_p * np.linalg.norm(spec.mu_new - spec.mu_old)
            )
        )
    else:
        bound = np.inf
    return FdivDrift(
        grad=grad,
        a_f=float(a_f),
        b_f=float(b_f),
        bound=float(bound),
        eps_q=float(eps_q),
        eps_p=float(eps_p),
    )


def fdiv_loss_in_old_mean(gen, beta, m_old, m_new, spec, cfg=EstimatorConfig()):
    """``D_f(q_{beta, m_old, m_new} || p_alpha)`` (finite-difference oracle)."""
    from .estimators import divergence

    q = MixtureDensity([beta, 1.0 - beta], [m_old, m_new], spec.cov)
    return divergence(q, spec.target, gen, cfg)


# ---------------------------------------------------------------------------
# Finite K-mode mixtures
# ---------------------------------------------------------------------------


def _project_simplex(v):
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, len(v) + 1) > (css - 1.0))[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


@dataclass(frozen=True)
class KmodeReport:
    beta_star: np.ndarray
    beta_star_closed_form: np.ndarray
    old_grad: np.ndarray
    pairwise_eps: np.ndarray
    pairwise_bounds: np.ndarray
    bounds_ok: bool
    mode_index: int


def kmode_analysis(
    target, trained_subset, mode_index, cfg=EstimatorConfig(), model_weights=None
):
    """Subset-trained weight optimum and matched-mode drift for K modes.

    Part one: with all component means fixed at the truth, minimize the
    forward KL from the renormalized subset mixture over the weight
    simplex by projected gradient descent with Armijo backtracking, and
    check the result against the closed form (subset weights renormalized,
    zeros elsewhere).  Part two: the gradient on mode ``mode_index`` of the
    reverse KL toward the full target, at matched means and model weights
    ``model_weights`` (default uniform); its cross-mode coefficients are
    pairwise misassignment expectations, each bounded by a weight-ratio
    times the pairwise overlap.

    Expectations use rank-(K-1) projected quadrature for K <= 4 and Monte
    Carlo (``cfg.mc_samples``) beyond; the closed-form agreement check is
    1e-6 under quadrature and loosened to a sampling-scale tolerance under
    Monte Carlo.
    """
    k_total = target.n_components
    if k_total > 8:
        raise InputError("K must be <= 8")
    trained = sorted(set(int(i) for i in trained_subset))
    if not trained or any(i < 0 or i >= k_total for i in trained):
        raise InputError("trained_subset must be a non-empty set of mode indices")
    if not 0 <= mode_index < k_total:
        raise InputError("mode_index out of range")
    alpha = target.weights
    means = target.means
    cov = target.cov
    sub_w = alpha[trained] / alpha[trained].sum()

    use_quadrature = k_total <= 4
    if use_quadrature:
        space, (mi,) = union_space(cov, [means])
        node_cache = [space.nodes_for(int(mi[j]), cfg.quad_order) for j in range(k_total)]
        comp_logs = [
            np.stack(
                [space.logmix(u, [int(mi[k])], [1.0]) for k in range(k_total)], axis=1
            )
            for u, _ in node_cache
        ]
    else:
        sub = MixtureDensity(sub_w, means[trained], cov)
        points, _ = sub.sample(cfg.mc_samples, cfg.seed)
        z = cov.whiten(points)
        wh_means = cov.whiten(means)
        from . import backend

        samp_logs = np.stack(
            [
                backend.mixture_logpdf(z, wh_means[k : k + 1], np.zeros(1))
                for k in range(k_total)
            ],
            axis=1,
        )

    def kl_and_grad(beta):
        with np.errstate(divide="ignore"):
            lb = np.log(beta)
        if use_quadrature:
            kl = 0.0
            grad = np.zeros(k_total)
            for j_local, j in enumerate(trained):
                logs = comp_logs[j]
                _, logw = node_cache[j]
                lq = _logsumexp_rows(logs + lb[None, :])
                w = np.exp(logw)
                kl += sub_w[j_local] * float(w @ (logs[:, j] - lq))
                grad -= sub_w[j_local] * (w @ np.exp(logs - lq[:, None]))
            return kl, grad
        lq = _logsumexp_rows(samp_logs + lb[None, :])
        lp = _logsumexp_rows(
            samp_logs[:, trained] + np.log(sub_w)[None, :]
        )
        kl = float(np.mean(lp - lq))
        grad = -np.mean(np.exp(samp_logs - lq[:, None]), axis=0)
        return kl, grad

    beta = np.full(k_total, 1.0 / k_total)
    value, grad = kl_and_grad(beta)
    step = 1.0
    for _ in range(2000):
        residual = beta - _project_simplex(beta - grad)
        if np.linalg.norm(residual) <= 1e-10:
            break
        while step > 1e-14:
            cand = _project_simplex(beta - step * grad)
            cand_value, cand_grad = kl_and_grad(cand)
            if cand_value <= value - 1e-4 * step * float(grad @ (beta - cand)) + 1e-15:
                beta, value, grad = cand, cand_value, cand_grad
                step = min(step * 2.0, 1.0)
                break
            step *= 0.5
        else:
            break
    else:
        raise NumericError("projected gradient descent did not converge")

    closed = np.zeros(k_total)
    closed[trained] = sub_w
    tol = 1e-6 if use_quadrature else 50.0 / np.sqrt(cfg.mc_samples)
    if np.max(np.abs(beta - closed)) > tol:
        raise ConsistencyError(
            "optimized subset weights disagree with the closed form "
            f"(max gap {np.max(np.abs(beta - closed)):.3e})"
        )

    # Matched-mode drift: model with matched means but its own weights,
    # against the full target.
    if model_weights is None:
        model_weights = np.full(k_total, 1.0 / k_total)
    model = MixtureDensity(model_weights, means, cov)
    eps_q = _pairwise_responsibilities(means, cov, model.weights, cfg, use_quadrature)
    eps_p = _pairwise_responsibilities(means, cov, alpha, cfg, use_quadrature)
    k = mode_index
    grad_k = np.zeros(cov.dim)
    for j in range(k_total):
        if j == k:
            continue
        grad_k += (eps_q[k, j] - eps_p[k, j]) * (means[j] - means[k])
    grad_k = model.weights[k] * cov.solve(grad_k)

    bounds = np.zeros((k_total, k_total))
    for i in range(k_total):
        for j in range(k_total):
            if i == j:
                continue
            bc = bhattacharyya_equal_cov(cov, means[i], means[j])
            bounds[i, j] = 0.5 * np.sqrt(model.weights[j] / model.weights[i]) * bc
    off = ~np.eye(k_total, dtype=bool)
    slack = 1e-9 if use_quadrature else 5.0 / np.sqrt(cfg.mc_samples)
    bounds_ok = bool(np.all(eps_q[off] <= bounds[off] + slack))
    return KmodeReport(
        beta_star=beta,
        beta_star_closed_form=closed,
        old_grad=grad_k,
        pairwise_eps=eps_q,
        pairwise_bounds=bounds,
        bounds_ok=bounds_ok,
        mode_index=k,
    )


def _logsumexp_rows(logs):
    top = np.max(logs, axis=1)
    return top + np.log(np.sum(np.exp(logs - top[:, None]), axis=1))


def _pairwise_responsibilities(means, cov, weights, cfg, use_quadrature):
    """eps[i, j] = expectation under component i of responsibility j."""
    k_total = len(weights)
    eps = np.zeros((k_total, k_total))
    if use_quadrature:
        space, (mi,) = union_space(cov, [means])
        for i in range(k_total):
            u, logw = space.nodes_for(int(mi[i]), cfg.quad_order)
            resp = space.resp(u, mi, weights)
            eps[i] = np.exp(logw) @ resp
        return eps
    mixture = MixtureDensity(weights, means, cov)
    for i in range(k_total):
        comp = MixtureDensity([1.0], [means[i]], cov)
        points, _ = comp.sample(cfg.mc_samples, cfg.seed + i + 1)
        eps[i] = np.mean(mixture.responsibilities(points), axis=0)
    return eps


# ---------------------------------------------------------------------------
# 1D strongly log-concave location families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LocationFamily1D:
    """Location family ``rho(x - mu)`` with ``rho = exp(-V)/Z`` on the line.

    ``v``, ``v1`` and ``v2`` are the potential and its derivatives;
    ``m_strong`` and ``l_smooth`` bracket ``V''`` (checked on a wide grid
    at construction); ``log_z`` normalizes the density to unit mass.
    """

    v: callable
    v1: callable
    v2: callable
    m_strong: float
    l_smooth: float
    log_z: float = field(default=None)

    def __post_init__(self):
        if not 0.0 < self.m_strong <= self.l_smooth:
            raise InputError("need 0 < m_strong <= l_smooth")
        grid = np.linspace(-12.0 / np.sqrt(self.m_strong), 12.0 / np.sqrt(self.m_strong), 4001)
        curv = np.asarray(self.v2(grid), dtype=np.float64)
        if np.any(curv < self.m_strong - 1e-9) or np.any(curv > self.l_smooth + 1e-9):
            raise InputError("V'' leaves [m_strong, l_smooth] on the check grid")
        if self.log_z is None:
            z, _ = integrate.quad(
                lambda x: np.exp(-self.v(x)), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13
            )
            object.__setattr__(self, "log_z", float(np.log(z)))
        mass = self.mass()
        if abs(mass - 1.0) > 1e-8:
            raise InputError(f"density mass {mass} deviates from 1 beyond 1e-8")

    @classmethod
    def log_cosh(cls, a):
        """``V(x) = x^2/2 + a log cosh x``: strong convexity 1, smoothness 1+a."""
        if not 0.0 < a <= 1.0:
            raise InputError("a must lie in (0, 1]")

        def v(x):
            x = np.asarray(x, dtype=np.float64)
            # log cosh x = |x| + log1p(exp(-2|x|)) - log 2, overflow-safe
            ax = np.abs(x)
            return 0.5 * x * x + a * (ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0))

        return cls(
            v=v,
            v1=lambda x: np.asarray(x, dtype=np.float64) + a * np.tanh(x),
            v2=lambda x: 1.0 + a / np.cosh(np.asarray(x, dtype=np.float64)) ** 2,
            m_strong=1.0,
            l_smooth=1.0 + a,
        )

    @classmethod
    def gaussian(cls):
        return cls(
            v=lambda x: 0.5 * np.asarray(x, dtype=np.float64) ** 2,
            v1=lambda x: np.asarray(x, dtype=np.float64),
            v2=lambda x: np.ones_like(np.asarray(x, dtype=np.float64)),
            m_strong=1.0,
            l_smooth=1.0,
        )

    def logpdf(self, y, mu=0.0):
        return -self.v(np.asarray(y, dtype=np.float64) - mu) - self.log_z

    def pdf(self, y, mu=0.0):
        return np.exp(self.logpdf(y, mu))

    def mass(self):
        val, _ = integrate.quad(
            lambda x: self.pdf(x), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13
        )
        return float(val)

    def expect(self, fn, mu=0.0):
        val, _ = integrate.quad(
            lambda x: fn(x) * self.pdf(x, mu),
            -np.inf,
            np.inf,
            epsabs=1e-13,
            epsrel=1e-13,
            limit=200,
        )
        return float(val)


def ibp_residual(fam, mu, g, g1, h=1e-5):
    """Location-derivative identity residual for a smooth test function.

    Compares the central difference of ``mu -> E_mu[g]`` against
    ``E_mu[g']``; both sides are adaptive quadratures.
    """
    lhs = (fam.expect(g, mu + h) - fam.expect(g, mu - h)) / (2.0 * h)
    rhs = fam.expect(g1, mu)
    return abs(lhs - rhs)


@dataclass(frozen=True)
class LogConcaveReport:
    bc: float
    bc_bound: float
    fisher_residual: float
    sft_monotone: bool
    drift_grad: float
    drift_bound: float
    eps_q: float
    eps_p: float


def logconcave_checks(fam, mu1, mu2, alpha, beta, m_new, cfg=None, n_grid=101):
    """Overlap, score identity, weight monotonicity and drift for 1D shifts.

    - Bhattacharyya overlap against ``exp(-m_strong (mu1-mu2)^2 / 8)``
      (equality for the Gaussian potential),
    - Fisher/score residual ``|E[V'^2] - E[V'']|``,
    - strict increase of the new-data-only forward KL across a weight grid,
    - old-location drift of the reverse KL by central differences on
      quadrature values, against the score-smoothness bound
      ``beta l_smooth (eps_q |m_new - mu1| + eps_p |mu2 - mu1|)``.
    """
    for name, val in (("mu1", mu1), ("mu2", mu2), ("m_new", m_new)):
        if np.ndim(val) != 0:
            raise ScopeError(f"{name} must be scalar; the family is 1D only")
    mu1, mu2, m_new = float(mu1), float(mu2), float(m_new)
    alpha, beta = float(alpha), float(beta)

    bc, _ = integrate.quad(
        lambda y: np.sqrt(fam.pdf(y, mu1) * fam.pdf(y, mu2)),
        -np.inf,
        np.inf,
        epsabs=1e-13,
        epsrel=1e-13,
        limit=200,
    )
    bc_bound = float(np.exp(-fam.m_strong * (mu1 - mu2) ** 2 / 8.0))

    fisher_residual = abs(
        fam.expect(lambda x: fam.v1(x) ** 2) - fam.expect(lambda x: fam.v2(x))
    )

    def sft_loss(b):
        def integrand(y):
            x_ratio = np.exp(fam.logpdf(y, mu1) - fam.logpdf(y, mu2))
            return -np.log((1.0 - b) + b * x_ratio) * fam.pdf(y, mu2)

        val, _ = integrate.quad(
            integrand, -np.inf, np.inf, epsabs=1e-12, epsrel=1e-12, limit=200
        )
        return float(val)

    grid = np.linspace(0.0, 1.0 - 1e-9, n_grid)
    losses = np.array([sft_loss(b) for b in grid])
    sft_monotone = bool(np.all(np.diff(losses) > 0.0))

    def log_p_alpha(y):
        return np.logaddexp(
            np.log(alpha) + fam.logpdf(y, mu1), np.log1p(-alpha) + fam.logpdf(y, mu2)
        )

    def reverse_kl(m_old):
        def integrand(y):
            lq = np.logaddexp(
                np.log(beta) + fam.logpdf(y, m_old),
                np.log1p(-beta) + fam.logpdf(y, m_new),
            )
            return np.exp(lq) * (lq - log_p_alpha(y))

        val, _ = integrate.quad(
            integrand, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13, limit=400
        )
        return float(val)

    h = 1e-4
    drift_grad = (reverse_kl(mu1 + h) - reverse_kl(mu1 - h)) / (2.0 * h)

    def resp_old_model(y):
        num = np.log(beta) + fam.logpdf(y, mu1)
        den = np.logaddexp(num, np.log1p(-beta) + fam.logpdf(y, m_new))
        return np.exp(num - den)

    def resp_old_target(y):
        num = np.log(alpha) + fam.logpdf(y, mu1)
        return np.exp(num - log_p_alpha(y))

    eps_q = fam.expect(lambda y: 1.0 - resp_old_model(y), mu1)
    eps_p = fam.expect(lambda y: 1.0 - resp_old_target(y), mu1)
    drift_bound = float(
        beta * fam.l_smooth * (eps_q * abs(m_new - mu1) + eps_p * abs(mu2 - mu1))
    )
    return LogConcaveReport(
        bc=float(bc),
        bc_bound=bc_bound,
        fisher_residual=float(fisher_residual),
        sft_monotone=sft_monotone,
        drift_grad=float(drift_grad),
        drift_bound=drift_bound,
        eps_q=float(eps_q),
        eps_p=float(eps_p),
    )
