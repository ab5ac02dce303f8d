"""Closed-form losses, gradients, misassignment probabilities and bounds.

These are the analytic expressions that the independent oracle suite
(quadrature, Monte Carlo, finite differences) has to confirm: the
new-data-only forward-KL loss and its logit gradient, the reverse-KL
gradients and their stationary point, the exact old-mean drift
decomposition with its overlap bounds, and the two replay minimizers.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import BoundaryError, InputError, PreconditionError
from .estimators import EstimatorConfig, make_generator, divergence, union_space
from .mixture import (
    CovarianceModel,
    LearnerParams,
    MixtureDensity,
    bhattacharyya_equal_cov,
    separation,
)

__all__ = [
    "TargetSpec",
    "DriftReport",
    "SftReport",
    "disjoint_decomposition",
    "sft_loss_and_logit_grad",
    "reverse_kl_gradients",
    "reverse_kl_loss",
    "oldmean_drift",
    "replay_population_minimizer",
]

_KL = make_generator("kl")


@dataclass(frozen=True)
class TargetSpec:
    """Two-mode target mixture ``alpha * N(mu_old) + (1-alpha) * N(mu_new)``."""

    alpha: float
    mu_old: np.ndarray
    mu_new: np.ndarray
    cov: CovarianceModel

    def __post_init__(self):
        alpha = float(self.alpha)
        if not 0.0 < alpha < 1.0:
            raise InputError(f"alpha must lie in (0, 1), got {alpha}")
        mu_old = np.atleast_1d(np.asarray(self.mu_old, dtype=np.float64))
        mu_new = np.atleast_1d(np.asarray(self.mu_new, dtype=np.float64))
        if mu_old.shape != (self.cov.dim,) or mu_new.shape != (self.cov.dim,):
            raise InputError("means must match the covariance dimension")
        if np.array_equal(mu_old, mu_new):
            raise InputError("mu_old and mu_new must differ")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "mu_old", mu_old)
        object.__setattr__(self, "mu_new", mu_new)

    @property
    def delta(self):
        """Mahalanobis separation of the two modes."""
        return separation(self.cov, self.mu_old, self.mu_new)

    @property
    def target(self):
        """The target mixture as a density object."""
        return MixtureDensity(
            [self.alpha, 1.0 - self.alpha], [self.mu_old, self.mu_new], self.cov
        )

    def learner_density(self, beta, m_old=None, m_new=None):
        """Learner mixture with defaults at the true means."""
        m_old = self.mu_old if m_old is None else m_old
        m_new = self.mu_new if m_new is None else m_new
        return MixtureDensity([beta, 1.0 - beta], [m_old, m_new], self.cov)


@dataclass(frozen=True)
class DriftReport:
    """Old-mean gradient at the correct old mean, with its overlap bound."""

    grad: np.ndarray
    eps_q: float
    eps_p: float
    bound: float

    def __post_init__(self):
        if not 0.0 <= self.eps_q <= 1.0 or not 0.0 <= self.eps_p <= 1.0:
            raise InputError("misassignment probabilities must lie in [0, 1]")
        if float(np.linalg.norm(self.grad)) > self.bound + 1e-8:
            raise InputError("drift gradient exceeds its bound")


@dataclass(frozen=True)
class SftReport:
    loss: float
    dphi: float
    leak: float
    leak_bound: float


def _xlog_ratio(x, num, den):
    """``x * log(num/den)`` with 0 log 0 = 0 and x log(x/0) = +inf for x > 0."""
    if x == 0.0:
        return 0.0
    if den == 0.0:
        return np.inf
    return x * (np.log(num) - np.log(den))


def disjoint_decomposition(spec):
    """Exact forward/reverse KL split for disjoint-support two-mode mixtures.

    Both divergences separate into a binary mixture-weight term plus the
    weighted within-mode divergences.  Infinities are legal outputs: they
    encode absolute-continuity failures at the weight boundaries.
    """
    a, b = spec.alpha, spec.beta
    forward = (
        _xlog_ratio(a, a, b)
        + _xlog_ratio(1.0 - a, 1.0 - a, 1.0 - b)
        + a * spec.kl_oo
        + (1.0 - a) * spec.kl_nn
    )
    reverse = (
        _xlog_ratio(b, b, a)
        + _xlog_ratio(1.0 - b, 1.0 - b, 1.0 - a)
        + b * spec.kl_oo
        + (1.0 - b) * spec.kl_nn
    )
    return float(forward), float(reverse)


def sft_loss_and_logit_grad(beta, spec, cfg=EstimatorConfig()):
    """New-data-only forward-KL loss and its logit gradient.

    With both component means fixed at the truth, the loss is
    ``KL(p_new || q_beta)`` and the logit gradient equals
    ``beta - E_{p_new}[r_old]``: current old mass minus the old
    responsibility leaked onto new samples.  The leak obeys
    ``0.5 sqrt(beta/(1-beta)) exp(-delta^2/8)``.

    Projected quadrature (rank 1) is used regardless of ``cfg.method``;
    only ``cfg.quad_order`` is consumed.
    """
    beta = float(beta)
    if not 0.0 < beta < 1.0:
        raise BoundaryError(f"beta must lie strictly inside (0, 1), got {beta}")
    space, (oi, ni) = union_space(spec.cov, [[spec.mu_old], [spec.mu_new]])
    j_new = int(ni[0])
    u, logw = space.nodes_for(j_new, cfg.quad_order)
    s = space.logmix(u, oi, [1.0]) - space.logmix(u, ni, [1.0])
    w = np.exp(logw)
    loss = -float(w @ np.logaddexp(np.log1p(-beta), np.log(beta) + s))
    leak = float(w @ expit(LearnerParams.logit_of(beta) + s))
    dphi = beta - leak
    delta = spec.delta
    leak_bound = 0.5 * np.sqrt(beta / (1.0 - beta)) * np.exp(-0.125 * delta * delta)
    return SftReport(loss, dphi, leak, float(leak_bound))


def _require_correct_old_mean(learner, spec):
    if not np.array_equal(learner.m_old, spec.mu_old):
        raise PreconditionError("learner.m_old must equal the true old mean exactly")


def reverse_kl_gradients(learner, spec, cfg=EstimatorConfig()):
    """Gradients of ``KL(q_{beta, mu_old, m_new} || p_alpha)``.

    Returns ``(dbeta, dm_new)``:

    - ``dbeta``: difference of the two component expectations of the
      log ratio,
    - ``dm_new``: ``(1-beta)`` times the new-component score expectation of
      the log ratio.

    Both vanish at ``(beta, m_new) = (alpha, mu_new)`` where the learner
    reproduces the target exactly.
    """
    _require_correct_old_mean(learner, spec)
    beta = learner.beta
    space, (qi, pi) = union_space(
        spec.cov, [[spec.mu_old, learner.m_new], [spec.mu_old, spec.mu_new]]
    )
    qw = [beta, 1.0 - beta]
    pw = [spec.alpha, 1.0 - spec.alpha]

    def log_ratio(u):
        return space.logmix(u, qi, qw) - space.logmix(u, pi, pw)

    e_old = space.expect_scalar(int(qi[0]), cfg.quad_order, log_ratio)
    e_new = space.expect_scalar(int(qi[1]), cfg.quad_order, log_ratio)
    dbeta = e_old - e_new
    dm_new = (1.0 - beta) * space.expect_score(
        int(qi[1]), int(qi[1]), cfg.quad_order, log_ratio
    )
    return float(dbeta), dm_new


def reverse_kl_loss(beta, m_old, m_new, spec, cfg=EstimatorConfig()):
    """``KL(q_{beta, m_old, m_new} || p_alpha)`` by projected quadrature."""
    q = MixtureDensity([beta, 1.0 - beta], [m_old, m_new], spec.cov)
    return divergence(q, spec.target, _KL, cfg)


def oldmean_drift(learner, spec, cfg=EstimatorConfig()):
    """Exact old-mean gradient decomposition at the correct old mean.

    The only terms able to move an already-correct old mean are the
    misassignment probabilities under old-mode samples:

    ``grad = beta Sigma^{-1} (eps_q (m_new - mu_old) - eps_p (mu_new - mu_old))``

    with ``eps_q = E_{p_old}[1 - r_old]`` (model) and
    ``eps_p = E_{p_old}[1 - s_old]`` (target), each bounded by an explicit
    overlap term; the returned bound is
    ``beta ||Sigma^{-1}||_2 (eps_q ||m_new - mu_old|| + eps_p ||mu_new - mu_old||)``.
    """
    _require_correct_old_mean(learner, spec)
    beta = learner.beta
    space, (qi, pi) = union_space(
        spec.cov, [[spec.mu_old, learner.m_new], [spec.mu_old, spec.mu_new]]
    )
    j_old = int(qi[0])
    order = cfg.quad_order
    qw = [beta, 1.0 - beta]
    pw = [spec.alpha, 1.0 - spec.alpha]
    eps_q = space.expect_scalar(
        j_old, order, lambda u: space.resp(u, qi, qw)[:, 1]
    )
    eps_p = space.expect_scalar(
        j_old, order, lambda u: space.resp(u, pi, pw)[:, 1]
    )
    eps_q = min(max(eps_q, 0.0), 1.0)
    eps_p = min(max(eps_p, 0.0), 1.0)
    grad = beta * spec.cov.solve(
        eps_q * (learner.m_new - spec.mu_old) - eps_p * (spec.mu_new - spec.mu_old)
    )
    bound = (
        beta
        * spec.cov.inv_operator_norm
        * (
            eps_q * np.linalg.norm(learner.m_new - spec.mu_old)
            + eps_p * np.linalg.norm(spec.mu_new - spec.mu_old)
        )
    )
    return DriftReport(grad, eps_q, eps_p, float(bound))


def drift_eps_bounds(learner, spec):
    """Overlap bounds for the two misassignment probabilities."""
    beta = learner.beta
    bc_model = bhattacharyya_equal_cov(spec.cov, learner.m_new, spec.mu_old)
    bc_target = bhattacharyya_equal_cov(spec.cov, spec.mu_new, spec.mu_old)
    eps_q_bound = 0.5 * np.sqrt((1.0 - beta) / beta) * bc_model
    eps_p_bound = 0.5 * np.sqrt((1.0 - spec.alpha) / spec.alpha) * bc_target
    return float(eps_q_bound), float(eps_p_bound)


def replay_population_minimizer(lam, mode):
    """Population minimizer of forward-KL under the two replay conventions.

    ``denominator`` mixes old mass into the model: the learnable weight
    still collapses (``beta_star = 0``) and the deployed old mass is the
    hard floor ``lam``.  ``numerator`` mixes old samples into the data:
    the optimum retains ``beta_star = lam`` exactly.
    """
    lam = float(lam)
    if not 0.0 < lam < 1.0:
        raise InputError(f"lam must lie in (0, 1), got {lam}")
    if mode == "denominator":
        return 0.0, lam
    if mode == "numerator":
        return lam, lam
    raise InputError(f"mode must be 'denominator' or 'numerator', got {mode!r}")
