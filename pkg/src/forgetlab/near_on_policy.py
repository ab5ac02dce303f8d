"""Executable analyses of three near-on-policy post-training schemes.

- self-distillation with an EMA teacher pulled toward a demonstration
  anchor (student tracks an evolving reverse-KL target),
- an entropic test-time objective with a KL anchor, including the exact
  case analysis of its optimal mixture weight,
- reference-tilted advantage regression against a frozen mixture, whose
  target is an exponential tilt of that reference.

All three live in the two-mode shared-covariance family; rewards are
two-level step functions on either a disjoint partition or the Bayes
halfspace between the modes.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import ConsistencyError, InputError, PreconditionError
from .estimators import EstimatorConfig, jackknife_ratio, union_space
from .mixture import (
    CovarianceModel,
    LearnerParams,
    MixtureDensity,
    bayes_partition_stats,
    separation,
)
from .objectives import TargetSpec, oldmean_drift, reverse_kl_gradients

__all__ = [
    "ModeGeometry",
    "SdftState",
    "SdftConfig",
    "SdftStep",
    "SdftRun",
    "StepReward",
    "TttConfig",
    "TttAnalysis",
    "OaplConfig",
    "OaplTarget",
    "OaplRegression",
    "sdft_step",
    "sdft_run",
    "ttt_analysis",
    "ttt_oldmean_gradient",
    "ttt_entropic_value",
    "oapl_target",
    "oapl_old_resp_mc",
    "oapl_regression_grad",
    "reward_tilt_recovery",
]

_PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class ModeGeometry:
    """Old/new mode locations with the shared covariance."""

    mu_old: np.ndarray
    mu_new: np.ndarray
    cov: CovarianceModel

    def __post_init__(self):
        mu_old = np.atleast_1d(np.asarray(self.mu_old, dtype=np.float64))
        mu_new = np.atleast_1d(np.asarray(self.mu_new, dtype=np.float64))
        if mu_old.shape != (self.cov.dim,) or mu_new.shape != (self.cov.dim,):
            raise InputError("means must match the covariance dimension")
        object.__setattr__(self, "mu_old", mu_old)
        object.__setattr__(self, "mu_new", mu_new)

    @property
    def delta(self):
        return separation(self.cov, self.mu_old, self.mu_new)


# ---------------------------------------------------------------------------
# Self-distillation with EMA teacher and demonstration anchor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SdftState:
    """Teacher (alpha_t, nu_t) and student (beta_t, m_t) summaries."""

    teacher_alpha: float
    teacher_nu: np.ndarray
    student_beta: float
    student_m: np.ndarray

    def __post_init__(self):
        for name in ("teacher_alpha", "student_beta"):
            v = float(getattr(self, name))
            if not 0.0 < v < 1.0:
                raise InputError(f"{name} must lie in (0, 1), got {v}")
            object.__setattr__(self, name, v)
        object.__setattr__(
            self, "teacher_nu", np.atleast_1d(np.asarray(self.teacher_nu, dtype=np.float64))
        )
        object.__setattr__(
            self, "student_m", np.atleast_1d(np.asarray(self.student_m, dtype=np.float64))
        )

    def teacher_vec(self):
        return np.concatenate([[self.teacher_alpha], self.teacher_nu])

    def student_vec(self):
        return np.concatenate([[self.student_beta], self.student_m])


@dataclass(frozen=True)
class SdftConfig:
    """Anchor state, step sizes and mixing rates of the coupled dynamics."""

    anchor_alpha: float
    anchor_nu: np.ndarray
    step_gamma: float
    ema_zeta: float
    demo_lambda: float
    mu_old: np.ndarray
    cov: CovarianceModel

    def __post_init__(self):
        if not 0.0 < float(self.anchor_alpha) < 1.0:
            raise InputError("anchor_alpha must lie in (0, 1)")
        if not float(self.step_gamma) > 0.0:
            raise InputError("step_gamma must be positive")
        if not 0.0 < float(self.ema_zeta) <= 1.0:
            raise InputError("ema_zeta must lie in (0, 1]")
        if not 0.0 <= float(self.demo_lambda) <= 1.0:
            raise InputError("demo_lambda must lie in [0, 1]")
        object.__setattr__(self, "anchor_nu", np.atleast_1d(np.asarray(self.anchor_nu, dtype=np.float64)))
        object.__setattr__(self, "mu_old", np.atleast_1d(np.asarray(self.mu_old, dtype=np.float64)))

    def anchor_vec(self):
        return np.concatenate([[float(self.anchor_alpha)], self.anchor_nu])


@dataclass(frozen=True)
class SdftStep:
    state: SdftState
    grad_beta: float
    grad_m: np.ndarray
    clamped: bool


def sdft_step(state, cfg, est_cfg=EstimatorConfig()):
    """One coupled update of the student/teacher pair.

    The student takes an explicit gradient step on the phasewise reverse KL
    toward the current teacher (raw mixture-weight coordinates, matching the
    Euclidean update of the dynamics); the teacher is then moved by the EMA
    combination of the updated student and the demonstration anchor.
    Probabilities are clamped to (1e-12, 1 - 1e-12) and the clamp reported.
    """
    target = TargetSpec(state.teacher_alpha, cfg.mu_old, state.teacher_nu, cfg.cov)
    learner = LearnerParams.from_beta(state.student_beta, cfg.mu_old, state.student_m)
    dbeta, dm = reverse_kl_gradients(learner, target, est_cfg)
    if not (np.isfinite(dbeta) and np.all(np.isfinite(dm))):
        raise PreconditionError("non-finite phasewise gradient")

    beta_new = state.student_beta - cfg.step_gamma * dbeta
    m_new = state.student_m - cfg.step_gamma * dm
    clamped = not _PROB_CLAMP < beta_new < 1.0 - _PROB_CLAMP
    beta_new = float(np.clip(beta_new, _PROB_CLAMP, 1.0 - _PROB_CLAMP))

    student_vec = np.concatenate([[beta_new], m_new])
    zeta, lam = float(cfg.ema_zeta), float(cfg.demo_lambda)
    teacher_vec = (1.0 - zeta) * state.teacher_vec() + zeta * (
        (1.0 - lam) * student_vec + lam * cfg.anchor_vec()
    )
    alpha_new = teacher_vec[0]
    clamped = clamped or not _PROB_CLAMP < alpha_new < 1.0 - _PROB_CLAMP
    alpha_new = float(np.clip(alpha_new, _PROB_CLAMP, 1.0 - _PROB_CLAMP))

    new_state = SdftState(alpha_new, teacher_vec[1:], beta_new, m_new)
    return SdftStep(new_state, float(dbeta), dm, clamped)


@dataclass(frozen=True)
class SdftRun:
    """Trajectory record and diagnostics of a full coupled run."""

    states: list
    contraction_ratios: np.ndarray
    teacher_anchor_dists: np.ndarray
    old_grad_norms: np.ndarray
    old_grad_sum: float
    limit_error: float
    clamp_events: int


def sdft_run(init, cfg, steps, est_cfg=EstimatorConfig(), target_star=None):
    """Run the coupled dynamics and record the tracking diagnostics.

    Per step: the contraction ratio ``||student_{t+1} - teacher_t|| /
    ||student_t - teacher_t||``, the teacher-anchor distance, and the norm
    of the old-mean gradient of the phasewise loss at the correct old mean
    (the drift channel).  ``limit_error`` is the final distance of the
    student to ``target_star`` (default: the anchor state).
    """
    if steps < 1:
        raise InputError("steps must be >= 1")
    t_star = (
        cfg.anchor_vec() if target_star is None else np.asarray(target_star, dtype=np.float64)
    )
    state = init
    states = [init]
    ratios, anchor_dists, old_norms = [], [], []
    clamps = 0
    for _ in range(steps):
        target = TargetSpec(state.teacher_alpha, cfg.mu_old, state.teacher_nu, cfg.cov)
        learner = LearnerParams.from_beta(state.student_beta, cfg.mu_old, state.student_m)
        drift = oldmean_drift(learner, target, est_cfg)
        old_norms.append(float(np.linalg.norm(drift.grad)))
        anchor_dists.append(float(np.linalg.norm(state.teacher_vec() - cfg.anchor_vec())))

        lag_before = float(np.linalg.norm(state.student_vec() - state.teacher_vec()))
        step = sdft_step(state, cfg, est_cfg)
        clamps += int(step.clamped)
        lag_after = float(
            np.linalg.norm(step.state.student_vec() - state.teacher_vec())
        )
        ratios.append(lag_after / lag_before if lag_before > 1e-14 else 0.0)
        state = step.state
        states.append(state)

    limit_error = float(np.linalg.norm(state.student_vec() - t_star))
    return SdftRun(
        states=states,
        contraction_ratios=np.array(ratios),
        teacher_anchor_dists=np.array(anchor_dists),
        old_grad_norms=np.array(old_norms),
        old_grad_sum=float(np.sum(old_norms)),
        limit_error=limit_error,
        clamp_events=clamps,
    )


# ---------------------------------------------------------------------------
# Entropic objective with KL anchor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepReward:
    """Two-level reward: ``u_old`` on the old region, ``u_new`` on the new.

    ``partition`` is ``"disjoint"`` (idealized separate supports) or
    ``"bayes_halfspace"`` (the geometric midplane between the modes).
    ``r_max`` records the bound used by drift estimates.
    """

    u_old: float
    u_new: float
    partition: str = "bayes_halfspace"

    def __post_init__(self):
        if self.partition not in ("disjoint", "bayes_halfspace"):
            raise InputError(f"unknown partition {self.partition!r}")
        object.__setattr__(self, "u_old", float(self.u_old))
        object.__setattr__(self, "u_new", float(self.u_new))

    @property
    def r_max(self):
        return max(abs(self.u_old), abs(self.u_new))


@dataclass(frozen=True)
class TttConfig:
    """Entropic strength, anchor coefficient, reference weight and geometry."""

    eta: float
    lambda_ref: float
    beta0: float
    reward: StepReward
    geometry: ModeGeometry

    def __post_init__(self):
        if not float(self.eta) > 0.0:
            raise InputError("eta must be positive")
        if float(self.lambda_ref) < 0.0:
            raise InputError("lambda_ref must be nonnegative")
        if not 0.0 < float(self.beta0) < 1.0:
            raise InputError("beta0 must lie in (0, 1)")


@dataclass(frozen=True)
class TttAnalysis:
    """Closed-form objective pieces and the exact optimal mixture weight.

    ``J``, ``D`` and ``Dprime`` are callables on the mixture weight;
    ``case`` is one of ``collapse_new`` (all mass to the new mode),
    ``collapse_old``, ``interior`` or ``reference`` (equal rewards pin the
    optimum at the reference weight).
    """

    J: callable
    D: callable
    Dprime: callable
    lambda_crit_new: float
    lambda_crit_old: float
    beta_star: float
    case: str
    gamma: float
    kappa: float


def _binary_kl(beta, beta0):
    beta = np.asarray(beta, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(beta > 0, beta * (np.log(beta) - np.log(beta0)), 0.0)
        t2 = np.where(
            beta < 1, (1 - beta) * (np.log1p(-beta) - np.log1p(-beta0)), 0.0
        )
    return t1 + t2


def _bisect(fn, lo, hi, tol=1e-12, max_iter=200):
    flo, fhi = fn(lo), fn(hi)
    if not (flo > 0 >= fhi or flo >= 0 > fhi):
        raise ConsistencyError(
            "first-order condition does not bracket a root; "
            "threshold case analysis is inconsistent"
        )
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol:
            return mid
        if fn(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ttt_analysis(cfg, est_cfg=EstimatorConfig()):
    """Exact case analysis of the anchored entropic objective in beta.

    The utility has a closed form through the region masses; the anchor
    divergence and its derivative are evaluated in closed form (disjoint)
    or by rank-1 quadrature (Gaussian).  The optimal weight is the boundary
    value below the critical anchor strength and otherwise the unique root
    of the first-order condition, located by bisection on the bracket
    given by the case analysis.
    """
    geo, rew = cfg.geometry, cfg.reward
    eta, lam, beta0 = float(cfg.eta), float(cfg.lambda_ref), float(cfg.beta0)
    a = float(np.exp(eta * rew.u_old))
    b = float(np.exp(eta * rew.u_new))

    if rew.partition == "disjoint":
        gamma, kappa = 0.0, 1.0
    else:
        part = bayes_partition_stats(geo.mu_old, geo.mu_new, geo.cov)
        gamma, kappa = part.gamma, part.kappa

    def J(beta):
        beta = np.asarray(beta, dtype=np.float64)
        return np.log(a * (gamma + kappa * beta) + b * (1.0 - gamma - kappa * beta))

    def Jprime(beta):
        beta = np.asarray(beta, dtype=np.float64)
        return kappa * (a - b) / (a * (gamma + kappa * beta) + b * (1.0 - gamma - kappa * beta))

    if rew.partition == "disjoint":
        D = lambda beta: _binary_kl(beta, beta0)  # noqa: E731

        def Dprime(beta):
            beta = np.asarray(beta, dtype=np.float64)
            with np.errstate(divide="ignore"):
                return (np.log(beta) - np.log(beta0)) - (
                    np.log1p(-beta) - np.log1p(-beta0)
                )

    else:
        space, (mi,) = union_space(geo.cov, [[geo.mu_old, geo.mu_new]])
        order = est_cfg.quad_order
        nodes_o, logw_o = space.nodes_for(int(mi[0]), order)
        nodes_n, logw_n = space.nodes_for(int(mi[1]), order)
        l_ref_o = space.logmix(nodes_o, mi, [beta0, 1.0 - beta0])
        l_ref_n = space.logmix(nodes_n, mi, [beta0, 1.0 - beta0])
        comp_o = {
            "o": space.logmix(nodes_o, [int(mi[0])], [1.0]),
            "n": space.logmix(nodes_o, [int(mi[1])], [1.0]),
        }
        comp_n = {
            "o": space.logmix(nodes_n, [int(mi[0])], [1.0]),
            "n": space.logmix(nodes_n, [int(mi[1])], [1.0]),
        }
        w_o, w_n = np.exp(logw_o), np.exp(logw_n)

        def _log_ratios(beta):
            with np.errstate(divide="ignore"):
                lb, l1b = np.log(beta), np.log1p(-beta)
            s_o = np.logaddexp(lb + comp_o["o"], l1b + comp_o["n"]) - l_ref_o
            s_n = np.logaddexp(lb + comp_n["o"], l1b + comp_n["n"]) - l_ref_n
            return s_o, s_n

        def D(beta):
            if np.ndim(beta):
                return np.array([D(b_) for b_ in np.asarray(beta, dtype=np.float64)])
            beta = float(beta)
            s_o, s_n = _log_ratios(beta)
            return beta * float(w_o @ s_o) + (1.0 - beta) * float(w_n @ s_n)

        def Dprime(beta):
            if np.ndim(beta):
                return np.array([Dprime(b_) for b_ in np.asarray(beta, dtype=np.float64)])
            s_o, s_n = _log_ratios(float(beta))
            return float(w_o @ s_o) - float(w_n @ s_n)

    if rew.partition == "disjoint":
        # Binary-KL slope is infinite at the boundary: any positive anchor
        # keeps the optimum interior.
        lambda_crit_new = 0.0
        lambda_crit_old = 0.0
    else:
        dp0 = Dprime(0.0)
        dp1 = Dprime(1.0)
        lambda_crit_new = kappa * (b - a) / ((a * gamma + b * (1.0 - gamma)) * (-dp0))
        lambda_crit_old = kappa * (a - b) / ((a * (1.0 - gamma) + b * gamma) * dp1)

    def hprime(beta):
        return float(Jprime(beta)) - lam * float(Dprime(beta))

    if rew.u_old == rew.u_new:
        beta_star, case = (beta0, "reference")
    elif lam == 0.0:
        beta_star, case = (0.0, "collapse_new") if b > a else (1.0, "collapse_old")
    elif b > a:
        if rew.partition != "disjoint" and lam <= lambda_crit_new:
            beta_star, case = 0.0, "collapse_new"
        else:
            beta_star, case = _bisect(hprime, 0.0, beta0), "interior"
    else:
        if rew.partition != "disjoint" and lam <= lambda_crit_old:
            beta_star, case = 1.0, "collapse_old"
        else:
            beta_star, case = _bisect(hprime, beta0, 1.0), "interior"

    return TttAnalysis(
        J=J,
        D=D,
        Dprime=Dprime,
        lambda_crit_new=float(lambda_crit_new),
        lambda_crit_old=float(lambda_crit_old),
        beta_star=float(beta_star),
        case=case,
        gamma=float(gamma),
        kappa=float(kappa),
    )


def _region_mass_new(geo, mean):
    """Mass of the new-side Bayes halfspace under ``N(mean, Sigma)``."""
    part = bayes_partition_stats(geo.mu_old, geo.mu_new, geo.cov)
    score = float((mean - part.midpoint) @ part.direction)
    return float(ndtr(score / part.delta))


def ttt_entropic_value(m_old, beta, m_new, cfg):
    """Closed-form ``log E_q[exp(eta r)]`` for arbitrary component means.

    Step rewards make the moment value a function of region masses only;
    used as the finite-difference oracle for the old-mean gradient.
    """
    geo, rew = cfg.geometry, cfg.reward
    if rew.partition != "bayes_halfspace":
        raise PreconditionError("entropic value oracle requires the Bayes halfspace")
    a = np.exp(cfg.eta * rew.u_old)
    b = np.exp(cfg.eta * rew.u_new)
    p_new = beta * _region_mass_new(geo, np.asarray(m_old, dtype=np.float64)) + (
        1.0 - beta
    ) * _region_mass_new(geo, np.asarray(m_new, dtype=np.float64))
    return float(np.log(a * (1.0 - p_new) + b * p_new))


def ttt_oldmean_gradient(beta, m_new, cfg, est_cfg=EstimatorConfig()):
    """Old-mean gradient of the entropic utility at the correct old mean.

    The reward is constant on each Bayes region, so the gradient reduces to
    the truncated old-component score over the new region:

    ``grad = beta (w_new - w_old) (phi_pdf(delta/2)/delta) Sigma^{-1}(mu_new - mu_old)``

    with region weights ``w = exp(eta u)/M`` normalized by the utility
    moment ``M``.  The norm obeys the explicit overlap bound returned as
    the second element.
    """
    geo, rew = cfg.geometry, cfg.reward
    if rew.partition != "bayes_halfspace":
        raise PreconditionError("old-mean gradient requires the Bayes halfspace reward")
    beta = float(beta)
    m_new = np.atleast_1d(np.asarray(m_new, dtype=np.float64))
    part = bayes_partition_stats(geo.mu_old, geo.mu_new, geo.cov)
    a = float(np.exp(cfg.eta * rew.u_old))
    b = float(np.exp(cfg.eta * rew.u_new))
    p_new = beta * part.gamma + (1.0 - beta) * _region_mass_new(geo, m_new)
    moment = a * (1.0 - p_new) + b * p_new
    w_old, w_new = a / moment, b / moment
    grad = beta * (w_new - w_old) * part.trunc_moment

    r = rew.r_max
    delta = part.delta
    bound = (
        beta
        * (np.exp(2.0 * cfg.eta * r) - np.exp(-2.0 * cfg.eta * r))
        * np.exp(-0.125 * delta * delta)
        / (np.sqrt(2.0 * np.pi) * delta)
        * np.linalg.norm(geo.cov.solve(geo.mu_new - geo.mu_old))
    )
    return grad, float(bound)


# ---------------------------------------------------------------------------
# Reference-tilted advantage regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OaplConfig:
    """Tilt temperature, frozen reference weight, reward and geometry."""

    tau: float
    beta0: float
    reward: StepReward
    geometry: ModeGeometry

    def __post_init__(self):
        if not float(self.tau) > 0.0:
            raise InputError("tau must be positive")
        if not 0.0 < float(self.beta0) < 1.0:
            raise InputError("beta0 must lie in (0, 1)")

    @property
    def reference(self):
        geo = self.geometry
        return MixtureDensity(
            [self.beta0, 1.0 - self.beta0], [geo.mu_old, geo.mu_new], geo.cov
        )


@dataclass(frozen=True)
class OaplTarget:
    """Exponential tilt of the frozen reference by the step reward."""

    v_star: float
    z: float
    log_qstar: callable
    beta_star_disjoint: float
    expected_old_resp: float
    gamma: float


def oapl_target(cfg, est_cfg=EstimatorConfig()):
    """Normalizer, value and old-mass retention of the tilted target.

    With step rewards the moment integrals have closed forms through the
    region masses: ``I_old = (1-gamma) e^{u_old/tau} + gamma e^{u_new/tau}``
    and symmetrically for the new component (``gamma = 0`` in the disjoint
    idealization).  The expected old responsibility of the target,
    ``beta0 I_old / Z``, lies strictly inside (0, 1) whenever the reference
    retains both modes: the tilt reweights existing mass and cannot erase
    the old mode outright.
    """
    geo, rew = cfg.geometry, cfg.reward
    tau, beta0 = float(cfg.tau), float(cfg.beta0)
    if rew.partition == "disjoint":
        gamma = 0.0
    else:
        gamma = bayes_partition_stats(geo.mu_old, geo.mu_new, geo.cov).gamma
    eo, en = np.exp(rew.u_old / tau), np.exp(rew.u_new / tau)
    i_old = (1.0 - gamma) * eo + gamma * en
    i_new = gamma * eo + (1.0 - gamma) * en
    z = beta0 * i_old + (1.0 - beta0) * i_new
    v_star = tau * np.log(z)
    beta_star_disjoint = beta0 * eo / (beta0 * eo + (1.0 - beta0) * en)
    expected_old_resp = beta0 * i_old / z

    log_qstar = None
    if rew.partition == "bayes_halfspace":
        reference = cfg.reference
        part = bayes_partition_stats(geo.mu_old, geo.mu_new, geo.cov)

        def log_qstar(y):  # noqa: F811 - assembled only in the geometric mode
            labels = part.classify(y)
            r_vals = np.where(labels == "new_region", rew.u_new, rew.u_old)
            out = reference.log_density(y) + r_vals / tau - np.log(z)
            return float(out) if np.ndim(out) == 0 else out

    return OaplTarget(
        v_star=float(v_star),
        z=float(z),
        log_qstar=log_qstar,
        beta_star_disjoint=float(beta_star_disjoint),
        expected_old_resp=float(expected_old_resp),
        gamma=float(gamma),
    )


def oapl_old_resp_mc(cfg, n, seed):
    """Self-normalized importance estimate of the target's old responsibility.

    The tilted target is not a member of the parametric family, so it is
    sampled through reference draws weighted by ``exp(r/tau)``; returns the
    ratio estimate with a jackknife standard error.
    """
    geo, rew = cfg.geometry, cfg.reward
    if rew.partition != "bayes_halfspace":
        raise PreconditionError("sampling oracle requires the Bayes halfspace reward")
    reference = cfg.reference
    part = bayes_partition_stats(geo.mu_old, geo.mu_new, geo.cov)
    points, _ = reference.sample(n, seed)
    labels = part.classify(points)
    r_vals = np.where(labels == "new_region", rew.u_new, rew.u_old)
    w = np.exp((r_vals - rew.r_max) / cfg.tau)  # shift for stability; cancels
    r_old = reference.responsibilities(points)[:, 0]
    return jackknife_ratio(w * r_old, w)


@dataclass(frozen=True)
class OaplRegression:
    j_value: float
    grad_m: np.ndarray
    oldmode_term: np.ndarray
    oldmode_bound: float


def oapl_regression_grad(beta, m_new, cfg, est_cfg=EstimatorConfig()):
    """Value and new-mean gradient of the advantage-matching regression.

    ``j_value = E_ref[(tau log(q/ref) - A*)^2]`` and its gradient is gated
    by the new-component responsibility.  ``oldmode_term`` is the old-mode
    share of that gradient (the drift channel); its norm at the
    synchronized point obeys

    ``4 tau R beta0 sqrt(M_on) sqrt(eps_ref)``

    where ``M_on`` is the old-under-new score second moment and
    ``eps_ref`` the reference leakage, itself exponentially small in the
    separation.
    """
    geo, rew = cfg.geometry, cfg.reward
    if rew.partition != "bayes_halfspace":
        raise PreconditionError("regression analysis requires the Bayes halfspace reward")
    beta = float(beta)
    if not 0.0 < beta < 1.0:
        raise InputError("beta must lie in (0, 1)")
    m_new = np.atleast_1d(np.asarray(m_new, dtype=np.float64))
    tau, beta0 = float(cfg.tau), float(cfg.beta0)

    target = oapl_target(cfg, est_cfg)
    part = bayes_partition_stats(geo.mu_old, geo.mu_new, geo.cov)
    space, (ri, qi) = union_space(
        geo.cov, [[geo.mu_old, geo.mu_new], [geo.mu_old, m_new]]
    )
    rw = [beta0, 1.0 - beta0]
    qw = [beta, 1.0 - beta]
    order = est_cfg.quad_order

    def residual(u):
        points = space.lift(u)
        labels = part.classify(points)
        r_vals = np.where(labels == "new_region", rew.u_new, rew.u_old)
        log_ratio = space.logmix(u, qi, qw) - space.logmix(u, ri, rw)
        return tau * log_ratio - (r_vals - target.v_star)

    def resid_sq(u):
        return residual(u) ** 2

    def gated(u):
        return residual(u) * space.resp(u, qi, qw)[:, 1]

    j_value = 0.0
    grad_m = np.zeros(geo.cov.dim)
    m_idx = int(qi[1])
    for j_local, j in enumerate(ri):
        j_value += rw[j_local] * space.expect_scalar(int(j), order, resid_sq)
        grad_m += rw[j_local] * space.expect_score(int(j), m_idx, order, gated)
    grad_m = 2.0 * tau * grad_m
    oldmode_term = (
        2.0 * tau * rw[0] * space.expect_score(int(ri[0]), m_idx, order, gated)
    )

    sig_inv_diff = geo.cov.solve(geo.cov.solve(geo.mu_old - geo.mu_new))
    m_on = float(
        np.trace(np.linalg.inv(geo.cov.sigma))
        + (geo.mu_old - geo.mu_new) @ sig_inv_diff
    )
    reference = cfg.reference
    eps_ref = space.expect_scalar(
        int(ri[0]), order, lambda u: space.resp(u, ri, rw)[:, 1]
    )
    eps_ref = min(max(eps_ref, 0.0), 1.0)
    bound = 4.0 * tau * rew.r_max * beta0 * np.sqrt(m_on) * np.sqrt(eps_ref)
    return OaplRegression(
        j_value=float(j_value),
        grad_m=grad_m,
        oldmode_term=oldmode_term,
        oldmode_bound=float(bound),
    )


def reward_tilt_recovery(alpha, beta0, geometry, tau=1.0, n_probes=1000, seed=0, est_cfg=EstimatorConfig()):
    """Tilting the reference by the log-density-correction reward.

    With ``r = tau log(p_alpha / q_beta0)`` the tilted reference equals the
    target mixture exactly and the normalizer is one.  Returns the
    quadrature normalizer and the maximum pointwise log-density gap over
    reference-sampled probes.
    """
    geo = geometry
    target = MixtureDensity(
        [alpha, 1.0 - alpha], [geo.mu_old, geo.mu_new], geo.cov
    )
    reference = MixtureDensity(
        [beta0, 1.0 - beta0], [geo.mu_old, geo.mu_new], geo.cov
    )
    space, (ti, ri) = union_space(geo.cov, [target.means, reference.means])
    tw = [alpha, 1.0 - alpha]
    rw = [beta0, 1.0 - beta0]
    z = 0.0
    for j_local, j in enumerate(ri):
        z += rw[j_local] * space.expect_scalar(
            int(j),
            est_cfg.quad_order,
            lambda u: np.exp(space.logmix(u, ti, tw) - space.logmix(u, ri, rw)),
        )
    points, _ = reference.sample(n_probes, seed)
    r_vals = tau * (target.log_density(points) - reference.log_density(points))
    log_tilted = reference.log_density(points) + r_vals / tau - np.log(z)
    max_gap = float(np.max(np.abs(log_tilted - target.log_density(points))))
    return float(z), max_gap
