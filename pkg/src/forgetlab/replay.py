"""Replay-mixed behavior sampling with bounded importance weights.

Mixing a fraction ``lam`` of true old-mode samples into the behavior
distribution leaves every model expectation estimable without bias, with
importance ratios uniformly bounded by ``1/(1-lam)``, and guarantees that
minibatches keep seeing the old mode regardless of how small the learner's
own old weight has become.
"""

from dataclasses import dataclass, field

import numpy as np

from . import rngs
from .errors import InputError
from .estimators import jackknife_mean
from .mixture import MixtureDensity

__all__ = [
    "ReplayBehavior",
    "importance_weight",
    "weighted_estimate",
    "old_sample_statistics",
    "OldSampleStats",
]


@dataclass(frozen=True)
class ReplayBehavior:
    """Behavior distribution ``(1-lam) q + lam p_old``.

    Collapsing the algebraically equal three-way mixture, the behavior is
    again a two-component mixture with old weight
    ``beta_tilde = lam + (1-lam) beta >= lam``; sampling uses that exact
    two-component form.
    """

    lam: float
    learner: "LearnerParams"  # noqa: F821 - runtime duck-typed, see mixture
    cov: "CovarianceModel"  # noqa: F821
    behavior: MixtureDensity = field(init=False)
    model: MixtureDensity = field(init=False)

    def __post_init__(self):
        lam = float(self.lam)
        if not 0.0 < lam < 1.0:
            raise InputError(f"lam must lie in (0, 1), got {lam}")
        object.__setattr__(self, "lam", lam)
        beta = self.learner.beta
        bt = lam + (1.0 - lam) * beta
        model = MixtureDensity(
            [beta, 1.0 - beta], [self.learner.m_old, self.learner.m_new], self.cov
        )
        behavior = MixtureDensity(
            [bt, 1.0 - bt], [self.learner.m_old, self.learner.m_new], self.cov
        )
        object.__setattr__(self, "model", model)
        object.__setattr__(self, "behavior", behavior)

    @property
    def beta_tilde(self):
        return float(self.behavior.weights[0])

    @property
    def weight_cap(self):
        return 1.0 / (1.0 - self.lam)


def importance_weight(rb, y):
    """Importance ratio ``q(y)/b(y)``, computed in log space.

    Uniformly bounded by ``1/(1-lam)`` for every point.
    """
    w = np.exp(rb.model.log_density(y) - rb.behavior.log_density(y))
    return float(w) if np.ndim(w) == 0 else w


def weighted_estimate(rb, h, n, seed):
    """Unbiased model expectation from behavior samples.

    Averages ``w(y) h(y)`` over ``n`` behavior draws; the result estimates
    ``E_q[h]`` with a 32-batch jackknife standard error.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    points, _ = rb.behavior.sample(n, seed)
    w = importance_weight(rb, points)
    vals = np.asarray(h(points), dtype=np.float64)
    weighted = vals * w if vals.ndim == 1 else vals * w[:, None]
    mean, se = jackknife_mean(weighted)
    if np.ndim(mean) == 0:
        return float(mean), float(se)
    return mean, se


@dataclass(frozen=True)
class OldSampleStats:
    p_none_exact: float
    p_none_emp: float
    chernoff: float
    tail_emp: float
    trials: int
    batch_size: int


def old_sample_statistics(lam, beta, batch_size, trials=100_000, seed=0):
    """Minibatch old-mode visibility under the replay-mixed behavior.

    ``p_none_exact = ((1-lam)(1-beta))^N`` is the probability that a batch
    of size N contains no old-mode draw; the empirical frequency and the
    multiplicative Chernoff tail ``Pr(old count <= lam N / 2) <= exp(-lam N/8)``
    are estimated from simulated latent labels.
    """
    lam, beta = float(lam), float(beta)
    if not 0.0 <= lam < 1.0 or not 0.0 <= beta <= 1.0:
        raise InputError("lam must lie in [0,1) and beta in [0,1]")
    if batch_size < 1 or trials < 1000:
        raise InputError("batch_size must be >= 1 and trials >= 10^3")
    beta_tilde = lam + (1.0 - lam) * beta
    p_none_exact = ((1.0 - lam) * (1.0 - beta)) ** batch_size

    u = rngs.uniform_items(seed, 0, trials, batch_size)
    old_counts = np.sum(u < beta_tilde, axis=1)
    p_none_emp = float(np.mean(old_counts == 0))
    chernoff = float(np.exp(-lam * batch_size / 8.0))
    tail_emp = float(np.mean(old_counts <= 0.5 * lam * batch_size))
    return OldSampleStats(
        p_none_exact=float(p_none_exact),
        p_none_emp=p_none_emp,
        chernoff=chernoff,
        tail_emp=tail_emp,
        trials=trials,
        batch_size=batch_size,
    )
