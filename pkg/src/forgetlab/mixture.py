"""Equal-covariance Gaussian components and mixtures.

Every density in the package is a mixture of Gaussians sharing one positive
definite covariance.  Separation and overlap are therefore controlled purely
by the means and weights, and likelihood ratios depend on a point only
through its projection onto the span of mean differences in whitened
coordinates -- the reduction that makes exact low-dimensional quadrature
possible (see :class:`ProjectionBasis` and forgetlab.estimators).
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import ndtr

from . import backend, rngs
from .errors import DegeneratePartitionError, InputError, NumericError

__all__ = [
    "CovarianceModel",
    "MixtureDensity",
    "LearnerParams",
    "DisjointMixtureSpec",
    "ProjectionBasis",
    "BayesPartition",
    "separation",
    "bhattacharyya_equal_cov",
    "bayes_partition_stats",
    "LOGIT_CLIP",
    "BETA_COLLAPSE_TOL",
]

# Logits are clipped to this range inside flows; sigmoid saturates beyond it.
LOGIT_CLIP = 30.0
# Mixture weights outside (tol, 1-tol) are reported as numerically collapsed.
BETA_COLLAPSE_TOL = 1e-13

_LOG_2PI = np.log(2.0 * np.pi)


def _as_vector(y, dim, name="y"):
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (dim,):
        raise InputError(f"{name} must have shape ({dim},), got {y.shape}")
    return y


@dataclass(frozen=True)
class CovarianceModel:
    """Shared positive-definite covariance with a cached Cholesky factor.

    Parameters
    ----------
    sigma : ndarray, shape (d, d)
        Symmetric positive definite matrix.  Symmetry is required within
        1e-12 relative; a failed Cholesky factorization is a construction
        error (no silent repair).
    """

    sigma: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise InputError(f"sigma must be square, got shape {sigma.shape}")
        scale = max(1.0, float(np.max(np.abs(sigma))))
        if np.max(np.abs(sigma - sigma.T)) > 1e-12 * scale:
            raise InputError("sigma is not symmetric within 1e-12 relative")
        sigma = 0.5 * (sigma + sigma.T)
        try:
            chol = cholesky(sigma, lower=True)
        except np.linalg.LinAlgError as exc:
            raise InputError("sigma is not positive definite") from exc
        if np.any(np.diag(chol) <= 0):
            raise InputError("sigma is not positive definite")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "chol", chol)

    @property
    def dim(self):
        return self.sigma.shape[0]

    @cached_property
    def log_det(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    @cached_property
    def inv_operator_norm(self):
        """``||Sigma^{-1}||_2 = 1 / lambda_min(Sigma)`` (exact, small d)."""
        return 1.0 / float(np.min(np.linalg.eigvalsh(self.sigma)))

    def whiten(self, points, center=None):
        """Map points ``y`` to ``L^{-1}(y - center)``; accepts (d,) or (n, d)."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if pts.shape[1] != self.dim:
            raise InputError(f"points must have {self.dim} columns, got {pts.shape[1]}")
        if center is not None:
            pts = pts - np.asarray(center, dtype=np.float64)
        return solve_triangular(self.chol, pts.T, lower=True).T

    def solve(self, v):
        """``Sigma^{-1} v`` via two triangular solves."""
        z = solve_triangular(self.chol, np.asarray(v, dtype=np.float64), lower=True)
        return solve_triangular(self.chol.T, z, lower=False)


def separation(cov, mu1, mu2):
    """Mahalanobis distance ``||mu1 - mu2||_{Sigma^{-1}}``.

    Computed through a triangular solve against the cached Cholesky factor;
    zero exactly when the means coincide.
    """
    mu1 = _as_vector(mu1, cov.dim, "mu1")
    mu2 = _as_vector(mu2, cov.dim, "mu2")
    z = solve_triangular(cov.chol, mu1 - mu2, lower=True)
    return float(np.sqrt(z @ z))


def bhattacharyya_equal_cov(cov, mu1, mu2):
    """Overlap ``BC = exp(-delta^2 / 8)`` of two equal-covariance Gaussians."""
    delta = separation(cov, mu1, mu2)
    return float(np.exp(-0.125 * delta * delta))


@dataclass(frozen=True)
class MixtureDensity:
    """Gaussian mixture with shared covariance.

    Parameters
    ----------
    weights : ndarray, shape (K,)
        Nonnegative, summing to one within 1e-12.
    means : ndarray, shape (K, d)
    cov : CovarianceModel
    """

    weights: np.ndarray
    means: np.ndarray
    cov: CovarianceModel

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        if w.ndim != 1 or len(w) < 1:
            raise InputError("weights must be a non-empty vector")
        if np.any(w < 0) or abs(float(np.sum(w)) - 1.0) > 1e-12:
            raise InputError("weights must be nonnegative and sum to 1 within 1e-12")
        if means.shape != (len(w), self.cov.dim):
            raise InputError(
                f"means must have shape ({len(w)}, {self.cov.dim}), got {means.shape}"
            )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)

    @property
    def n_components(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.cov.dim

    @cached_property
    def _log_weights(self):
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    @cached_property
    def _whitened_means(self):
        return self.cov.whiten(self.means)

    def log_density(self, y):
        """Log mixture density computed via log-sum-exp.

        Finite for all finite ``y``.  Accepts a single point (d,) or a batch
        (n, d); returns a float or an (n,) array accordingly.
        """
        single = np.asarray(y).ndim == 1
        z = self.cov.whiten(y)
        out = (
            backend.mixture_logpdf(z, self._whitened_means, self._log_weights)
            - 0.5 * self.cov.log_det
        )
        return float(out[0]) if single else out

    def density(self, y):
        return np.exp(self.log_density(y))

    def responsibilities(self, y):
        """Posterior component probabilities ``w_k N(y; mu_k) / mix(y)``.

        Entries lie in [0, 1] and sum to one within 1e-12 for every finite y.
        """
        single = np.asarray(y).ndim == 1
        z = self.cov.whiten(y)
        out = backend.responsibilities(z, self._whitened_means, self._log_weights)
        return out[0] if single else out

    def sample(self, n, seed):
        """Draw ``n`` labeled points with the counter-based generator.

        Returns ``(points, labels)`` where labels index the generating
        component.  Output is a pure function of ``(seed, sample index)``:
        identical for any worker partition of the index range.
        """
        if n < 1:
            raise InputError("n must be >= 1")
        points, labels = self.sample_block(seed, 0, n)
        return points, labels

    def sample_block(self, seed, start, count):
        """Samples for index range ``[start, start+count)`` (worker splitting)."""
        d = self.dim
        u = rngs.uniform_items(seed, start, count, d + 1)
        edges = np.cumsum(self.weights)
        labels = np.searchsorted(edges, u[:, 0], side="right")
        labels = np.minimum(labels, self.n_components - 1)
        from scipy.special import ndtri

        z = ndtri(np.clip(u[:, 1:], 1e-17, 1.0 - 1e-17))
        points = self.means[labels] + z @ self.cov.chol.T
        return points, labels

    def quadrature_mass(self, quad_order=200):
        """Total mass by quadrature in reduced coordinates (should be 1)."""
        from .estimators import ReducedSpace

        space = ReducedSpace(self.cov, self.means)
        total = 0.0
        for j in range(self.n_components):
            nodes, logw = space.node_grid(j, quad_order)
            total += self.weights[j] * float(np.sum(np.exp(logw)))
        return total


@dataclass(frozen=True)
class LearnerParams:
    """Learner state: logit of the old-mode weight plus both component means.

    ``beta = sigmoid(logit)`` stays strictly inside (0, 1); the logit/beta
    conversion round-trips within 1e-12 for logits in [-30, 30].
    """

    logit: float
    m_old: np.ndarray
    m_new: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "logit", float(self.logit))
        object.__setattr__(self, "m_old", np.atleast_1d(np.asarray(self.m_old, dtype=np.float64)))
        object.__setattr__(self, "m_new", np.atleast_1d(np.asarray(self.m_new, dtype=np.float64)))
        if self.m_old.shape != self.m_new.shape:
            raise InputError("m_old and m_new must have the same shape")
        if not np.isfinite(self.logit):
            raise NumericError("logit must be finite")

    @property
    def beta(self):
        return float(1.0 / (1.0 + np.exp(-self.logit)))

    @property
    def collapsed(self):
        """True when beta has saturated numerically (sigmoid limits)."""
        b = self.beta
        return b <= BETA_COLLAPSE_TOL or b >= 1.0 - BETA_COLLAPSE_TOL

    @staticmethod
    def logit_of(beta):
        beta = float(beta)
        if not 0.0 < beta < 1.0:
            raise InputError(f"beta must lie in (0, 1), got {beta}")
        return float(np.log(beta) - np.log1p(-beta))

    @classmethod
    def from_beta(cls, beta, m_old, m_new):
        return cls(cls.logit_of(beta), m_old, m_new)


@dataclass(frozen=True)
class DisjointMixtureSpec:
    """Two-mode disjoint-support instance.

    ``kl_oo`` and ``kl_nn`` are the within-mode divergences, interpreted in
    the direction of whichever decomposition consumes them; rewards are the
    per-region levels of a two-level step reward.
    """

    alpha: float
    beta: float
    kl_oo: float = 0.0
    kl_nn: float = 0.0
    reward_old: float = 0.0
    reward_new: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{name} must lie in [0, 1], got {v}")
            object.__setattr__(self, name, v)
        for name in ("kl_oo", "kl_nn"):
            v = float(getattr(self, name))
            if v < 0:
                raise InputError(f"{name} must be nonnegative, got {v}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class ProjectionBasis:
    """Orthonormal rows spanning whitened mean differences.

    Expectations of any function that depends on a point only through
    likelihood ratios reduce to integrals over these ``r`` coordinates; the
    orthogonal complement integrates out analytically.
    """

    basis: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        basis = np.atleast_2d(np.asarray(self.basis, dtype=np.float64))
        center = np.atleast_1d(np.asarray(self.center, dtype=np.float64))
        gram = basis @ basis.T
        if np.max(np.abs(gram - np.eye(basis.shape[0]))) > 1e-10:
            raise InputError("basis rows must be orthonormal within 1e-10")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "center", center)

    @property
    def rank(self):
        return self.basis.shape[0]

    @classmethod
    def from_means(cls, cov, means):
        """Basis for the whitened span of ``means[k] - means[0]``.

        Rank is at most ``len(means) - 1`` (and at most d); a single
        direction is kept for coincident means so quadrature stays valid.
        """
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        center = means[0]
        a = cov.whiten(means, center=center)
        _, svals, vt = np.linalg.svd(a, full_matrices=False)
        tol = 1e-12 * max(1.0, float(svals.max()) if len(svals) else 1.0)
        r = max(1, int(np.sum(svals > tol)))
        r = min(r, cov.dim)
        basis = vt[:r] if vt.shape[0] >= r else np.eye(cov.dim)[:r]
        return cls(basis, center)

    def reduce(self, cov, vectors):
        """Reduced coordinates of full-space mean vectors."""
        return cov.whiten(np.atleast_2d(vectors), center=self.center) @ self.basis.T

    def reconstruction_error(self, cov, vector):
        """Norm lost when projecting a whitened mean difference onto the span."""
        z = cov.whiten(np.asarray(vector)[None, :], center=self.center)[0]
        residual = z - self.basis.T @ (self.basis @ z)
        return float(np.linalg.norm(residual))


@dataclass(frozen=True)
class BayesPartition:
    """Bayes halfspace statistics between two equal-covariance modes."""

    gamma: float
    kappa: float
    direction: np.ndarray  # Sigma^{-1} (mu_n - mu_o)
    midpoint: np.ndarray
    trunc_moment: np.ndarray
    delta: float

    def classify(self, y):
        """``new_region`` where ``(mu_n-mu_o)^T Sigma^{-1}(y - midpoint) >= 0``."""
        pts = np.atleast_2d(np.asarray(y, dtype=np.float64))
        score = (pts - self.midpoint) @ self.direction
        labels = np.where(score >= 0.0, "new_region", "old_region")
        return labels[0] if np.asarray(y).ndim == 1 else labels


def bayes_partition_stats(mu_o, mu_n, cov):
    """Mass, contrast and truncated score moment of the Bayes halfspace.

    Returns a :class:`BayesPartition` with

    - ``gamma = Phi(-delta/2)``: old-mode mass falling in the new region,
    - ``kappa = 1 - 2 gamma``,
    - ``trunc_moment = (phi_pdf(delta/2)/delta) Sigma^{-1}(mu_n - mu_o)``,
      the old-component score restricted to the new region.

    ``phi_pdf`` denotes the standard normal density (the logit symbol is
    unrelated).
    """
    mu_o = _as_vector(mu_o, cov.dim, "mu_o")
    mu_n = _as_vector(mu_n, cov.dim, "mu_n")
    delta = separation(cov, mu_o, mu_n)
    if delta == 0.0:
        raise DegeneratePartitionError("mu_o and mu_n coincide; partition undefined")
    gamma = float(ndtr(-0.5 * delta))
    kappa = 1.0 - 2.0 * gamma
    direction = cov.solve(mu_n - mu_o)
    midpoint = 0.5 * (mu_o + mu_n)
    phi_pdf = np.exp(-0.125 * delta * delta) / np.sqrt(2.0 * np.pi)
    trunc_moment = (phi_pdf / delta) * direction
    return BayesPartition(gamma, kappa, direction, midpoint, trunc_moment, delta)
