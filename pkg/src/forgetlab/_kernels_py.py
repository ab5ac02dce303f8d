"""Pure-NumPy mixture kernels (fallback backend).

All kernels work in whitened coordinates where every component is a
standard normal translated to ``means[k]``.  They are the hot inner loops
of quadrature, Monte Carlo and gradient-flow evaluations; the compiled
``forgetlab._kernels`` module implements the same signatures.
"""

import numpy as np

_LOG_2PI = 1.8378770664093453


def component_logpdfs(points, means):
    """Log densities of standard-normal components at ``points``.

    Parameters
    ----------
    points : ndarray, shape (n, r)
    means : ndarray, shape (K, r)

    Returns
    -------
    ndarray, shape (n, K)
        ``-r/2 log(2 pi) - 0.5 ||x - m_k||^2``.
    """
    points = np.asarray(points, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    r = points.shape[1]
    diff = points[:, None, :] - means[None, :, :]
    sq = np.einsum("nkr,nkr->nk", diff, diff)
    return -0.5 * (r * _LOG_2PI + sq)


def mixture_logpdf(points, means, log_weights):
    """Log mixture density ``log sum_k w_k N(x; m_k, I)`` via log-sum-exp."""
    logs = component_logpdfs(points, means) + np.asarray(log_weights)[None, :]
    top = np.max(logs, axis=1)
    return top + np.log(np.sum(np.exp(logs - top[:, None]), axis=1))


def responsibilities(points, means, log_weights):
    """Posterior component probabilities, shape (n, K); rows sum to one."""
    logs = component_logpdfs(points, means) + np.asarray(log_weights)[None, :]
    top = np.max(logs, axis=1)
    un = np.exp(logs - top[:, None])
    return un / np.sum(un, axis=1)[:, None]
