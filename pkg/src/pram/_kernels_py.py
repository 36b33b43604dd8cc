"""Pure-numpy accumulation of weighted GLM-form estimating equations.

Arrays: ``X`` (K, n, d) design per sensitive level, ``r`` (K, n) response
per level, ``W`` (n, K) record weights over levels, ``beta`` (d,).
``link`` is 0 for identity and 1 for logit. Scores and Jacobians are
averaged over the n records.
"""

import numpy as np
from scipy.special import expit


def _mean(eta, link):
    if link == 1:
        mu = expit(eta)
        return mu, mu * (1.0 - mu)
    return eta, np.ones_like(eta)


def glm_score_jac(X, r, W, beta, link, want_jac=True):
    n = X.shape[1]
    mu, dmu = _mean(X @ beta, link)
    Wt = W.T
    g = np.einsum("kn,knd->d", Wt * (r - mu), X) / n
    if not want_jac:
        return g, np.zeros((X.shape[2], X.shape[2]))
    J = -np.einsum("kn,kna,knb->ab", Wt * dmu, X, X) / n
    return g, J


def glm_terms(X, r, W, beta, link):
    mu, _ = _mean(X @ beta, link)
    return np.einsum("kn,knd->nd", W.T * (r - mu), X)
