"""Diagonal Gaussian-mixture density estimation for the start marginal.

The conditional plan alone pins down every pi(x1 | x0); fitting a separate
normalized mixture to the x0 samples completes it to a joint density
p(x0) * pi(x1 | x0). The fit is plain expectation-maximization.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .potential import (
    MixturePotential,
    _log_diag_gauss_mix,
    as_sample_matrix,
    log_pi_cond,
)

VARIANCE_FLOOR = 1e-8  # EM degeneracy guard: clamp per-coordinate variances


@dataclass
class MarginalModel:
    """Normalized diagonal Gaussian mixture fitted to samples of p0.

    weights sum to 1; var_diags are per-coordinate variances (positive).
    variance_clamped is set when any component hit the variance floor during
    fitting. log_likelihoods traces the per-sample average log-likelihood
    across EM iterations (non-decreasing in exact arithmetic).
    """

    weights: np.ndarray
    means: np.ndarray
    var_diags: np.ndarray
    variance_clamped: bool = False
    log_likelihoods: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.var_diags = np.asarray(self.var_diags, dtype=np.float64)
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if np.any(self.var_diags <= 0):
            raise ValueError("variance diagonals must be positive")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_density(self, x) -> float | np.ndarray:
        single = np.asarray(x).ndim == 1
        X = as_sample_matrix(x, self.dim, "x")
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        out = _log_diag_gauss_mix(X, logw, self.means, self.var_diags)
        return float(out[0]) if single else out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(len(self.weights), size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        return self.means[idx] + np.sqrt(self.var_diags[idx]) * noise


def fit_marginal_em(samples, k: int, iters: int, rng: np.random.Generator) -> MarginalModel:
    """Fit a k-component diagonal-covariance Gaussian mixture by EM.

    Means are initialized from k distinct sample rows, variances from the
    (biased) per-coordinate sample variance, weights uniform. Components whose
    variance collapses below the floor are clamped and flagged.
    """
    X = as_sample_matrix(samples, name="samples")
    n, d = X.shape
    if k < 1 or n < k:
        raise ValueError(f"need at least k={k} samples, got {n}")
    if iters < 1:
        raise ValueError("iters must be >= 1")

    means = X[rng.choice(n, size=k, replace=False)].copy()
    # hard-assign each point to its nearest seed so initial variances reflect
    # cluster spread, not the global one (wide shared variances stall EM)
    d2 = ((X[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(d2, axis=1)
    var0 = np.maximum(X.var(axis=0), VARIANCE_FLOOR)
    var = np.tile(var0, (k, 1))
    weights = np.full(k, 1.0 / k)
    for j in range(k):
        members = X[assign == j]
        if members.shape[0] >= 2:
            var[j] = np.maximum(members.var(axis=0), VARIANCE_FLOOR)
            weights[j] = members.shape[0] / n
    weights = weights / weights.sum()
    clamped = False
    trace = np.empty(iters)

    for it in range(iters):
        # E-step in the log domain
        with np.errstate(divide="ignore"):
            logw = np.log(weights)
        log_joint = _component_log_joint(X, logw, means, var)   # (n, k)
        log_norm = logsumexp(log_joint, axis=1)
        trace[it] = float(np.mean(log_norm))
        resp = np.exp(log_joint - log_norm[:, None])            # (n, k)

        # M-step
        nk = resp.sum(axis=0)                                   # (k,)
        nk_safe = np.maximum(nk, 1e-300)
        weights = nk / n
        means = (resp.T @ X) / nk_safe[:, None]
        sq = (resp.T @ (X ** 2)) / nk_safe[:, None] - means ** 2
        if np.any(sq < VARIANCE_FLOOR):
            clamped = True
        var = np.maximum(sq, VARIANCE_FLOOR)

    if clamped:
        warnings.warn("EM variance floor hit; degenerate component clamped", RuntimeWarning)
    return MarginalModel(weights=weights, means=means, var_diags=var,
                         variance_clamped=clamped, log_likelihoods=trace)


def _component_log_joint(X, logw, means, var) -> np.ndarray:
    """(n, k) matrix of log[w_k N(x_n | mu_k, diag var_k)]."""
    from .potential import LOG_2PI

    inv_var = 1.0 / var
    log_det = np.sum(np.log(var), axis=1)
    quad = (
        (X ** 2) @ inv_var.T
        - 2.0 * (X @ (means * inv_var).T)
        + np.sum(means ** 2 * inv_var, axis=1)[None, :]
    )
    return logw[None, :] - 0.5 * (X.shape[1] * LOG_2PI + log_det[None, :] + quad)


def log_plan_density(marg: MarginalModel, pot: MixturePotential, x0, x1) -> float:
    """Joint log-density log p(x0) + log pi(x1 | x0) of the completed plan."""
    return float(marg.log_density(x0)) + float(log_pi_cond(pot, x0, x1))
