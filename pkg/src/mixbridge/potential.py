"""Gaussian-mixture potential and closed-form conditional plans.

The learnable object is an unnormalized Gaussian mixture

    v(x1) = sum_k alpha_k * N(x1 | r_k, eps * S_k),

with diagonal positive S_k. For the entropic coupling with quadratic cost,
the conditional plan pi(x1 | x0) proportional to exp(<x0, x1>/eps) * v(x1)
is again a Gaussian mixture with data-dependent weights and shifted means,
so normalization constants, densities, moments and samples are all exact.

All mixture arithmetic is done in the log domain (max-shifted log-sum-exp);
raw exponentials overflow for small eps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

LOG_2PI = float(np.log(2.0 * np.pi))

CHECKPOINT_MAGIC = "mixbridge-potential-v1"


def as_sample_matrix(x, dim: int | None = None, name: str = "samples") -> np.ndarray:
    """Validate and return an (N, D) float64 sample matrix.

    Accepts anything array-like; a single D-vector is promoted to (1, D).
    Rejects non-finite entries and dimension mismatches.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name}: expected an (N, D) matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entries")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"{name}: dimension {arr.shape[1]} does not match expected {dim}")
    return arr


def _as_vector(x, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != (dim,):
        raise ValueError(f"{name}: expected shape ({dim},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entries")
    return arr


@dataclass(frozen=True)
class MixturePotential:
    """Parameters of the mixture potential, stored in optimizer-facing form.

    Attributes
    ----------
    dim : ambient dimension D
    n_components : number of mixture components K
    epsilon : volatility / entropic regularization, > 0
    log_weights : (K,) log alpha_k; the mixture is unnormalized, so there is
        no constraint on their sum
    means : (K, D) component centers r_k
    log_scales : (K, D) log of the diagonal of S_k
    """

    dim: int
    n_components: int
    epsilon: float
    log_weights: np.ndarray
    means: np.ndarray
    log_scales: np.ndarray

    def __post_init__(self):
        if self.dim < 1 or self.n_components < 1:
            raise ValueError("dim and n_components must be >= 1")
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        k, d = self.n_components, self.dim
        lw = np.asarray(self.log_weights, dtype=np.float64).reshape(k)
        mu = np.asarray(self.means, dtype=np.float64).reshape(k, d)
        ls = np.asarray(self.log_scales, dtype=np.float64).reshape(k, d)
        for name, arr in (("log_weights", lw), ("means", mu), ("log_scales", ls)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite entries")
        object.__setattr__(self, "log_weights", lw)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "log_scales", ls)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def scales(self) -> np.ndarray:
        """Diagonals of S_k, shape (K, D); strictly positive.

        Diverged parameters may overflow to inf here; downstream finiteness
        checks turn that into an actionable error, so no warning is raised.
        """
        with np.errstate(over="ignore"):
            return np.exp(self.log_scales)


@dataclass(frozen=True)
class ConditionalMixture:
    """The Gaussian mixture pi(x1 | x0) for one fixed start point x0.

    log_tilde_weights are the unnormalized component log-weights
    log alpha_k + (x0^T S_k x0 + 2 r_k^T x0) / (2 eps); log_norm is their
    log-sum-exp, i.e. the log normalization constant log c(x0).
    """

    log_tilde_weights: np.ndarray
    cond_means: np.ndarray
    cov_diags: np.ndarray
    log_norm: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "log_norm", float(logsumexp(self.log_tilde_weights)))

    @property
    def normalized_weights(self) -> np.ndarray:
        return np.exp(self.log_tilde_weights - self.log_norm)

    def mean(self) -> np.ndarray:
        """Exact mixture mean."""
        w = self.normalized_weights
        return np.sum(w[:, None] * self.cond_means, axis=0)

    def cov(self) -> np.ndarray:
        """Exact mixture covariance (within-component + between-means scatter)."""
        w = self.normalized_weights
        m = self.mean()
        centered = self.cond_means - m[None, :]
        cov = np.einsum("k,ki,kj->ij", w, centered, centered)
        cov[np.diag_indices_from(cov)] += np.sum(w[:, None] * self.cov_diags, axis=0)
        return cov


# ---------------------------------------------------------------------------
# log-domain mixture kernels (batched; all heavy lifting happens here)


def row_lse(logits: np.ndarray) -> np.ndarray:
    """Max-shifted log-sum-exp along axis 1 (lean inner-loop variant)."""
    m = np.max(logits, axis=1)
    return m + np.log(np.sum(np.exp(logits - m[:, None]), axis=1))


def row_lse_softmax(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(log-sum-exp, softmax) along axis 1 sharing one exponentiation."""
    m = np.max(logits, axis=1, keepdims=True)
    e = np.exp(logits - m)
    tot = np.sum(e, axis=1, keepdims=True)
    return (m + np.log(tot)).ravel(), e / tot


def _log_diag_gauss_mix_terms(X: np.ndarray, log_weights: np.ndarray,
                              means: np.ndarray, var_diags: np.ndarray) -> np.ndarray:
    """(N, K) matrix of log[w_k N(x | mu_k, diag var_k)].

    The squared Mahalanobis term is expanded into three matrix products so no
    (N, K, D) intermediate is formed.
    """
    inv_var = 1.0 / var_diags                                    # (K, D)
    log_det = np.sum(np.log(var_diags), axis=1)                  # (K,)
    const = log_weights - 0.5 * (X.shape[1] * LOG_2PI + log_det)
    quad = (
        (X ** 2) @ inv_var.T
        - 2.0 * (X @ (means * inv_var).T)
        + np.sum(means ** 2 * inv_var, axis=1)[None, :]
    )                                                            # (N, K)
    return const[None, :] - 0.5 * quad


def _log_diag_gauss_mix(X: np.ndarray, log_weights: np.ndarray, means: np.ndarray,
                        var_diags: np.ndarray) -> np.ndarray:
    """log sum_k w_k N(x | mu_k, diag(var_k)) for every row of X, shape (N,)."""
    return row_lse(_log_diag_gauss_mix_terms(X, log_weights, means, var_diags))


def log_tilde_weights(pot: MixturePotential, X0: np.ndarray) -> np.ndarray:
    """Unnormalized conditional log-weights for each start point; shape (N, K).

    Entry (n, k) is log alpha_k + (x0^T S_k x0 + 2 r_k^T x0) / (2 eps),
    computed without ever exponentiating.
    """
    s = pot.scales
    quad = (X0 ** 2) @ s.T + 2.0 * (X0 @ pot.means.T)            # (N, K)
    return pot.log_weights[None, :] + quad / (2.0 * pot.epsilon)


def log_v(pot: MixturePotential, x1) -> float | np.ndarray:
    """Log of the mixture potential v at x1.

    x1 may be a single D-vector (returns a scalar) or an (N, D) matrix
    (returns (N,)). Finite for any finite input thanks to log-sum-exp.
    """
    single = np.asarray(x1).ndim == 1
    X = as_sample_matrix(x1, pot.dim, "x1")
    out = _log_diag_gauss_mix(X, pot.log_weights, pot.means, pot.epsilon * pot.scales)
    return float(out[0]) if single else out


def log_c(pot: MixturePotential, x0) -> float | np.ndarray:
    """Log normalization constant log c(x0) of the conditional plan at x0.

    Equals the log-sum-exp of the unnormalized conditional log-weights, and
    also log of the integral of exp(<x0, x1>/eps) v(x1) over x1.
    """
    single = np.asarray(x0).ndim == 1
    X = as_sample_matrix(x0, pot.dim, "x0")
    out = row_lse(log_tilde_weights(pot, X))
    return float(out[0]) if single else out


def conditional_plan(pot: MixturePotential, x0) -> ConditionalMixture:
    """Closed-form conditional mixture pi(. | x0) for a single start point."""
    x0 = _as_vector(x0, pot.dim, "x0")
    ltw = log_tilde_weights(pot, x0[None, :])[0]
    s = pot.scales
    return ConditionalMixture(
        log_tilde_weights=ltw,
        cond_means=pot.means + s * x0[None, :],
        cov_diags=pot.epsilon * s,
    )


def log_pi_cond(pot: MixturePotential, x0, x1) -> float | np.ndarray:
    """Normalized conditional log-density log pi(x1 | x0).

    x0 is a single D-vector; x1 may be a D-vector or an (N, D) batch.
    """
    x0 = _as_vector(x0, pot.dim, "x0")
    single = np.asarray(x1).ndim == 1
    X1 = as_sample_matrix(x1, pot.dim, "x1")
    cond = conditional_plan(pot, x0)
    out = (
        _log_diag_gauss_mix(X1, cond.log_tilde_weights, cond.cond_means, cond.cov_diags)
        - cond.log_norm
    )
    return float(out[0]) if single else out


def log_pi_cond_pairs(pot: MixturePotential, X0, X1, chunk: int = 2048) -> np.ndarray:
    """Row-wise conditional log-density log pi(x1_n | x0_n), shape (N,).

    Chunked over rows; the conditional means depend on x0, so each chunk
    materializes a (chunk, K, D) block.
    """
    X0 = as_sample_matrix(X0, pot.dim, "X0")
    X1 = as_sample_matrix(X1, pot.dim, "X1")
    if X0.shape[0] != X1.shape[0]:
        raise ValueError("X0 and X1 must have the same number of rows")
    s = pot.scales
    var = pot.epsilon * s                                        # (K, D)
    log_det = np.sum(np.log(var), axis=1)
    out = np.empty(X0.shape[0])
    for lo in range(0, X0.shape[0], chunk):
        hi = min(lo + chunk, X0.shape[0])
        ltw = log_tilde_weights(pot, X0[lo:hi])                  # (n, K)
        cmeans = pot.means[None, :, :] + s[None, :, :] * X0[lo:hi, None, :]
        diff = X1[lo:hi, None, :] - cmeans                       # (n, K, D)
        quad = np.sum(diff ** 2 / var[None, :, :], axis=2)
        comp = ltw - 0.5 * (pot.dim * LOG_2PI + log_det[None, :] + quad)
        out[lo:hi] = logsumexp(comp, axis=1) - logsumexp(ltw, axis=1)
    return out


def sample_conditional(pot: MixturePotential, x0, n: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Draw n samples from pi(. | x0); returns an (n, D) matrix.

    Component indices come from the normalized conditional weights, then a
    diagonal Gaussian draw per sample. Deterministic given the rng state.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cond = conditional_plan(pot, x0)
    idx = rng.choice(pot.n_components, size=n, p=cond.normalized_weights)
    noise = rng.standard_normal((n, pot.dim))
    return cond.cond_means[idx] + np.sqrt(cond.cov_diags[idx]) * noise


def sample_conditional_rows(pot: MixturePotential, X0,
                            rng: np.random.Generator) -> np.ndarray:
    """One conditional draw x1 ~ pi(. | x0) per row of X0; shape (N, D).

    Component choice is an inverse-CDF categorical per row, so the draw order
    is fixed and the output is reproducible from the rng state alone.
    """
    X0 = as_sample_matrix(X0, pot.dim, "X0")
    ltw = log_tilde_weights(pot, X0)
    w = np.exp(ltw - logsumexp(ltw, axis=1, keepdims=True))
    cum = np.cumsum(w, axis=1)
    cum[:, -1] = 1.0
    idx = np.sum(rng.random((X0.shape[0], 1)) > cum, axis=1)
    means = pot.means[idx] + pot.scales[idx] * X0
    return means + np.sqrt(pot.epsilon * pot.scales[idx]) * rng.standard_normal(X0.shape)


def conditional_mean(pot: MixturePotential, X0) -> np.ndarray:
    """Exact conditional means E[x1 | x0] for each row of X0; shape (N, D)."""
    X0 = as_sample_matrix(X0, pot.dim, "X0")
    ltw = log_tilde_weights(pot, X0)
    w = np.exp(ltw - logsumexp(ltw, axis=1, keepdims=True))      # (N, K)
    return w @ pot.means + (w @ pot.scales) * X0


def conditional_moments(pot: MixturePotential, X0) -> tuple[np.ndarray, np.ndarray]:
    """Exact conditional means (N, D) and covariances (N, D, D) for each x0."""
    X0 = as_sample_matrix(X0, pot.dim, "X0")
    n, d = X0.shape
    ltw = log_tilde_weights(pot, X0)
    w = np.exp(ltw - logsumexp(ltw, axis=1, keepdims=True))      # (N, K)
    s = pot.scales
    cmeans = pot.means[None, :, :] + s[None, :, :] * X0[:, None, :]   # (N, K, D)
    mean = np.einsum("nk,nkd->nd", w, cmeans)
    centered = cmeans - mean[:, None, :]
    cov = np.einsum("nk,nki,nkj->nij", w, centered, centered)
    within = (w @ s) * pot.epsilon                               # (N, D)
    ii = np.arange(d)
    cov[:, ii, ii] += within
    return mean, cov


# ---------------------------------------------------------------------------
# checkpoint format: JSON, float64 written with 17 significant digits


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _json_vec(v: np.ndarray) -> str:
    return "[" + ", ".join(_fmt(x) for x in v) + "]"


def _json_mat(m: np.ndarray) -> str:
    return "[" + ",\n  ".join(_json_vec(row) for row in m) + "]"


def potential_to_json(pot: MixturePotential) -> str:
    """Serialize to the checkpoint JSON text (bit-faithful float round-trip).

    Assembled by hand so every float64 is emitted as a JSON number with 17
    significant digits.
    """
    return (
        "{\n"
        f' "magic": "{CHECKPOINT_MAGIC}",\n'
        f' "dim": {pot.dim},\n'
        f' "n_components": {pot.n_components},\n'
        f' "epsilon": {_fmt(pot.epsilon)},\n'
        f' "log_weights": {_json_vec(pot.log_weights)},\n'
        f' "means": {_json_mat(pot.means)},\n'
        f' "log_scales": {_json_mat(pot.log_scales)}\n'
        "}\n"
    )


def potential_from_json(text: str) -> MixturePotential:
    payload = json.loads(text)
    if payload.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError("not a mixbridge potential checkpoint")
    return MixturePotential(
        dim=int(payload["dim"]),
        n_components=int(payload["n_components"]),
        epsilon=float(payload["epsilon"]),
        log_weights=np.array([float(v) for v in payload["log_weights"]]),
        means=np.array([[float(v) for v in row] for row in payload["means"]]),
        log_scales=np.array([[float(v) for v in row] for row in payload["log_scales"]]),
    )


def save_checkpoint(pot: MixturePotential, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(potential_to_json(pot))


def load_checkpoint(path) -> MixturePotential:
    with open(path, "r", encoding="ascii") as fh:
        return potential_from_json(fh.read())
