"""Minibatch training of the mixture potential.

The objective is the sample average of log c(x0) over the source batch minus
the sample average of log v(x1) over the target batch; its population version
differs from the KL divergence between the true and parameterized couplings
only by an additive constant, so gradient descent on it is KL minimization.

Gradients are fully analytic: each term is a log-sum-exp over components, so
its derivative is softmax-weighted, and everything reduces to a handful of
(batch x K) / (K x D) matrix products. Raw parameters are
(log alpha, r, log diag S) in one flat vector.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .potential import (
    MixturePotential,
    _log_diag_gauss_mix_terms,
    as_sample_matrix,
    log_tilde_weights,
    row_lse_softmax,
)
from .rng import make_rng

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteLossError(RuntimeError):
    """Raised when the objective stops being finite (eps/scale misconfiguration)."""


@dataclass(frozen=True)
class SolverConfig:
    """All solver hyperparameters; seed makes every run replayable."""

    epsilon: float
    n_components: int
    learning_rate: float
    batch_size_0: int = 128
    batch_size_1: int = 128
    n_iters: int = 10_000
    seed: int = 0
    init_scale: float = 0.1
    eval_every: int = 1000

    def __post_init__(self):
        if self.epsilon <= 0 or self.learning_rate <= 0 or self.init_scale <= 0:
            raise ValueError("epsilon, learning_rate and init_scale must be > 0")
        for name in ("n_components", "batch_size_0", "batch_size_1", "n_iters", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class TrainReport:
    iteration: int
    loss: float
    wallclock_ms: float
    metrics: dict | None = None


@dataclass
class AdamState:
    """Optimizer state; params is the flat raw-parameter vector."""

    params: np.ndarray
    m: np.ndarray = field(default=None)  # type: ignore[assignment]
    v: np.ndarray = field(default=None)  # type: ignore[assignment]
    step: int = 0

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.m is None:
            self.m = np.zeros_like(self.params)
        if self.v is None:
            self.v = np.zeros_like(self.params)


# flat layout: [log_weights (K), means (K*D, row-major), log_scales (K*D)]


def pack_params(pot: MixturePotential) -> np.ndarray:
    return np.concatenate([pot.log_weights, pot.means.ravel(), pot.log_scales.ravel()])


def unpack_params(vec: np.ndarray, dim: int, n_components: int,
                  epsilon: float) -> MixturePotential:
    k, d = n_components, dim
    if vec.shape != (k * (1 + 2 * d),):
        raise ValueError(f"parameter vector has wrong length {vec.shape}")
    return MixturePotential(
        dim=d, n_components=k, epsilon=epsilon,
        log_weights=vec[:k],
        means=vec[k:k + k * d].reshape(k, d),
        log_scales=vec[k + k * d:].reshape(k, d),
    )


def init_params(config: SolverConfig, target_samples,
                rng: np.random.Generator) -> MixturePotential:
    """Uniform log-weights, means drawn (with replacement) from the target
    samples, constant log-scales at log(init_scale)."""
    X1 = as_sample_matrix(target_samples, name="target_samples")
    k, d = config.n_components, X1.shape[1]
    idx = rng.integers(0, X1.shape[0], size=k)
    return MixturePotential(
        dim=d, n_components=k, epsilon=config.epsilon,
        log_weights=np.full(k, -np.log(k)),
        means=X1[idx].copy(),
        log_scales=np.full((k, d), np.log(config.init_scale)),
    )


def _loss_terms(pot: MixturePotential, batch0: np.ndarray, batch1: np.ndarray):
    """Shared forward pass: softmax weights and per-sample log terms.

    IEEE warnings are suppressed: diverged parameters produce non-finite
    values that the callers turn into NonFiniteLossError.
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        ltw = log_tilde_weights(pot, batch0)              # (B0, K)
        log_c, u = row_lse_softmax(ltw)
        comp = _log_diag_gauss_mix_terms(batch1, pot.log_weights, pot.means,
                                         pot.epsilon * pot.scales)
        log_v, w = row_lse_softmax(comp)                  # (B1,), (B1, K)
    return log_c, u, log_v, w


def empirical_loss(pot: MixturePotential, batch0, batch1) -> float:
    """mean_n log c(x0_n) - mean_m log v(x1_m)."""
    X0 = as_sample_matrix(batch0, pot.dim, "batch0")
    X1 = as_sample_matrix(batch1, pot.dim, "batch1")
    log_c, _, log_v, _ = _loss_terms(pot, X0, X1)
    loss = float(np.mean(log_c) - np.mean(log_v))
    if not np.isfinite(loss):
        raise NonFiniteLossError(
            "empirical loss is not finite; increase epsilon or decrease the "
            "learning rate / init_scale"
        )
    return loss


def loss_gradient(pot: MixturePotential, batch0, batch1) -> np.ndarray:
    """Analytic gradient of the empirical loss w.r.t. the flat raw parameters."""
    _, grad = loss_and_gradient(pot, batch0, batch1)
    return grad


def loss_and_gradient(pot: MixturePotential, batch0, batch1) -> tuple[float, np.ndarray]:
    X0 = as_sample_matrix(batch0, pot.dim, "batch0")
    X1 = as_sample_matrix(batch1, pot.dim, "batch1")
    n0, n1 = X0.shape[0], X1.shape[0]
    s = pot.scales
    eps = pot.epsilon
    r = pot.means

    log_c, u, log_v, w = _loss_terms(pot, X0, X1)
    loss = float(np.mean(log_c) - np.mean(log_v))
    if not np.isfinite(loss):
        raise NonFiniteLossError(
            "empirical loss is not finite; increase epsilon or decrease the "
            "learning rate / init_scale"
        )

    # log c term: d log c / d t_k = u_k with t_k affine in (log alpha, r, log s)
    g_lw0 = u.mean(axis=0)
    g_mu0 = (u.T @ X0) / (n0 * eps)
    g_ls0 = s * (u.T @ (X0 ** 2)) / (n0 * 2.0 * eps)

    # log v term: softmax-weighted Gaussian score w.r.t. each raw parameter
    wsum = w.sum(axis=0)                                  # (K,)
    wx = w.T @ X1                                         # (K, D)
    wxx = w.T @ (X1 ** 2)
    g_lw1 = wsum / n1
    g_mu1 = (wx - r * wsum[:, None]) / (n1 * eps * s)
    sq = wxx - 2.0 * r * wx + r ** 2 * wsum[:, None]      # sum_m w (x - r)^2
    g_ls1 = (-0.5 * wsum[:, None] + sq / (2.0 * eps * s)) / n1

    grad = np.concatenate([
        g_lw0 - g_lw1,
        (g_mu0 - g_mu1).ravel(),
        (g_ls0 - g_ls1).ravel(),
    ])
    return loss, grad


def adam_step(state: AdamState, grad: np.ndarray, lr: float) -> AdamState:
    """One bias-corrected Adam update; returns a fresh state."""
    t = state.step + 1
    m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * grad ** 2
    m_hat = m / (1.0 - ADAM_BETA1 ** t)
    v_hat = v / (1.0 - ADAM_BETA2 ** t)
    params = state.params - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return AdamState(params=params, m=m, v=v, step=t)


def train(config: SolverConfig, X0, X1, callback=None) -> tuple[MixturePotential, list[TrainReport]]:
    """Run the full minibatch loop; deterministic given config.seed.

    Minibatches are drawn uniformly with replacement each step. A report is
    recorded at the first step, every eval_every steps, and at the last step;
    callback(iteration, potential, report), when given, fires at those points.
    """
    X0 = as_sample_matrix(X0, name="X0")
    X1 = as_sample_matrix(X1, pot_dim := X0.shape[1], "X1")
    rng = make_rng(config.seed)
    pot = init_params(config, X1, rng)
    state = AdamState(params=pack_params(pot))
    reports: list[TrainReport] = []
    t_start = time.perf_counter()

    for i in range(config.n_iters):
        idx0 = rng.integers(0, X0.shape[0], size=config.batch_size_0)
        idx1 = rng.integers(0, X1.shape[0], size=config.batch_size_1)
        try:
            loss, grad = loss_and_gradient(pot, X0[idx0], X1[idx1])
        except NonFiniteLossError as err:
            raise NonFiniteLossError(f"iteration {i + 1}: {err}") from None
        state = adam_step(state, grad, config.learning_rate)
        try:
            pot = unpack_params(state.params, pot_dim, config.n_components, config.epsilon)
        except ValueError:
            raise NonFiniteLossError(
                f"iteration {i + 1}: parameters became non-finite; increase "
                "epsilon or decrease the learning rate"
            ) from None

        it = i + 1
        if it == 1 or it % config.eval_every == 0 or it == config.n_iters:
            report = TrainReport(
                iteration=it, loss=loss,
                wallclock_ms=(time.perf_counter() - t_start) * 1e3,
            )
            reports.append(report)
            if callback is not None:
                callback(it, pot, report)

    return pot, reports


def reports_to_csv(reports: list[TrainReport]) -> str:
    lines = ["iter,loss,wallclock_ms"]
    for rep in reports:
        lines.append(f"{rep.iteration},{rep.loss:.17g},{rep.wallclock_ms:.3f}")
    return "\n".join(lines) + "\n"
