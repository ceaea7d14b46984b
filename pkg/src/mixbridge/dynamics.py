"""The bridge process attached to a mixture potential.

The coupling defined by the potential is the endpoint law of a diffusion
dX_t = g(X_t, t) dt + sqrt(eps) dW_t whose drift is available in closed form:
integrating the heat kernel against the reweighted potential gives, per
component, a Gaussian integral with precision

    A_k(t) = t / (eps (1 - t)) I + S_k^{-1} / eps

and linear term h_k(x, t) = x / (eps (1 - t)) + S_k^{-1} r_k / eps, and the
quadratic form (1/2) h^T A^{-1} h enters the component log-weight with a
POSITIVE sign (it comes out of the Gaussian integral identity). Taking
eps * grad_x log of the resulting mixture yields

    g(x, t) = [ sum_k w_k(x, t) * m_k(x, t) - x ] / (1 - t),

where m_k = A_k^{-1} h_k has coordinates (s_ki x_i + (1-t) r_ki) / d_ki with
d_ki = 1 + t (s_ki - 1), and w_k are softmax weights of the component
log-terms. At t = 0 this reduces to (conditional mean at x) - x.

Trajectories come either from Euler-Maruyama stepping of the SDE or, exactly,
by drawing the endpoint from the conditional mixture and filling the interior
with Brownian-bridge draws.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .potential import (
    MixturePotential,
    as_sample_matrix,
    log_tilde_weights,
    sample_conditional_rows,
)
from .rng import make_rng

TIME_GUARD = 1e-6  # the drift has a 1/(1-t) factor; reject t >= 1 - TIME_GUARD

TRAJECTORY_MAGIC = b"MXBTRAJ1"


@dataclass(frozen=True)
class TrajectoryBatch:
    """Time grid plus per-particle states from a trajectory sampler.

    times: (T,) strictly increasing, starting at 0. states: (P, T, D).
    """

    times: np.ndarray
    states: np.ndarray
    epsilon: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        states = np.asarray(self.states, dtype=np.float64)
        if times.ndim != 1 or states.ndim != 3 or states.shape[1] != times.shape[0]:
            raise ValueError("states must be (P, T, D) with T matching times")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise ValueError("times must start at 0 and be strictly increasing")
        if not np.all(np.isfinite(states)):
            raise ValueError("non-finite states")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    def at_time(self, t: float) -> np.ndarray:
        """States at an exact grid time, shape (P, D)."""
        idx = np.flatnonzero(np.isclose(self.times, t))
        if idx.size != 1:
            raise ValueError(f"time {t} is not on the grid")
        return self.states[:, idx[0], :]


@dataclass(frozen=True)
class DriftEval:
    """One drift evaluation g(x, t); t must be strictly inside [0, 1)."""

    x: np.ndarray
    t: float
    g: np.ndarray

    def __post_init__(self):
        if not (0.0 <= self.t < 1.0):
            raise ValueError("t must lie in [0, 1)")
        if not np.all(np.isfinite(self.g)):
            raise ValueError("non-finite drift value")


def _drift_batch(pot: MixturePotential, X: np.ndarray, t: float) -> np.ndarray:
    """Closed-form drift for a (P, D) batch at scalar time t."""
    s = pot.scales                                        # (K, D)
    r = pot.means
    eps = pot.epsilon
    one_m_t = 1.0 - t

    d = 1.0 + t * (s - 1.0)                               # (K, D), = t s + (1 - t)
    numer = s[None, :, :] * X[:, None, :] + one_m_t * r[None, :, :]   # (P, K, D)
    m = numer / d[None, :, :]

    # component log-weights up to k-independent constants; the quadratic term
    # carries the positive sign produced by the Gaussian integral identity
    denom = 2.0 * eps * one_m_t * (s * d)                 # (K, D)
    log_terms = (
        pot.log_weights
        - np.sum(r ** 2 / (2.0 * eps * s), axis=1)
        - 0.5 * np.sum(np.log(d), axis=1)
    )[None, :] + np.sum(numer ** 2 / denom[None, :, :], axis=2)
    w = np.exp(log_terms - logsumexp(log_terms, axis=1, keepdims=True))  # (P, K)
    return (np.einsum("pk,pkd->pd", w, m) - X) / one_m_t


def drift(pot: MixturePotential, x, t: float) -> np.ndarray:
    """Drift g(x, t) of the bridge SDE; x is a D-vector or a (P, D) batch.

    t must satisfy 0 <= t <= 1 - TIME_GUARD.
    """
    if not (0.0 <= t <= 1.0 - TIME_GUARD):
        raise ValueError(f"t={t} outside [0, 1 - {TIME_GUARD}]")
    single = np.asarray(x).ndim == 1
    X = as_sample_matrix(x, pot.dim, "x")
    g = _drift_batch(pot, X, float(t))
    return g[0] if single else g


def evaluate_drift(pot: MixturePotential, x, t: float) -> DriftEval:
    x_arr = np.asarray(x, dtype=np.float64)
    return DriftEval(x=x_arr, t=float(t), g=drift(pot, x, t))


def euler_maruyama(pot: MixturePotential, x0_batch, n_steps: int,
                   rng) -> TrajectoryBatch:
    """Integrate the SDE on a uniform grid with step 1 / n_steps.

    x <- x + g(x, t) dt + sqrt(eps dt) xi, with i.i.d. standard normal xi.
    The final drift evaluation happens at t = 1 - dt, inside the time guard.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng = make_rng(rng)
    X = as_sample_matrix(x0_batch, pot.dim, "x0_batch").copy()
    p, d = X.shape
    dt = 1.0 / n_steps
    times = np.linspace(0.0, 1.0, n_steps + 1)
    states = np.empty((p, n_steps + 1, d))
    states[:, 0, :] = X
    noise_scale = np.sqrt(pot.epsilon * dt)
    for step in range(n_steps):
        g = _drift_batch(pot, X, step * dt)
        X = X + g * dt + noise_scale * rng.standard_normal((p, d))
        if not np.all(np.isfinite(X)):
            raise RuntimeError(f"non-finite state at step {step + 1} of {n_steps}")
        states[:, step + 1, :] = X
    return TrajectoryBatch(times=times, states=states, epsilon=pot.epsilon)


def bridge_insert(x_left, x_right, t_left: float, t_right: float, t: float,
                  epsilon: float, rng) -> np.ndarray:
    """Draw the bridge state at time t given values at t_left < t < t_right.

    The conditional law is Gaussian with mean on the chord between the two
    endpoints and per-coordinate variance eps (t - t_left)(t_right - t)
    / (t_right - t_left). Accepts D-vectors or (P, D) batches.
    """
    if not (t_left < t < t_right):
        raise ValueError(f"need t_left < t < t_right, got {t_left}, {t}, {t_right}")
    rng = make_rng(rng)
    xl = np.asarray(x_left, dtype=np.float64)
    xr = np.asarray(x_right, dtype=np.float64)
    span = t_right - t_left
    frac = (t - t_left) / span
    mean = xl + frac * (xr - xl)
    var = epsilon * (t - t_left) * (t_right - t) / span
    return mean + np.sqrt(var) * rng.standard_normal(mean.shape)


def sample_bridge_trajectories(pot: MixturePotential, x0_batch, times,
                               rng) -> TrajectoryBatch:
    """Exact trajectory sampling: conditional endpoint draw, then recursive
    midpoint-first Brownian-bridge refinement at the requested interior times.

    times must be sorted and strictly inside (0, 1); it may be empty, in which
    case only the (x0, x1) endpoints are returned. No discretization error at
    any of the returned time points.
    """
    rng = make_rng(rng)
    X0 = as_sample_matrix(x0_batch, pot.dim, "x0_batch")
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if times.size and (np.any(times <= 0.0) or np.any(times >= 1.0)
                       or np.any(np.diff(times) <= 0)):
        raise ValueError("interior times must be sorted and strictly inside (0, 1)")

    p, d = X0.shape
    grid = np.concatenate([[0.0], times, [1.0]])
    states = np.empty((p, grid.size, d))
    states[:, 0, :] = X0
    states[:, -1, :] = sample_conditional_rows(pot, X0, rng)

    def fill(lo: int, hi: int) -> None:
        # endpoints at grid indices lo/hi are known; fill everything between
        if hi - lo < 2:
            return
        mid = (lo + hi) // 2
        states[:, mid, :] = bridge_insert(
            states[:, lo, :], states[:, hi, :], grid[lo], grid[hi], grid[mid],
            pot.epsilon, rng,
        )
        fill(lo, mid)
        fill(mid, hi)

    fill(0, grid.size - 1)
    return TrajectoryBatch(times=grid, states=states, epsilon=pot.epsilon)


# ---------------------------------------------------------------------------
# serialization: 32-byte header + flat float64 states, sidecar CSV of times


def save_trajectories(tb: TrajectoryBatch, path) -> None:
    p, t, d = tb.states.shape
    header = struct.pack("<8sIIIId", TRAJECTORY_MAGIC, p, t, d, 0, tb.epsilon)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(tb.states).tobytes())
    with open(str(path) + ".times.csv", "w", encoding="ascii") as fh:
        fh.write("t\n")
        for v in tb.times:
            fh.write(f"{v:.17g}\n")


def load_trajectories(path) -> TrajectoryBatch:
    with open(path, "rb") as fh:
        header = fh.read(32)
        magic, p, t, d, _pad, eps = struct.unpack("<8sIIIId", header)
        if magic != TRAJECTORY_MAGIC:
            raise ValueError("not a mixbridge trajectory file")
        states = np.frombuffer(fh.read(), dtype=np.float64).reshape(p, t, d)
    times = np.loadtxt(str(path) + ".times.csv", skiprows=1, ndmin=1)
    return TrajectoryBatch(times=times, states=states, epsilon=eps)


def trajectories_to_csv(tb: TrajectoryBatch) -> str:
    """Long-format CSV (particle, time, coordinates) for plotting."""
    d = tb.states.shape[2]
    lines = ["particle,t," + ",".join(f"x{i}" for i in range(d))]
    for pi in range(tb.states.shape[0]):
        for ti, tv in enumerate(tb.times):
            coords = ",".join(f"{v:.17g}" for v in tb.states[pi, ti])
            lines.append(f"{pi},{tv:.17g},{coords}")
    return "\n".join(lines) + "\n"
