"""Entropic optimal transport / Schrödinger bridge solver with
Gaussian-mixture potentials: closed-form conditional plans, closed-form
drift, exact trajectory samplers and a ground-truth-backed evaluation suite.
"""

__version__ = "0.1.0"

from .datasets import load_samples, save_samples_bin, save_samples_csv, swiss_roll
from .dynamics import (
    DriftEval,
    TrajectoryBatch,
    bridge_insert,
    drift,
    euler_maruyama,
    evaluate_drift,
    load_trajectories,
    sample_bridge_trajectories,
    save_trajectories,
)
from .evaluation import (
    DiscretePlan,
    GroundTruthPair,
    KLEstimate,
    StandardNormalSource,
    barycentric_projection,
    bw2_gaussian,
    bw2_uvp,
    bw2_uvp_gaussian,
    cbw2_uvp,
    energy_distance,
    entropic_objective,
    kl_plan_mc,
    make_ground_truth_pair,
    sinkhorn_oracle,
)
from .marginal import MarginalModel, fit_marginal_em, log_plan_density
from .potential import (
    ConditionalMixture,
    MixturePotential,
    as_sample_matrix,
    conditional_mean,
    conditional_moments,
    conditional_plan,
    load_checkpoint,
    log_c,
    log_pi_cond,
    log_pi_cond_pairs,
    log_v,
    sample_conditional,
    sample_conditional_rows,
    save_checkpoint,
)
from .rng import make_rng
from .training import (
    AdamState,
    NonFiniteLossError,
    SolverConfig,
    TrainReport,
    adam_step,
    empirical_loss,
    init_params,
    loss_and_gradient,
    loss_gradient,
    pack_params,
    train,
    unpack_params,
)
