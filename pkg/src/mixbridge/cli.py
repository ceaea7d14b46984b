"""Subcommand CLI: train / sample / trajectories / evaluate / make-benchmark.

Every command writes its outputs plus a manifest.json capturing the resolved
configuration, input-file hashes and the seed, so a run can be replayed
exactly. Exit code 0 on success, nonzero with a diagnostic otherwise.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import (
    file_sha256,
    load_samples,
    save_samples_csv,
    swiss_roll,
)
from .dynamics import euler_maruyama, sample_bridge_trajectories, save_trajectories, trajectories_to_csv
from .evaluation import (
    StandardNormalSource,
    bw2_uvp,
    cbw2_uvp,
    energy_distance,
    kl_plan_mc,
    make_ground_truth_pair,
    metrics_csv_row,
)
from .potential import load_checkpoint, sample_conditional, sample_conditional_rows, save_checkpoint
from .rng import make_rng
from .training import NonFiniteLossError, SolverConfig, reports_to_csv, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixbridge")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, need_out=True):
        p.add_argument("--eps", type=float, default=0.1)
        p.add_argument("--k", type=int, default=10)
        p.add_argument("--lr", type=float, default=1e-2)
        p.add_argument("--batch", type=int, default=128)
        p.add_argument("--iters", type=int, default=10_000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=need_out)

    p_train = sub.add_parser("train", help="fit a potential to two sample files")
    p_train.add_argument("--x0", required=True)
    p_train.add_argument("--x1", required=True)
    p_train.add_argument("--eval-every", type=int, default=1000)
    add_common(p_train)

    p_sample = sub.add_parser("sample", help="draw conditional samples from a checkpoint")
    p_sample.add_argument("--checkpoint", required=True)
    p_sample.add_argument("--cond-input", required=True)
    p_sample.add_argument("--n", type=int, default=1)
    add_common(p_sample)

    p_traj = sub.add_parser("trajectories", help="simulate bridge trajectories")
    p_traj.add_argument("--checkpoint", required=True)
    p_traj.add_argument("--x0", required=True)
    p_traj.add_argument("--mode", choices=["em", "bridge"], default="em")
    p_traj.add_argument("--steps", type=int, default=100)
    p_traj.add_argument("--times", default=None,
                        help="comma-separated interior times for bridge mode")
    add_common(p_traj)

    p_eval = sub.add_parser("evaluate", help="compute a metric against a reference")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--metric", choices=["energy", "bw2uvp", "cbw2uvp", "kl"], required=True)
    p_eval.add_argument("--against", required=True,
                        help="sample file (energy/bw2uvp) or generator checkpoint (cbw2uvp/kl)")
    p_eval.add_argument("--x0", default=None, help="start points for conditional sampling")
    p_eval.add_argument("--x1", default=None)
    p_eval.add_argument("--n", type=int, default=256)
    add_common(p_eval)

    p_bench = sub.add_parser("make-benchmark", help="generate a ground-truth pair")
    p_bench.add_argument("--dim", type=int, required=True)
    p_bench.add_argument("--n-pairs", type=int, default=4096)
    add_common(p_bench)

    p_fix = sub.add_parser("make-fixture", help="generate bundled toy datasets")
    p_fix.add_argument("--name", choices=["swissroll", "gaussian"], required=True)
    p_fix.add_argument("--dim", type=int, default=2)
    p_fix.add_argument("--n", type=int, default=4096)
    p_fix.add_argument("--noise", type=float, default=0.1)
    p_fix.add_argument("--seed", type=int, default=0)
    p_fix.add_argument("--out", required=True)
    return parser


def _write_manifest(out_dir: Path, command: str, args: argparse.Namespace,
                    input_files: dict, outputs: list) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "command"}
    manifest = {
        "command": command,
        "version": __version__,
        "resolved_config": resolved,
        "dataset_hashes": {name: file_sha256(p) for name, p in input_files.items()},
        "seed": getattr(args, "seed", None),
        "outputs": outputs,
    }
    with open(out_dir / "manifest.json", "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _cmd_train(args) -> int:
    X0 = load_samples(args.x0)
    X1 = load_samples(args.x1)
    if X0.shape[1] != X1.shape[1]:
        raise ValueError(f"dimension mismatch: x0 has D={X0.shape[1]}, x1 has D={X1.shape[1]}")
    config = SolverConfig(
        epsilon=args.eps, n_components=args.k, learning_rate=args.lr,
        batch_size_0=args.batch, batch_size_1=args.batch, n_iters=args.iters,
        seed=args.seed, eval_every=args.eval_every,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def checkpoint_hook(iteration, pot, report):
        if iteration % config.eval_every == 0 or iteration == config.n_iters:
            save_checkpoint(pot, out / f"checkpoint_{iteration:06d}.json")

    pot, reports = train(config, X0, X1, callback=checkpoint_hook)
    save_checkpoint(pot, out / "checkpoint.json")
    (out / "loss.csv").write_text(reports_to_csv(reports), encoding="ascii")
    _write_manifest(out, "train", args, {"x0": args.x0, "x1": args.x1},
                    ["checkpoint.json", "loss.csv"])
    print(f"trained {args.iters} iterations; final loss {reports[-1].loss:.6g}")
    return 0


def _cmd_sample(args) -> int:
    pot = load_checkpoint(args.checkpoint)
    X = load_samples(args.cond_input)
    if X.shape[1] != pot.dim:
        raise ValueError(f"cond-input dimension {X.shape[1]} != checkpoint dim {pot.dim}")
    rng = make_rng(args.seed)
    draws = np.vstack([sample_conditional(pot, row, args.n, rng) for row in X])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_samples_csv(out / "samples.csv", draws)
    _write_manifest(out, "sample", args,
                    {"checkpoint": args.checkpoint, "cond_input": args.cond_input},
                    ["samples.csv"])
    print(f"wrote {draws.shape[0]} samples")
    return 0


def _cmd_trajectories(args) -> int:
    pot = load_checkpoint(args.checkpoint)
    X0 = load_samples(args.x0)
    rng = make_rng(args.seed)
    if args.mode == "em":
        tb = euler_maruyama(pot, X0, args.steps, rng)
    else:
        times = [] if not args.times else [float(v) for v in args.times.split(",")]
        tb = sample_bridge_trajectories(pot, X0, times, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_trajectories(tb, out / "trajectories.bin")
    (out / "trajectories.csv").write_text(trajectories_to_csv(tb), encoding="ascii")
    _write_manifest(out, "trajectories", args,
                    {"checkpoint": args.checkpoint, "x0": args.x0},
                    ["trajectories.bin", "trajectories.bin.times.csv", "trajectories.csv"])
    print(f"simulated {tb.n_particles} trajectories at {tb.times.size} time points")
    return 0


def _cmd_evaluate(args) -> int:
    pot = load_checkpoint(args.checkpoint)
    rng = make_rng(args.seed)
    inputs = {"checkpoint": args.checkpoint, "against": args.against}
    stderr = 0.0
    n = args.n

    if args.metric in ("energy", "bw2uvp"):
        if args.x0 is None:
            raise ValueError(f"--metric {args.metric} needs --x0 (start points to push forward)")
        X0 = load_samples(args.x0)
        inputs["x0"] = args.x0
        target = load_samples(args.against)
        pushed = sample_conditional_rows(pot, X0, rng)
        n = X0.shape[0]
        value = energy_distance(pushed, target) if args.metric == "energy" \
            else bw2_uvp(pushed, target)
    else:
        truth = load_checkpoint(args.against)
        if args.x0 is not None:
            rows = load_samples(args.x0)
            inputs["x0"] = args.x0

            class _FileSource:
                def sample(self, m, gen):
                    return rows[gen.integers(0, rows.shape[0], size=m)]

            source = _FileSource()
        else:
            source = StandardNormalSource(dim=pot.dim)
        if args.metric == "cbw2uvp":
            value = cbw2_uvp(pot, truth, n_test_x0=n, rng=rng, source=source)
        else:
            est = kl_plan_mc(truth, pot, source, n_outer=n, n_inner=64, rng=rng)
            value, stderr = est.value, est.stderr

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    row = metrics_csv_row(args.metric, value, stderr, n, args.seed)
    (out / "metrics.csv").write_text("metric,value,stderr,n,seed\n" + row + "\n",
                                     encoding="ascii")
    _write_manifest(out, "evaluate", args, inputs, ["metrics.csv"])
    print(row)
    return 0


def _cmd_make_benchmark(args) -> int:
    pair = make_ground_truth_pair(dim=args.dim, k=args.k, epsilon=args.eps,
                                  n_pairs=args.n_pairs, rng=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(pair.potential, out / "checkpoint.json")
    save_samples_csv(out / "x0.csv", pair.x0)
    save_samples_csv(out / "x1.csv", pair.x1)
    (out / "source.json").write_text(json.dumps(pair.source.spec()) + "\n", encoding="ascii")
    _write_manifest(out, "make-benchmark", args, {},
                    ["checkpoint.json", "x0.csv", "x1.csv", "source.json"])
    print(f"benchmark pair: {args.n_pairs} pairs in D={args.dim}, eps={args.eps}")
    return 0


def _cmd_make_fixture(args) -> int:
    rng = make_rng(args.seed)
    if args.name == "swissroll":
        X = swiss_roll(args.n, rng, noise=args.noise)
    else:
        X = rng.standard_normal((args.n, args.dim))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_samples_csv(out / f"{args.name}.csv", X)
    _write_manifest(out, "make-fixture", args, {}, [f"{args.name}.csv"])
    print(f"wrote {args.n} x {X.shape[1]} fixture '{args.name}'")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "sample": _cmd_sample,
    "trajectories": _cmd_trajectories,
    "evaluate": _cmd_evaluate,
    "make-benchmark": _cmd_make_benchmark,
    "make-fixture": _cmd_make_fixture,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NonFiniteLossError as err:
        print(f"error: training aborted: {err}", file=sys.stderr)
        return 3
    except (ValueError, FileNotFoundError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
