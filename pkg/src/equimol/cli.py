"""Command-line surface: train, predict, and the verification commands.

Exit codes: 0 success, 1 validation failure, 2 usage error."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .geometry import GeometryError
from . import io as mio
from . import model as md
from . import training as tr
from . import verify as vf
from .linegraph import EmptyLevelError, level_from_graph, lift
from .geometry import build_graph

# compact architecture for --random certification runs; symmetry properties
# are config-independent, so a small model keeps the commands quick
RANDOM_CHECK_CONFIG = dict(d=16, d_t=2, n_blocks=2, n_bf=6)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="equimol",
        description="Equivariant molecular property model: training, "
                    "prediction, and symmetry verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train from a JSON run config")
    p_train.add_argument("config", help="path to run config JSON")

    p_pred = sub.add_parser("predict", help="predict properties for a dataset")
    p_pred.add_argument("checkpoint")
    p_pred.add_argument("xyz")
    p_pred.add_argument("--output", default=None,
                        help="write JSON lines here instead of stdout")

    p_check = sub.add_parser("check-equivariance",
                             help="certify O(3)/translation/relabeling behavior")
    p_check.add_argument("checkpoint", nargs="?", default=None)
    p_check.add_argument("--random", action="store_true",
                         help="certify a randomly initialized model")
    p_check.add_argument("--trials", type=int, default=100)
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--tol", type=float, default=1e-10)
    p_check.add_argument("--json", default=None, help="verdict file path")

    p_grad = sub.add_parser("gradcheck",
                            help="finite-difference check of tape gradients")
    p_grad.add_argument("checkpoint", nargs="?", default=None)
    p_grad.add_argument("--random", action="store_true")
    p_grad.add_argument("--seed", type=int, default=0)

    p_fig = sub.add_parser("demo-fig1",
                           help="angle-separability demonstration on the "
                                "collinear star fixtures")
    p_fig.add_argument("--seeds", type=int, default=100)

    p_lg = sub.add_parser("linegraph", help="line-graph hierarchy statistics")
    p_lg.add_argument("xyz")
    p_lg.add_argument("--depth", type=int, default=1)
    p_lg.add_argument("--cutoff", type=float, default=5.0)
    return parser


def _load_model(checkpoint, random_flag, seed, parser):
    if (checkpoint is None) == (not random_flag):
        parser.error("provide a checkpoint path or --random, not both or neither")
    if random_flag:
        cfg = md.ModelConfig(**RANDOM_CHECK_CONFIG)
        return md.init_params(cfg, seed=seed), cfg, {}
    return md.load_checkpoint(checkpoint)


def cmd_train(args):
    run = mio.load_run_config(args.config)
    if not run.dataset:
        print("error: run config has no dataset path", file=sys.stderr)
        return 1
    molecules = mio.read_extxyz(run.dataset)
    os.makedirs(run.output_dir, exist_ok=True)
    metrics_path = os.path.join(run.output_dir, f"{run.name}_metrics.jsonl")
    result = tr.train(molecules, run.model, run.train, metrics_path=metrics_path)
    ckpt_path = os.path.join(run.output_dir, f"{run.name}.ckpt")
    extra = {"train_config": run.train.to_dict()}
    if result.standardization:
        extra["standardization"] = result.standardization
    md.save_checkpoint(ckpt_path, result.params, run.model, extra=extra)
    print(f"checkpoint: {ckpt_path}")
    print(f"metrics: {metrics_path}")
    print(f"best validation loss {result.best_val_loss:.6e} at epoch {result.best_epoch}")
    return 0


def cmd_predict(args):
    params, cfg, extra = md.load_checkpoint(args.checkpoint)
    molecules = mio.read_extxyz(args.xyz)
    std = extra.get("standardization") or {"mean": 0.0, "std": 1.0}
    rows = []
    for i, mol in enumerate(molecules):
        row = {"index": i, "n_atoms": mol.n_atoms}
        if cfg.head == "polarizability":
            alpha = md.polarizability(mol, cfg, params)
            row["polarizability"] = alpha.tolist()
        elif cfg.head == "scalar+force":
            energy, forces = md.energy_and_forces(mol, cfg, params)
            row["energy"] = energy * std["std"] + std["mean"]
            row["forces"] = (forces * std["std"]).tolist()
        else:
            out = md.forward(mol, cfg, params)
            row["energy"] = out.pooled_s.item() * std["std"] + std["mean"]
        rows.append(json.dumps(row, sort_keys=True))
    text = "\n".join(rows) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_check_equivariance(args, parser):
    params, cfg, _ = _load_model(args.checkpoint, args.random, args.seed, parser)
    reports = vf.certify_model(cfg, params, trials=args.trials, seed=args.seed,
                               tol=args.tol)
    for report in reports:
        print(report)
    if args.json:
        vf.write_verdict(args.json, reports)
    return 0 if all(r.passed for r in reports) else 1


def cmd_gradcheck(args, parser):
    params, cfg, _ = _load_model(args.checkpoint, args.random, args.seed, parser)
    report = vf.gradcheck_model(cfg, params, seed=args.seed)
    status = "PASS" if report.passed else "FAIL"
    print(f"[{status}] gradcheck: max rel err {report.max_rel_err:.3e}, "
          f"max abs err {report.max_abs_err:.3e}")
    if report.detail and not report.passed:
        print(report.detail)
    return 0 if report.passed else 1


def cmd_demo_fig1(args):
    agg90 = vf.fig1_aggregate_vectors("fig1a_collinear_90")
    agg60 = vf.fig1_aggregate_vectors("fig1a_collinear_60")
    print("aggregated bond directions at the center atom:")
    print(f"  theta=90deg: [{agg90[0]: .12f} {agg90[1]: .12f} {agg90[2]: .12f}]")
    print(f"  theta=60deg: [{agg60[0]: .12f} {agg60[1]: .12f} {agg60[2]: .12f}]")
    bond_only = vf.fig1_separability("bond_only", n_seeds=args.seeds)
    with_tri = vf.fig1_separability("with_triplets", n_seeds=args.seeds)
    print(f"bond-only model: {bond_only['verdict']} "
          f"(max pair deviation {bond_only['max_pair_deviation']:.3e})")
    print(f"triplet model:   {with_tri['verdict']} "
          f"({with_tri['n_separated']}/{with_tri['seeds']} seeds separated)")
    ok = bond_only["passed"] and with_tri["passed"]
    print("separability verdict:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_linegraph(args):
    molecules = mio.read_extxyz(args.xyz)
    if not molecules:
        print("error: no frames in input", file=sys.stderr)
        return 1
    graph = build_graph(molecules[0], args.cutoff)
    level = level_from_graph(graph)
    print(f"level 0: {level.n_vertices} vertices, {len(level.edges)} edges")
    for depth in range(1, args.depth + 1):
        try:
            level = lift(level)
        except EmptyLevelError:
            print(f"level {depth}: empty (no edges to lift)")
            return 0
        print(f"level {depth}: {level.n_vertices} vertices, {len(level.edges)} edges")
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return err.code
    try:
        if args.command == "train":
            return cmd_train(args)
        if args.command == "predict":
            return cmd_predict(args)
        if args.command == "check-equivariance":
            return cmd_check_equivariance(args, parser)
        if args.command == "gradcheck":
            return cmd_gradcheck(args, parser)
        if args.command == "demo-fig1":
            return cmd_demo_fig1(args)
        if args.command == "linegraph":
            return cmd_linegraph(args)
        parser.error(f"unknown command {args.command!r}")
    except SystemExit as err:
        return err.code
    except (mio.ParseError, md.ModelError, tr.TrainingError, vf.VerifyError,
            GeometryError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
