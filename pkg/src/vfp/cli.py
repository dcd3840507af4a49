"""Command-line surface: train, eval, plot, ambiguity, sweep, gen-data.

Exit codes: 0 success, 2 configuration error, 3 numeric failure (NaN/Inf),
4 schema mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from collections import Counter

import numpy as np

from .ambiguity import KeyingConfig, action_space_ambiguity, decompose, make_pairs
from .autodiff import make_rng
from .config import TrainConfig
from .envs import Dataset, evaluate, mode_medoids, rollout
from .errors import ConfigError, NumericError, SchemaError
from .plotting import save_svg
from .trainer import Trainer, make_env, resolve_dataset


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _parse_float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _load_config(args: argparse.Namespace) -> TrainConfig:
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    if args.set:
        cfg = cfg.with_overrides(args.set)
    return cfg


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    env, dataset = resolve_dataset(cfg.normalized())
    trainer = Trainer(cfg, dataset, env)
    if args.log:
        with open(args.log, "w") as log_stream:
            records = trainer.train(log_stream=log_stream, log_every=args.log_every)
    else:
        records = trainer.train()
    trainer.save_checkpoint(args.out)
    last = records[-1] if records else {"step": 0}
    print(json.dumps({"checkpoint": args.out, "final": last}))
    return 0


def _eval_checkpoint(trainer: Trainer, episodes: int, seeds: list[int]) -> dict:
    cfg = trainer.cfg
    env, dataset = ((trainer.env, trainer.dataset) if trainer.env is not None
                    else resolve_dataset(cfg))
    refs = mode_medoids(dataset) if dataset.flat_modes() is not None else None
    n_modes = dataset.n_modes or 1
    policy = trainer.policy()
    policy.reset_counters()
    metrics = evaluate(policy, env, episodes, seeds, mode_refs=refs, n_modes=n_modes)
    metrics.pop("rollouts")
    nfe = policy.nfe_per_action
    # single-step inference must cost exactly one field evaluation per action
    assert nfe == float(cfg.inference_steps), (
        f"measured NFE {nfe} != configured {cfg.inference_steps}")
    metrics["nfe_per_action"] = nfe
    metrics["inference_steps"] = cfg.inference_steps
    metrics["seeds"] = list(seeds)
    return metrics


def cmd_eval(args: argparse.Namespace) -> int:
    trainer = Trainer.from_checkpoint(args.ckpt)
    metrics = _eval_checkpoint(trainer, args.episodes, _parse_int_list(args.seeds))
    payload = json.dumps(metrics)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(payload + "\n")
    print(payload)
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    if bool(args.ckpt) == bool(args.dataset):
        raise ConfigError("plot: pass exactly one of --ckpt or --dataset")
    rollouts = []
    if args.ckpt:
        trainer = Trainer.from_checkpoint(args.ckpt)
        env, dataset = ((trainer.env, trainer.dataset) if trainer.env is not None
                        else resolve_dataset(trainer.cfg))
        policy = trainer.policy()
        streams = np.random.SeedSequence(args.seed).spawn(args.episodes)
        for stream in streams:
            policy.expert_trace.clear()
            result = rollout(policy, env, np.random.Generator(np.random.PCG64(stream)))
            expert = (Counter(policy.expert_trace).most_common(1)[0][0]
                      if policy.expert_trace else None)
            rollouts.append((result.states, expert))
    else:
        dataset = Dataset.load_jsonl(args.dataset)
        if dataset.state_dim != 2:
            raise ConfigError("plot: only 2-D state spaces are supported")
        env = make_env(TrainConfig(env=args.env).normalized())
    save_svg(args.out, env, dataset, rollouts)
    print(json.dumps({"plot": args.out, "rollouts": len(rollouts)}))
    return 0


def cmd_ambiguity(args: argparse.Namespace) -> int:
    dataset = Dataset.load_jsonl(args.dataset)
    states = dataset.flat_states()
    actions = dataset.flat_actions()
    modes = dataset.flat_modes()
    if modes is None:
        raise ConfigError("ambiguity: dataset has no mode labels")
    # state id = exact row identity of the state vector
    uniq, state_ids = np.unique(states, axis=0, return_inverse=True)
    rng = make_rng(args.seed)
    reps = [make_pairs(states, actions, state_ids, rng, labels=modes,
                       fixed_time=args.fixed_time)
            for _ in range(args.pairs_per_record)]
    pairs = reps[0]
    for extra in reps[1:]:
        pairs.a_t = np.concatenate([pairs.a_t, extra.a_t])
        pairs.t = np.concatenate([pairs.t, extra.t])
        pairs.states = np.concatenate([pairs.states, extra.states])
        pairs.state_ids = np.concatenate([pairs.state_ids, extra.state_ids])
        pairs.velocities = np.concatenate([pairs.velocities, extra.velocities])
        pairs.labels = np.concatenate([pairs.labels, extra.labels])
    keying = KeyingConfig(n_time_bins=args.time_bins, cell_size=args.cell_size)
    report = decompose(pairs, keying,
                       v_amb=action_space_ambiguity(actions, state_ids))
    payload = json.dumps(report.to_dict())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(payload + "\n")
    print(payload)
    return 0


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = TrainConfig(env=args.env, env_modes=args.modes,
                      env_demos_per_mode=args.per_mode, env_noise=args.noise,
                      env_seed=args.seed).normalized()
    _, dataset = resolve_dataset(cfg)
    dataset.save_jsonl(args.out)
    print(json.dumps({"dataset": args.out,
                      "trajectories": len(dataset.trajectories),
                      "pairs": int(dataset.flat_states().shape[0])}))
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    base = _load_config(args)
    values = (_parse_int_list(args.values) if args.param == "experts"
              else _parse_float_list(args.values))
    seeds = _parse_int_list(args.seeds)
    rows = []
    for value in values:
        for seed in seeds:
            overrides = [f"seed={seed}"]
            if args.param == "experts":
                overrides.append(f"n_experts={value}")
            else:
                overrides.append(f"ot_weight={value}")
            cfg = base.with_overrides(overrides)
            try:
                env, dataset = resolve_dataset(cfg.normalized())
                trainer = Trainer(cfg, dataset, env)
                trainer.train()
                metrics = _eval_checkpoint(trainer, args.episodes, [seed])
                rows.append((value, seed, metrics["success_rate"],
                             metrics["mode_coverage"]))
            except (NumericError, ValueError) as exc:
                print(f"sweep run {args.param}={value} seed={seed} failed: {exc}",
                      file=sys.stderr)
                rows.append((value, seed, "", ""))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "seed", "success_rate", "coverage"])
        writer.writerows(rows)
    print(json.dumps({"sweep": args.out, "rows": len(rows)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vfp",
                                     description="variational flow policy toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a policy from a config")
    train.add_argument("--config", help="JSON config path (defaults apply if omitted)")
    train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field")
    train.add_argument("--out", required=True, help="checkpoint output path")
    train.add_argument("--log", help="JSON-lines training log path")
    train.add_argument("--log-every", type=int, default=1)
    train.set_defaults(fn=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint in its environment")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--episodes", type=int, default=30)
    ev.add_argument("--seeds", default="0,1,2,3,4")
    ev.add_argument("--out")
    ev.set_defaults(fn=cmd_eval)

    plot = sub.add_parser("plot", help="render demos and rollouts to SVG")
    plot.add_argument("--ckpt")
    plot.add_argument("--dataset")
    plot.add_argument("--env", default="avoiding",
                      help="environment kind when plotting a bare dataset")
    plot.add_argument("--episodes", type=int, default=8)
    plot.add_argument("--seed", type=int, default=0)
    plot.add_argument("--out", required=True)
    plot.set_defaults(fn=cmd_plot)

    amb = sub.add_parser("ambiguity", help="ambiguity report for a dataset")
    amb.add_argument("--dataset", required=True)
    amb.add_argument("--time-bins", type=int, default=10, dest="time_bins")
    amb.add_argument("--cell-size", type=float, default=0.25, dest="cell_size")
    amb.add_argument("--pairs-per-record", type=int, default=4,
                     dest="pairs_per_record")
    amb.add_argument("--fixed-time", type=float, default=None, dest="fixed_time")
    amb.add_argument("--seed", type=int, default=0)
    amb.add_argument("--out")
    amb.set_defaults(fn=cmd_ambiguity)

    gen = sub.add_parser("gen-data", help="generate a demonstration dataset")
    gen.add_argument("--env", required=True, choices=["avoiding", "crossing", "twotask"])
    gen.add_argument("--modes", type=int, default=4)
    gen.add_argument("--per-mode", type=int, default=25, dest="per_mode")
    gen.add_argument("--noise", type=float, default=0.02)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(fn=cmd_gen_data)

    sweep = sub.add_parser("sweep", help="train+eval across a parameter grid")
    sweep.add_argument("--param", required=True, choices=["experts", "ot_weight"])
    sweep.add_argument("--values", required=True)
    sweep.add_argument("--config")
    sweep.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    sweep.add_argument("--seeds", default="0,1,2")
    sweep.add_argument("--episodes", type=int, default=30)
    sweep.add_argument("--out", required=True)
    sweep.set_defaults(fn=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except SchemaError as exc:
        print(f"schema mismatch: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
