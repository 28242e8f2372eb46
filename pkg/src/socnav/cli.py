"""Command-line entry point.

Subcommands: gen-data, pretrain, finetune, eval, plot, pipeline. One
global --seed is propagated to each stage with a fixed offset, so stages
are independently reproducible. Existing output files are never
overwritten without --force.

Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import trainer as tr
from .config import Config, ConfigError
from .dataset import dataset_stats, dumps_lossless, generate_dataset, load_trajectories
from .plotting import plot_trajectories, worlds_to_log, write_positions_log

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _load_config(path, seed=None) -> Config:
    cfg = Config.load(path) if path else Config()
    if seed is not None:
        cfg.seed = seed
    cfg.validate()
    return cfg


def _guard_overwrite(paths, force: bool):
    for p in paths:
        if p and os.path.exists(p) and not force:
            raise CliError(f"refusing to overwrite {p} (pass --force)", EXIT_CONFIG)


def _write_manifest(path, command, cfg: Config, artifacts, started,
                    stages=None, dry_run=False):
    manifest = {
        "command": command,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "artifacts": sorted(a for a in artifacts if a),
        "stages": stages or {},
        "dry_run": dry_run,
        "started_unix": started,
        "finished_unix": time.time(),
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


# -- subcommands -------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config, args.seed)
    if args.safety_space is not None:
        cfg.sim.robot_orca.safety_space = args.safety_space
    _guard_overwrite([args.out, args.out + ".stats.json"], args.force)
    _, stats = generate_dataset(args.episodes, seed=cfg.seed + tr.SEED_DATA,
                                sim_cfg=cfg.sim, gamma=cfg.train.gamma,
                                out_path=args.out, config_hash=cfg.hash(),
                                max_capacity=cfg.train.buffer_capacity)
    print(f"wrote {args.out}: {args.episodes} episodes, "
          f"success {stats.success_rate:.3f}, collision {stats.collision_rate:.3f}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _load_config(args.config, args.seed)
    _guard_overwrite([args.out], args.force)
    trajectories, _ = load_trajectories(args.data)
    result = tr.pretrain_offline(trajectories, cfg, seed=cfg.seed)
    tr.save_bundle(args.out, result.policy_store, result.rtgp_store,
                   meta={"config_hash": cfg.hash(), "phase": "pretrained",
                         "iterations": result.iterations,
                         "env_transitions": result.env_transitions})
    print(f"wrote {args.out}: {result.iterations} iterations, final losses "
          f"policy {result.policy_losses[-1]:.5f} rtgp {result.rtgp_losses[-1]:.5f}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = _load_config(args.config, args.seed)
    _guard_overwrite([args.out], args.force)
    policy_store, rtgp_store, meta = tr.load_bundle(args.ckpt)
    trajectories, _ = load_trajectories(args.data)
    result = tr.finetune_online(policy_store, rtgp_store, trajectories, cfg,
                                seed=cfg.seed, episodes=args.episodes,
                                rtg_mode=args.rtg_mode)
    prev = int(meta.get("env_transitions", 0))
    tr.save_bundle(args.out, result.policy_store, result.rtgp_store,
                   meta={"config_hash": cfg.hash(), "phase": "finetuned",
                         "rtg_mode": result.rtg_mode,
                         "env_transitions": prev + result.env_transitions})
    n_succ = sum(1 for e in result.episodes if e.outcome == "success")
    print(f"wrote {args.out}: {len(result.episodes)} episodes "
          f"({n_succ} successes), {result.env_transitions} transitions")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args.config, args.seed)
    outputs = [args.report]
    if args.positions_log:
        outputs.append(args.positions_log)
    _guard_overwrite(outputs, args.force)
    policy_store, rtgp_store, meta = tr.load_bundle(args.ckpt)
    rtg_mode = args.rtg_mode or meta.get("rtg_mode", cfg.train.rtg_mode)
    report, worlds = tr.evaluate(policy_store, rtgp_store, cfg,
                                 num_episodes=args.episodes, seed=cfg.seed,
                                 rtg_mode=rtg_mode,
                                 train_transitions=int(meta.get("env_transitions", 0)),
                                 record_world=bool(args.positions_log))
    with open(args.report, "w") as fh:
        fh.write(report.to_json())
    if args.positions_log:
        seeds = [rec["seed"] for rec in report.per_episode]
        write_positions_log(args.positions_log,
                            worlds_to_log(worlds, seeds, cfg.sim.dt))
    print(f"wrote {args.report}: success {report.success_rate:.3f}, "
          f"reward {report.mean_return:.4f}")
    return EXIT_OK


def cmd_plot(args) -> int:
    written = plot_trajectories(args.log, args.out, force=args.force)
    print(f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _load_config(args.config, args.seed)
    out = args.out
    os.makedirs(out, exist_ok=True)
    paths = {
        "config": os.path.join(out, "config.json"),
        "dataset": os.path.join(out, "dataset.jsonl"),
        "pretrained": os.path.join(out, "pretrained.ckpt"),
        "finetuned": os.path.join(out, "finetuned.ckpt"),
        "report": os.path.join(out, "eval_report.json"),
        "positions": os.path.join(out, "eval_positions.jsonl"),
        "plots": os.path.join(out, "plots"),
        "manifest": os.path.join(out, "manifest.json"),
    }
    started = time.time()
    if args.dry_run:
        _write_manifest(paths["manifest"], "pipeline", cfg, [], started,
                        dry_run=True)
        print(f"dry run: wrote {paths['manifest']} only")
        return EXIT_OK

    _guard_overwrite([paths["config"], paths["dataset"], paths["pretrained"],
                      paths["finetuned"], paths["report"], paths["positions"]],
                     args.force)
    stages = {}

    cfg.save(paths["config"])
    episodes = args.episodes or cfg.train.offline_episodes
    trajectories, stats = generate_dataset(
        episodes, seed=cfg.seed + tr.SEED_DATA, sim_cfg=cfg.sim,
        gamma=cfg.train.gamma, out_path=paths["dataset"], config_hash=cfg.hash(),
        max_capacity=cfg.train.buffer_capacity)
    stages["gen-data"] = {"episodes": episodes,
                          "success_rate": stats.success_rate}

    pre = tr.pretrain_offline(trajectories, cfg, seed=cfg.seed)
    tr.save_bundle(paths["pretrained"], pre.policy_store, pre.rtgp_store,
                   meta={"config_hash": cfg.hash(), "phase": "pretrained",
                         "env_transitions": 0})
    stages["pretrain"] = {"iterations": pre.iterations,
                          "policy_loss": pre.policy_losses[-1],
                          "rtgp_loss": pre.rtgp_losses[-1]}

    ft = tr.finetune_online(pre.policy_store.copy(), pre.rtgp_store.copy(),
                            trajectories, cfg, seed=cfg.seed,
                            episodes=args.finetune_episodes)
    tr.save_bundle(paths["finetuned"], ft.policy_store, ft.rtgp_store,
                   meta={"config_hash": cfg.hash(), "phase": "finetuned",
                         "rtg_mode": ft.rtg_mode,
                         "env_transitions": ft.env_transitions})
    stages["finetune"] = {"episodes": len(ft.episodes),
                          "env_transitions": ft.env_transitions}

    report, worlds = tr.evaluate(ft.policy_store, ft.rtgp_store, cfg,
                                 num_episodes=args.eval_episodes, seed=cfg.seed,
                                 train_transitions=ft.env_transitions,
                                 record_world=True)
    with open(paths["report"], "w") as fh:
        fh.write(report.to_json())
    seeds = [rec["seed"] for rec in report.per_episode]
    write_positions_log(paths["positions"], worlds_to_log(worlds, seeds, cfg.sim.dt))
    stages["eval"] = {"success_rate": report.success_rate,
                      "mean_return": report.mean_return}

    written = plot_trajectories(paths["positions"], paths["plots"], force=args.force)
    stages["plot"] = {"files": len(written)}

    artifacts = [paths[k] for k in ("config", "dataset", "pretrained",
                                    "finetuned", "report", "positions")]
    artifacts += [paths["dataset"] + ".stats.json"] + written
    _write_manifest(paths["manifest"], "pipeline", cfg, artifacts, started,
                    stages=stages)
    print(f"pipeline complete: success {report.success_rate:.3f}, "
          f"manifest {paths['manifest']}")
    return EXIT_OK


def cmd_stats(args) -> int:
    stats = dataset_stats(args.data)
    print(dumps_lossless(stats.to_dict()))
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="socnav", description=__doc__)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None, help="global seed")
    p.add_argument("--force", action="store_true",
                   help="allow overwriting existing outputs")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="collect the offline dataset")
    g.add_argument("--episodes", type=int, required=True)
    g.add_argument("--safety-space", type=float, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    g = sub.add_parser("pretrain", help="offline pre-training")
    g.add_argument("--data", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_pretrain)

    g = sub.add_parser("finetune", help="online fine-tuning")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--data", required=True, help="offline dataset for the hybrid buffer")
    g.add_argument("--episodes", type=int, default=None)
    g.add_argument("--rtg-mode", choices=("rtgp", "fixed", "labels"), default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_finetune)

    g = sub.add_parser("eval", help="seeded policy evaluation")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--episodes", type=int, default=500)
    g.add_argument("--report", required=True)
    g.add_argument("--rtg-mode", choices=("rtgp", "fixed", "labels"), default=None)
    g.add_argument("--positions-log", default=None,
                   help="also write per-step world positions for plotting")
    g.set_defaults(fn=cmd_eval)

    g = sub.add_parser("plot", help="render trajectory figures from a positions log")
    g.add_argument("--log", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_plot)

    g = sub.add_parser("stats", help="print dataset statistics")
    g.add_argument("--data", required=True)
    g.set_defaults(fn=cmd_stats)

    g = sub.add_parser("pipeline", help="gen-data > pretrain > finetune > eval > plot")
    g.add_argument("--out", required=True)
    g.add_argument("--episodes", type=int, default=None,
                   help="offline dataset episodes (default from config)")
    g.add_argument("--finetune-episodes", type=int, default=None)
    g.add_argument("--eval-episodes", type=int, default=100)
    g.add_argument("--dry-run", action="store_true")
    g.set_defaults(fn=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures map to a stable exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
