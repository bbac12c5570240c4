"""Command-line entry points: train, evaluate, sweep, match-study, export."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness, matching
from .env import JointMecDcEnv
from .sac import SacAgent, SacHyper
from .scenario import ConfigError, ScenarioError, generate_scenario


def _read_config(path: str | None) -> str | None:
    if path is None:
        return None
    return Path(path).read_text()


def _parse_seeds(text: str) -> tuple[int, ...]:
    return tuple(int(piece) for piece in text.split(",") if piece.strip())


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", default="runs/latest")


def cmd_train(args) -> int:
    scenario = generate_scenario(_read_config(args.config), args.seed)
    hyper = SacHyper(warmup_steps=args.warmup)
    controller = args.controller
    out = Path(args.out_dir)
    agent, records = harness.train_controller(
        controller,
        scenario,
        hyper,
        args.episodes,
        args.seed,
        checkpoint_dir=out / "checkpoints",
        checkpoint_every=args.checkpoint_every,
    )
    if agent is None:
        print(f"controller {controller} does not train; nothing to do")
        return 1
    out.mkdir(parents=True, exist_ok=True)
    agent.save(out / "checkpoint_final.pt", extra={"seed": args.seed})
    harness.export_artifacts(
        harness.RunArtifacts(
            scenario=scenario,
            seeds=(args.seed,),
            run_fields={"command": "train", "controller": controller, "episodes": args.episodes},
            training_records=records,
        ),
        out,
    )
    print(f"trained {controller} for {args.episodes} episodes -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    scenario = generate_scenario(_read_config(args.config), args.seed)
    agent = SacAgent.load(args.checkpoint) if args.checkpoint else None
    association = args.association or harness.CONTROLLER_ASSOCIATION[args.controller]
    env = JointMecDcEnv(scenario, association)
    controller = harness.build_controller(args.controller, env, args.seed, agent)
    episodes, trace = harness.evaluate_controller(
        env, controller, args.episodes, args.seed, record_trace=True
    )
    rows = [
        {
            "controller": args.controller,
            "scenario": "base",
            "seed": ep.seed,
            "sum_reward": ep.sum_reward,
            "latency_reward": ep.latency_reward,
            "dc_volume_bits": ep.dc_volume_bits,
            "completion_rate": ep.completion_rate,
            "dc_rate": ep.dc_rate,
            "avg_energy_per_uav_step": ep.avg_energy_per_uav_step,
        }
        for ep in episodes
    ]
    harness.export_artifacts(
        harness.RunArtifacts(
            scenario=scenario,
            seeds=(args.seed,),
            run_fields={"command": "evaluate", "controller": args.controller},
            metrics_rows=rows,
            trace=trace,
        ),
        args.out_dir,
    )
    mean_reward = sum(r["sum_reward"] for r in rows) / len(rows)
    print(f"evaluated {args.controller} over {args.episodes} episodes: "
          f"mean sum reward {mean_reward:.3f} -> {args.out_dir}")
    return 0


def cmd_sweep(args) -> int:
    plan = harness.ExperimentPlan(
        base_config=_read_config(args.config),
        sweep_key=args.sweep_key,
        sweep_values=tuple(args.sweep_values.split(",")) if args.sweep_values else (),
        controller=args.controller,
        seeds=_parse_seeds(args.seeds),
        train_episodes=args.episodes,
        eval_episodes=args.eval_episodes,
    )
    rows, aggregates = harness.run_plan(plan)
    scenario = generate_scenario(plan.base_config, plan.seeds[0])
    harness.export_artifacts(
        harness.RunArtifacts(
            scenario=scenario,
            seeds=plan.seeds,
            run_fields={"command": "sweep", "controller": args.controller,
                        "sweep": f"{args.sweep_key}={args.sweep_values}"},
            metrics_rows=rows,
            aggregate_rows=aggregates,
        ),
        args.out_dir,
    )
    print(f"sweep complete: {len(rows)} cells -> {args.out_dir}")
    return 0


def cmd_match_study(args) -> int:
    scenario = generate_scenario(_read_config(args.config), args.seed)
    study = harness.matching_effectiveness_study(
        scenario, slots=args.slots, seeds=_parse_seeds(args.seeds)
    )
    harness.export_artifacts(
        harness.RunArtifacts(
            scenario=scenario,
            seeds=_parse_seeds(args.seeds),
            run_fields={"command": "match-study", "slots": args.slots},
            study_rows=study,
        ),
        args.out_dir,
    )
    for kind, row in study.items():
        print(f"{kind:>20}: mean sum rate {row.mean_sum_rate / 1e6:8.3f} Mbps, "
              f"mean runtime {row.mean_runtime_s * 1e3:7.3f} ms/slot")
    return 0


def cmd_export(args) -> int:
    scenario = generate_scenario(_read_config(args.config), args.seed)
    agent = SacAgent.load(args.checkpoint) if args.checkpoint else None
    controller_kind = args.controller
    association = args.association or harness.CONTROLLER_ASSOCIATION[controller_kind]
    env = JointMecDcEnv(scenario, association)
    controller = harness.build_controller(controller_kind, env, args.seed, agent)
    _, trace = harness.evaluate_controller(
        env, controller, args.episodes, args.seed, record_trace=True
    )
    harness.export_artifacts(
        harness.RunArtifacts(
            scenario=scenario,
            seeds=(args.seed,),
            run_fields={"command": "export", "controller": controller_kind},
            trace=trace,
        ),
        args.out_dir,
    )
    print(f"exported rollout artifacts -> {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mecdc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a learnable controller")
    _add_common(p_train)
    p_train.add_argument("--controller", default="sac_tma",
                         choices=harness.LEARNABLE_CONTROLLERS)
    p_train.add_argument("--episodes", type=int, default=1500)
    p_train.add_argument("--warmup", type=int, default=3000)
    p_train.add_argument("--checkpoint-every", type=int, default=0)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate a controller deterministically")
    _add_common(p_eval)
    p_eval.add_argument("--controller", default="sac_tma", choices=harness.CONTROLLER_KINDS)
    p_eval.add_argument("--checkpoint", help="agent checkpoint for sac controllers")
    p_eval.add_argument("--episodes", type=int, default=50)
    p_eval.add_argument("--association", default=None, choices=matching.STRATEGY_KINDS,
                        help="override the embedded association strategy")
    p_eval.set_defaults(func=cmd_evaluate)

    p_sweep = sub.add_parser("sweep", help="scenario sweep across seeds")
    _add_common(p_sweep)
    p_sweep.add_argument("--controller", default="sac_tma", choices=harness.CONTROLLER_KINDS)
    p_sweep.add_argument("--seeds", default="0,1,2")
    p_sweep.add_argument("--sweep-key", default=None, help="config key to sweep")
    p_sweep.add_argument("--sweep-values", default=None, help="comma-separated values")
    p_sweep.add_argument("--episodes", type=int, default=1500)
    p_sweep.add_argument("--eval-episodes", type=int, default=50)
    p_sweep.set_defaults(func=cmd_sweep)

    p_study = sub.add_parser("match-study", help="association strategy comparison")
    _add_common(p_study)
    p_study.add_argument("--slots", type=int, default=300)
    p_study.add_argument("--seeds", default="0,1,2")
    p_study.set_defaults(func=cmd_match_study)

    p_export = sub.add_parser("export", help="roll out and export trajectory/association CSVs")
    _add_common(p_export)
    p_export.add_argument("--controller", default="random", choices=harness.CONTROLLER_KINDS)
    p_export.add_argument("--checkpoint", help="agent checkpoint for sac controllers")
    p_export.add_argument("--episodes", type=int, default=1)
    p_export.add_argument("--association", default=None, choices=matching.STRATEGY_KINDS,
                         help="override the embedded association strategy")
    p_export.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
