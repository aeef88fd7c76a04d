"""Command-line interface.

Subcommands: train, eval, experiment, export-plots. Option precedence is
flags over config file over built-in defaults. Exit codes: 0 success,
1 usage or validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

from . import evaluation, recording
from .ars import CheckpointError, load_checkpoint, save_checkpoint, train
from .config import ConfigError, EnvBuilder, ScenarioConfig, load_scenario
from .env import RewardMode

# flag destination -> (config section, field)
_OVERRIDE_MAP = {
    "platoon_size": ("world", "platoon_size"),
    "volume": ("world", "hourly_volume"),
    "dt": ("world", "dt"),
    "omega_energy": ("reward", "omega_energy"),
    "omega_delay": ("reward", "omega_delay"),
    "reward_mode": ("reward", "mode"),
    "iterations": ("ars", "iterations"),
    "directions": ("ars", "directions"),
    "top_directions": ("ars", "top_directions"),
    "step_size": ("ars", "step_size"),
    "noise": ("ars", "noise"),
    "eval_interval": ("ars", "eval_interval"),
    "horizon": ("ars", "horizon"),
    "seed": ("ars", "base_seed"),
    "episodes": ("eval", "episodes"),
    "agents": ("eval", "agents"),
    "eval_seed": ("eval", "seed"),
}


def _add_scenario_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="scenario TOML file")
    parser.add_argument("--platoon-size", type=int, default=None)
    parser.add_argument("--volume", type=float, default=None,
                        help="background demand, veh/h")
    parser.add_argument("--dt", type=float, default=None)
    parser.add_argument("--omega-energy", type=float, default=None)
    parser.add_argument("--omega-delay", type=float, default=None)
    parser.add_argument("--reward-mode", choices=[m.value for m in RewardMode],
                        default=None)
    parser.add_argument("--iterations", type=int, default=None)
    parser.add_argument("--directions", type=int, default=None)
    parser.add_argument("--top-directions", type=int, default=None)
    parser.add_argument("--step-size", type=float, default=None)
    parser.add_argument("--noise", type=float, default=None)
    parser.add_argument("--eval-interval", type=int, default=None)
    parser.add_argument("--horizon", type=float, default=None)
    parser.add_argument("--seed", type=int, default=None,
                        help="training base seed")
    parser.add_argument("--episodes", type=int, default=None,
                        help="evaluation episodes")
    parser.add_argument("--agents", type=int, default=None,
                        help="agents per mode in comparative studies")
    parser.add_argument("--eval-seed", type=int, default=None)


def _scenario_from_args(args: argparse.Namespace) -> ScenarioConfig:
    overrides: dict[str, dict] = {}
    for dest, (section, field) in _OVERRIDE_MAP.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides.setdefault(section, {})[field] = value
    return load_scenario(args.config, overrides)


def _prepare_out(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------------
# subcommands

def _cmd_train(args: argparse.Namespace) -> int:
    scenario = _scenario_from_args(args)
    out = _prepare_out(args)

    def progress(report):
        if not args.quiet:
            print(f"iter {report.iteration + 1}/{scenario.ars.iterations} "
                  f"mean={report.mean_reward:.2f} "
                  f"smoothed={report.smoothed_reward:.2f} "
                  f"update={report.update_norm:.4f}")

    policy, reports = train(scenario.ars, EnvBuilder(scenario),
                            jobs=args.jobs, progress=progress)
    ckpt = out / "checkpoint.bin"
    save_checkpoint(ckpt, policy, scenario.to_dict())
    recording.write_training_curve(out / "training_curve.csv", reports)
    manifest = recording.build_manifest(
        "train", scenario, {"base_seed": scenario.ars.base_seed},
        out, ["checkpoint.bin", "checkpoint.bin.json", "training_curve.csv"])
    recording.write_manifest(out / "manifest.json", manifest)
    if not args.quiet:
        print(f"saved checkpoint to {ckpt}")
    return 0


def _load_policy_controller(args, scenario) -> evaluation.PolicyController:
    if args.checkpoint is None:
        raise ConfigError("--controller policy requires --checkpoint")
    policy, _ = load_checkpoint(args.checkpoint)
    builder = EnvBuilder(scenario)
    expected = builder().observation_dim
    if policy.dim != expected:
        raise ConfigError(
            f"checkpoint has observation_dim={policy.dim} but the scenario "
            f"needs {expected} (check platoon_size and signal phases)")
    return evaluation.controller_from_policy(policy, scenario)


def _cmd_eval(args: argparse.Namespace) -> int:
    scenario = _scenario_from_args(args)
    out = _prepare_out(args)
    if args.controller == "policy":
        controller = _load_policy_controller(args, scenario)
    elif args.controller == "idm":
        controller = evaluation.idm_controller
    else:
        controller = evaluation.GlosaController()

    seeds = evaluation.evaluation_seeds(scenario)
    env = EnvBuilder(scenario, record_trajectory=True)()
    metrics, records = evaluation.run_controller(env, controller, seeds)

    episode_rows = [{
        "episode": i,
        "seed": seed,
        "delay_per_vehicle_s": metrics.episode_delays_s[i],
        "platoon_energy_wh": metrics.episode_energies_wh[i],
        "full_stops": metrics.episode_stops[i],
        "reward": rec.total_reward,
        "reason": rec.reason.value,
    } for i, (seed, rec) in enumerate(zip(seeds, records))]
    summary_row = {
        "method": args.controller,
        "episodes": metrics.episodes,
        "delay_per_vehicle_s": metrics.delay_per_vehicle_s,
        "energy_per_vehicle_wh": metrics.energy_per_vehicle_wh,
        "platoon_energy_wh": metrics.platoon_energy_wh,
        "full_stops_per_episode": metrics.full_stops_per_episode,
    }
    recording.write_table(out / "metrics.csv", [summary_row])
    recording.write_table(out / "episodes.csv", episode_rows)
    outputs = ["metrics.csv", "episodes.csv"]
    if args.export_trajectories:
        rows = records[0].step_log or []
        recording.write_trajectories(out / "trajectories.csv", rows)
        if rows:
            bands = recording.signal_bands(
                scenario.signal, rows[0][0] - scenario.world.dt, rows[-1][0])
            recording.write_signal_bands(out / "signal_bands.csv", bands)
            outputs += ["trajectories.csv", "signal_bands.csv"]
    manifest = recording.build_manifest(
        "eval", scenario, {"eval_seeds": seeds}, out, outputs)
    recording.write_manifest(out / "manifest.json", manifest)
    if not args.quiet:
        print(f"{args.controller}: delay {metrics.delay_per_vehicle_s:.2f} s/veh, "
              f"energy {metrics.energy_per_vehicle_wh:.2f} Wh/veh, "
              f"stops {metrics.full_stops_per_episode:.2f}/episode")
    return 0


def _cmd_experiment(args: argparse.Namespace) -> int:
    scenario = _scenario_from_args(args)
    out = _prepare_out(args)
    progress = None if args.quiet else lambda msg: print(msg)
    outputs: list[str] = []
    if args.study == "er-vs-dr":
        result = evaluation.ablation_er_vs_dr(scenario, jobs=args.jobs,
                                              progress=progress)
        recording.write_table(out / "er_vs_dr.csv", result["rows"])
        for label, groups in result["groups"].items():
            recording.write_table(out / f"groups_{label.lower()}.csv", groups)
            outputs.append(f"groups_{label.lower()}.csv")
        outputs.append("er_vs_dr.csv")
    elif args.study == "weight-sweep":
        ratios = (args.ratios.split(",") if args.ratios
                  else list(evaluation.DEFAULT_WEIGHT_RATIOS))
        rows = evaluation.sweep_weights(scenario, ratios, jobs=args.jobs,
                                        progress=progress)
        recording.write_table(out / "weight_sweep.csv", rows)
        outputs.append("weight_sweep.csv")
    else:  # size-sweep
        sizes = ([int(s) for s in args.sizes.split(",")] if args.sizes
                 else [1, 3, 5, 8])
        result = evaluation.sweep_platoon_size(scenario, sizes, jobs=args.jobs,
                                               progress=progress)
        recording.write_table(out / "size_sweep.csv", result["rows"])
        outputs.append("size_sweep.csv")
        for (size, method), rows in result["trajectories"].items():
            name = f"trajectories_n{size}_{method}.csv"
            recording.write_trajectories(out / name, rows)
            outputs.append(name)
            if rows:
                bands = recording.signal_bands(
                    scenario.signal, rows[0][0] - scenario.world.dt,
                    rows[-1][0])
                band_name = f"signal_bands_n{size}_{method}.csv"
                recording.write_signal_bands(out / band_name, bands)
                outputs.append(band_name)
    manifest = recording.build_manifest(
        f"experiment {args.study}", scenario,
        {"base_seed": scenario.ars.base_seed,
         "eval_seeds": evaluation.evaluation_seeds(scenario)},
        out, outputs)
    recording.write_manifest(out / "manifest.json", manifest)
    return 0


def _cmd_export_plots(args: argparse.Namespace) -> int:
    recording.export_time_space_plot(args.trajectories, args.signal_bands,
                                     args.out, lane_length=args.lane_length)
    if not args.quiet:
        print(f"wrote {args.out}")
    return 0


# ----------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecoplatoon",
        description="Eco-driving platoon control at a signalized intersection")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress progress output")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_train = sub.add_parser("train", help="train a policy")
    _add_scenario_options(p_train)
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--jobs", type=int, default=1,
                         help="parallel rollout workers")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a controller")
    _add_scenario_options(p_eval)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--controller", choices=["policy", "idm", "glosa"],
                        default="policy")
    p_eval.add_argument("--checkpoint", type=Path, default=None)
    p_eval.add_argument("--export-trajectories", action="store_true")
    p_eval.set_defaults(func=_cmd_eval)

    p_exp = sub.add_parser("experiment", help="run a comparative study")
    _add_scenario_options(p_exp)
    p_exp.add_argument("study", choices=["er-vs-dr", "weight-sweep",
                                         "size-sweep"])
    p_exp.add_argument("--out", required=True)
    p_exp.add_argument("--jobs", type=int, default=1)
    p_exp.add_argument("--sizes", default=None,
                       help="comma-separated platoon sizes (size-sweep)")
    p_exp.add_argument("--ratios", default=None,
                       help="comma-separated weight ratios (weight-sweep)")
    p_exp.set_defaults(func=_cmd_experiment)

    p_plot = sub.add_parser("export-plots", help="render a time-space diagram")
    p_plot.add_argument("--trajectories", type=Path, required=True)
    p_plot.add_argument("--signal-bands", type=Path, default=None)
    p_plot.add_argument("--out", type=Path, required=True)
    p_plot.add_argument("--lane-length", type=float, default=500.0)
    p_plot.set_defaults(func=_cmd_export_plots)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # runtime failures: collisions, io, plotting
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
