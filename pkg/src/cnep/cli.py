"""Command-line surface: gen-data, train, eval, bench, generate, refine.

Exit codes: 0 success, 1 metric-assertion failure (bench --check),
2 usage/config error, 3 I/O error.  Numeric output prints with six
significant digits; files keep full precision.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .bench import SCENARIO_NAMES, export, run_scenario
from .config import AppConfig, DataSettings, ModelSettings, load_config, save_obstacle_block
from .data import Dataset, ObservationSet, gen_intersecting, gen_obstacle_pair, gen_sines, load_dataset, save_dataset
from .errors import CheckpointError, ConfigError, DatasetParseError
from .models import ModelConfig, build_cnep, build_parity_cnmp, CnmpModel
from .pid import refine
from .training import checkpoint, restore, train, validate


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _build_dataset(data: DataSettings):
    if data.path:
        return load_dataset(data.path), None
    if data.family == "sines":
        return gen_sines(data.modes, data.samples_per_mode, data.grid, data.seed), None
    if data.family == "intersecting":
        return gen_intersecting(data.grid, data.seed), None
    ds, box = gen_obstacle_pair(data.grid, data.seed)
    return ds, box


def _build_model(settings: ModelSettings, dm: int, seed: int):
    cfg = ModelConfig(dm=dm, num_experts=settings.num_experts,
                      latent_width=settings.latent_width,
                      encoder_hidden=settings.encoder_hidden,
                      expert_hidden=settings.expert_hidden,
                      gate_hidden=settings.gate_hidden,
                      activation=settings.activation)
    if settings.kind == "cnep":
        return build_cnep(cfg, seed)
    if settings.query_hidden is not None:
        return CnmpModel(dm, settings.latent_width, settings.encoder_hidden,
                         settings.query_hidden, settings.activation, seed)
    return build_parity_cnmp(cfg, seed)


def _parse_conditions(raw: str, dm: int) -> ObservationSet:
    """Parse `t:v0[:v1...]` tuples separated by commas."""
    times, values = [], []
    for chunk in raw.split(","):
        parts = chunk.strip().split(":")
        if len(parts) != dm + 1:
            raise ConfigError(
                f"condition {chunk!r}: expected t plus {dm} value(s)")
        try:
            nums = [float(p) for p in parts]
        except ValueError:
            raise ConfigError(f"condition {chunk!r}: not numeric")
        times.append(nums[0])
        values.append(nums[1:])
    try:
        return ObservationSet(times, values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _write_generation(path, times, means, stds):
    dm = means.shape[1]
    cols = [f"mean_{k}" for k in range(dm)] + [f"std_{k}" for k in range(dm)]
    with open(path, "w", encoding="utf-8") as f:
        f.write("t," + ",".join(cols) + "\n")
        for i, t in enumerate(times):
            row = [repr(float(t))]
            row += [repr(float(v)) for v in means[i]]
            row += [repr(float(v)) for v in stds[i]]
            f.write(",".join(row) + "\n")


def _read_generation(path):
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith("t,"):
        raise DatasetParseError(f"{path}: not a generated-trajectory CSV")
    header = lines[0].split(",")
    dm = sum(1 for h in header if h.startswith("mean_"))
    if dm == 0:
        raise DatasetParseError(f"{path}: no mean_* columns")
    times, means, stds = [], [], []
    for rownum, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != len(header):
            raise DatasetParseError(f"{path} row {rownum}: ragged row")
        vals = [float(v) for v in fields]
        times.append(vals[0])
        means.append(vals[1:1 + dm])
        stds.append(vals[1 + dm:1 + 2 * dm])
    return np.array(times), np.array(means), np.array(stds)


def _load_app_config(args) -> AppConfig:
    cfg = load_config(args.config) if args.config else AppConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    if getattr(args, "epochs", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    return cfg


def _cmd_gen_data(args) -> int:
    cfg = load_config(args.config) if args.config else AppConfig()
    data = cfg.data
    if args.family:
        data = replace(data, family=args.family)
    if args.modes is not None:
        data = replace(data, modes=args.modes)
    if args.samples_per_mode is not None:
        data = replace(data, samples_per_mode=args.samples_per_mode)
    if args.grid is not None:
        data = replace(data, grid=args.grid)
    if args.seed is not None:
        data = replace(data, seed=args.seed)
    data = replace(data, path=None)
    ds, box = _build_dataset(data)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} trajectories (T={ds.T}, dm={ds.dm}) to {args.out}")
    if box is not None and args.obstacle_out:
        save_obstacle_block(box, args.obstacle_out)
        print(f"wrote obstacle block to {args.obstacle_out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_app_config(args)
    model_settings = cfg.model if args.model is None else replace(cfg.model, kind=args.model)
    data = cfg.data if args.data is None else replace(cfg.data, path=args.data)
    ds, _ = _build_dataset(data)
    model = _build_model(model_settings, ds.dm, cfg.train.seed)
    report = train(model, ds, cfg.train)
    final = validate(model, ds, cfg.train.val_cond_time)
    print(f"{model.kind}: {model.parameter_count()} parameters, "
          f"{report.epochs} epochs, final val MSE {_fmt(final)}")
    if args.out:
        checkpoint(model, args.out)
        print(f"wrote checkpoint to {args.out}")
    if args.report:
        report.to_csv(args.report)
        print(f"wrote training report to {args.report}")
    return 0


def _cmd_eval(args) -> int:
    model = restore(args.checkpoint)
    ds = load_dataset(args.data)
    mse = validate(model, ds, args.cond_time)
    print(f"{model.kind} val MSE: {_fmt(mse)}")
    return 0


_CHECKS = {
    "sines-1": lambda r: (r.metrics["cnep"]["val_mse"] < 0.05
                          and r.metrics["cnmp"]["val_mse"] < 0.05),
    "sines-2": lambda r: r.metrics["cnep"]["val_mse"] < r.metrics["cnmp"]["val_mse"],
    "sines-3": lambda r: r.metrics["cnep"]["val_mse"] < r.metrics["cnmp"]["val_mse"],
    "sines-4": lambda r: r.metrics["cnep"]["val_mse"] < r.metrics["cnmp"]["val_mse"],
    "intersecting": lambda r: (r.metrics["cnep"]["mode_fidelity_center"]
                               < r.metrics["cnmp"]["mode_fidelity_center"]),
    "obstacle": lambda r: (r.metrics["cnep"]["collision_rate"] == 0.0
                           and r.metrics["cnmp"]["collision_rate"] >= 0.5),
}


def _cmd_bench(args) -> int:
    cfg = _load_app_config(args)
    result = run_scenario(args.scenario, seeds=args.seeds, train_cfg=cfg.train,
                          data_seed=args.data_seed)
    print(f"scenario {result.scenario} over seeds {result.seeds}")
    for model in sorted(result.metrics):
        stats = "  ".join(f"{k}={_fmt(v)}" for k, v in sorted(result.metrics[model].items()))
        print(f"  {model}: {stats}")
    if result.p_value is not None:
        print(f"  paired rank test p={_fmt(result.p_value)}")
    if args.out:
        export(result, args.format, args.out)
        print(f"wrote {args.format} results to {args.out}")
    if args.check and not _CHECKS[result.scenario](result):
        print("metric check FAILED", file=sys.stderr)
        return 1
    return 0


def _cmd_generate(args) -> int:
    model = restore(args.checkpoint)
    obs = _parse_conditions(args.condition, model.dm)
    times = np.linspace(0.0, 1.0, args.grid)
    gen = model.generate(obs, times)
    means, stds = gen.means, gen.stds
    if gen.chosen_expert is not None:
        print(f"chosen expert: {gen.chosen_expert} "
              f"(p={_fmt(float(gen.gate_probs.max()))})")
    if args.pid:
        cfg = load_config(args.config).pid if args.config else None
        from .pid import PidConfig
        means = refine(times, means, obs, cfg or PidConfig())
    if args.out:
        _write_generation(args.out, times, means, stds)
        print(f"wrote generated trajectory to {args.out}")
    else:
        for i in (0, len(times) // 2, len(times) - 1):
            vals = " ".join(_fmt(v) for v in means[i])
            print(f"t={_fmt(times[i])}: {vals}")
    return 0


def _cmd_refine(args) -> int:
    times, means, stds = _read_generation(args.input)
    obs = _parse_conditions(args.condition, means.shape[1])
    pid_cfg = load_config(args.config).pid if args.config else None
    from .pid import PidConfig
    refined = refine(times, means, obs, pid_cfg or PidConfig())
    _write_generation(args.out, times, refined, stds)
    print(f"wrote refined trajectory to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cnep",
        description="Gated mixture-of-experts movement primitives: "
                    "data generation, training, benchmarks, and refinement.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset CSV")
    p.add_argument("--config")
    p.add_argument("--family", choices=("sines", "intersecting", "obstacle"))
    p.add_argument("--modes", type=int)
    p.add_argument("--samples-per-mode", type=int)
    p.add_argument("--grid", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--obstacle-out")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--data", help="dataset CSV (overrides [data] in config)")
    p.add_argument("--model", choices=("cnmp", "cnep"))
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--report", help="training report CSV path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="validation MSE of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--cond-time", type=float, default=0.15)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="run a benchmark scenario")
    p.add_argument("--scenario", required=True,
                   help=f"one of: {', '.join(SCENARIO_NAMES)}")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--data-seed", type=int, default=11)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--check", action="store_true",
                   help="exit 1 unless the scenario's expected ordering holds")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("generate", help="generate a trajectory from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--condition", required=True,
                   help="conditioning tuples t:v0[:v1...] separated by commas")
    p.add_argument("--grid", type=int, default=200)
    p.add_argument("--pid", action="store_true",
                   help="apply PID refinement through the conditioning points")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("refine", help="PID-refine a generated trajectory CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--condition", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_refine)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetParseError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
