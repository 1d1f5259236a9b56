"""Benchmark scenarios, scenario metrics, and result export.

Six scenarios cover the three synthetic families: sines-1..4 measure
validation MSE and convergence speed under parameter parity, intersecting
measures mode commitment when conditioning at curve intersections, and
obstacle measures collision rates when conditioning midway between the two
demonstrated starts.  Every scenario is a pure function of (name, configs,
seeds), so exports are byte-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, ObservationSet, gen_intersecting, gen_obstacle_pair, gen_sines
from .errors import ConfigError
from .geometry import ObstacleSpec, collision_check
from .models import ModelConfig, build_cnep, build_parity_cnmp
from .training import (
    TrainConfig,
    comparison_run,
    convergence_epoch,
    parallel_map,
    resolve_seeds,
    train,
    validate,
    wilcoxon_signed_rank,
)

SCENARIO_NAMES = ("sines-1", "sines-2", "sines-3", "sines-4",
                  "intersecting", "obstacle")

# Fixed evaluation constants shared by the scenarios and the acceptance suite.
DATA_SEED = 11
CONVERGENCE_THRESHOLD = 0.7     # on the comparable reconstruction NLL scale
CONVERGENCE_WINDOW = 51         # trailing moving-average width, in epochs
INTERSECT_TIME_WINDOW = 0.02    # half-width of the region around a common point
EXPORT_FORMATS = ("csv", "json")


@dataclass
class BenchResult:
    scenario: str
    seeds: list[int]
    metrics: dict = field(default_factory=dict)    # model -> {metric: aggregate}
    per_seed: dict = field(default_factory=dict)   # model -> {metric: [per-seed]}
    p_value: float | None = None


_SCENARIO_EXPERTS = {"sines-1": 2, "sines-2": 2, "sines-3": 3, "sines-4": 4,
                     "intersecting": 4, "obstacle": 2}


def scenario_model_config(name: str) -> ModelConfig:
    """Topology used by the named scenario: expert count matches the mode
    count (minimum two), planar data for the obstacle task."""
    return ModelConfig(
        dm=2 if name == "obstacle" else 1,
        num_experts=_SCENARIO_EXPERTS.get(name, 2),
        latent_width=32,
        encoder_hidden=(32, 32),
        expert_hidden=(32, 32),
        gate_hidden=(16,),
    )


def scenario_train_config(name: str) -> TrainConfig:
    """Training recipe used by the named scenario.

    Multimodal runs need small conditioning sets (the ambiguity they create
    is what pushes the gate to commit to one expert per mode), a large
    batch for a meaningful batch-entropy signal, and a long schedule; the
    unimodal sanity scenario converges much sooner.
    """
    epochs = {"sines-1": 6000}.get(name, 20000)
    return TrainConfig(
        batch_size=32,
        epochs=epochs,
        n_max=2,
        m_max=10,
        alphas=(1.0, -2.0, 0.2),
        learning_rate=1e-3,
        optimizer="adam",
        seed=0,
        validation_every=max(1, epochs // 10),
        val_cond_time=0.15,
    )


def mode_fidelity(generated: np.ndarray, demos: Dataset) -> float:
    """Min over demonstrations of the pointwise MSE against the generation.

    Low values mean the output commits to one demonstrated mode; an average
    of symmetric modes stays far from all of them and scores high.
    """
    gen = np.asarray(generated, dtype=np.float64)
    if gen.ndim == 1:
        gen = gen[:, None]
    errs = [float(np.mean((gen - tr.sm) ** 2)) for tr in demos.trajectories]
    return min(errs)


def _train_pair(ds: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig, seed: int):
    cfg = replace(train_cfg, seed=seed)
    cnmp = build_parity_cnmp(model_cfg, seed=seed)
    rep_m = train(cnmp, ds, cfg)
    cnep = build_cnep(model_cfg, seed=seed)
    rep_e = train(cnep, ds, cfg)
    return cnmp, rep_m, cnep, rep_e


def _assert_parity(model_cfg: ModelConfig):
    ratio = (build_parity_cnmp(model_cfg, 0).parameter_count()
             / build_cnep(model_cfg, 0).parameter_count())
    if not 1.0 <= ratio <= 1.1:
        raise ConfigError(f"parameter parity violated: ratio {ratio:.4f}")


def _scenario_sines(k: int, seeds, train_cfg: TrainConfig, data_seed: int,
                    workers: int | None) -> BenchResult:
    ds = gen_sines(k, samples_per_mode=20, T=200, seed=data_seed)
    model_cfg = scenario_model_config(f"sines-{k}")
    comp = comparison_run(ds, model_cfg, train_cfg, seeds, keep_reports=True,
                          workers=workers)
    result = BenchResult(f"sines-{k}", comp.seeds)
    for model, mses, reports in (("cnmp", comp.cnmp_mse, comp.cnmp_reports),
                                 ("cnep", comp.cnep_mse, comp.cnep_reports)):
        conv = [convergence_epoch(r, CONVERGENCE_THRESHOLD, CONVERGENCE_WINDOW)
                for r in reports]
        # an unconverged run reports the epoch budget itself (finite, orderable)
        conv = [float(c) if c is not None else float(train_cfg.epochs) for c in conv]
        result.per_seed[model] = {
            "val_mse": [float(v) for v in mses],
            "convergence_epoch": conv,
        }
        result.metrics[model] = {
            "val_mse": float(np.median(mses)),
            "convergence_epoch": float(np.median(conv)),
        }
    result.p_value = comp.p_value
    return result


def _intersect_conditioning(center: float) -> list[float]:
    ts = [center - INTERSECT_TIME_WINDOW, center, center + INTERSECT_TIME_WINDOW]
    return sorted({min(1.0, max(0.0, t)) for t in ts})


def _intersect_worker(payload):
    ds, model_cfg, train_cfg, seed, region, center = payload
    grid = ds.trajectories[0].times
    cnmp, _, cnep, _ = _train_pair(ds, model_cfg, train_cfg, seed)
    out = {}
    for name, model in (("cnmp", cnmp), ("cnep", cnep)):
        fids = [mode_fidelity(model.generate(ObservationSet([t], [[v]]), grid).means, ds)
                for t, v in region]
        center_gen = model.generate(ObservationSet([center[0]], [[center[1]]]), grid)
        out[name] = {
            "mode_fidelity": float(np.mean(fids)),
            "mode_fidelity_center": mode_fidelity(center_gen.means, ds),
            "gate_max_p": float(center_gen.gate_probs.max()) if name == "cnep" else 0.0,
        }
    return out


def _scenario_intersecting(seeds, train_cfg: TrainConfig, data_seed: int,
                           workers: int | None) -> BenchResult:
    ds = gen_intersecting(T=200, seed=data_seed)
    model_cfg = scenario_model_config("intersecting")
    _assert_parity(model_cfg)
    seed_list = resolve_seeds(seeds)
    common = [(float(t), float(v)) for t, v in ds.meta["common_points"]]
    center = (0.5, dict(common)[0.5])
    region = [(t, v) for (tc, v) in common for t in _intersect_conditioning(tc)]

    rows = parallel_map(
        _intersect_worker,
        [(ds, model_cfg, train_cfg, seed, region, center) for seed in seed_list],
        workers)
    result = BenchResult("intersecting", seed_list)
    for m in ("cnmp", "cnep"):
        result.per_seed[m] = {k: [row[m][k] for row in rows]
                              for k in rows[0][m]}
        result.metrics[m] = {k: float(np.median(v))
                             for k, v in result.per_seed[m].items()}
    result.p_value = wilcoxon_signed_rank(
        result.per_seed["cnmp"]["mode_fidelity_center"],
        result.per_seed["cnep"]["mode_fidelity_center"])
    return result


def _obstacle_worker(payload):
    ds, box, model_cfg, train_cfg, seed, midpoint = payload
    grid = ds.trajectories[0].times
    obs = ObservationSet([0.0], [midpoint])
    cnmp, _, cnep, _ = _train_pair(ds, model_cfg, train_cfg, seed)
    out = {}
    for name, model in (("cnmp", cnmp), ("cnep", cnep)):
        gen = model.generate(obs, grid)
        collided, _ = collision_check(gen.means, box)
        out[name] = {
            "collision": 1.0 if collided else 0.0,
            "val_mse": validate(model, ds, train_cfg.val_cond_time),
        }
    return out


def _scenario_obstacle(seeds, train_cfg: TrainConfig, data_seed: int,
                       workers: int | None) -> BenchResult:
    ds, box = gen_obstacle_pair(T=200, seed=data_seed)
    model_cfg = scenario_model_config("obstacle")
    _assert_parity(model_cfg)
    seed_list = resolve_seeds(seeds)
    midpoint = np.stack([tr.sm[0] for tr in ds.trajectories]).mean(axis=0)

    rows = parallel_map(
        _obstacle_worker,
        [(ds, box, model_cfg, train_cfg, seed, midpoint) for seed in seed_list],
        workers)
    result = BenchResult("obstacle", seed_list)
    for m in ("cnmp", "cnep"):
        result.per_seed[m] = {k: [row[m][k] for row in rows] for k in rows[0][m]}
        result.metrics[m] = {
            "collision_rate": float(np.mean(result.per_seed[m]["collision"])),
            "val_mse": float(np.median(result.per_seed[m]["val_mse"])),
        }
    return result


def run_scenario(name: str, seeds=10, train_cfg: TrainConfig | None = None,
                 data_seed: int = DATA_SEED,
                 workers: int | None = None) -> BenchResult:
    """Run one named scenario; unknown names raise a usage error."""
    if train_cfg is None:
        train_cfg = scenario_train_config(name)
    if name.startswith("sines-"):
        try:
            k = int(name.split("-", 1)[1])
        except ValueError:
            k = -1
        if 1 <= k <= 4:
            return _scenario_sines(k, seeds, train_cfg, data_seed, workers)
    if name == "intersecting":
        return _scenario_intersecting(seeds, train_cfg, data_seed, workers)
    if name == "obstacle":
        return _scenario_obstacle(seeds, train_cfg, data_seed, workers)
    raise ConfigError(f"unknown scenario {name!r}; valid names: {', '.join(SCENARIO_NAMES)}")


def export(result: BenchResult, fmt: str, path):
    """Write a BenchResult as long-format CSV or structured JSON.

    Output is fully determined by the result: stable ordering, repr floats,
    no timestamps, so re-exporting the same result is byte-identical.
    """
    if fmt not in EXPORT_FORMATS:
        raise ConfigError(
            f"unknown export format {fmt!r}; valid formats: {', '.join(EXPORT_FORMATS)}")
    if fmt == "json":
        payload = {
            "scenario": result.scenario,
            "seeds": list(result.seeds),
            "metrics": result.metrics,
            "per_seed": result.per_seed,
            "p_value": result.p_value,
        }
        text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    else:
        lines = ["scenario,model,seed,metric,value"]
        for model in sorted(result.per_seed):
            for metric in sorted(result.per_seed[model]):
                for seed, value in zip(result.seeds, result.per_seed[model][metric]):
                    lines.append(
                        f"{result.scenario},{model},{seed},{metric},{value!r}")
        for model in sorted(result.metrics):
            for metric in sorted(result.metrics[model]):
                lines.append(f"{result.scenario},{model},all,{metric},"
                             f"{result.metrics[model][metric]!r}")
        if result.p_value is not None:
            lines.append(f"{result.scenario},paired,all,p_value,{result.p_value!r}")
        text = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(text)
