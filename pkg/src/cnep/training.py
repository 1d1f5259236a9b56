"""End-to-end training, validation by regeneration, paired comparison runs,
and binary checkpointing for both model kinds.

One epoch is one optimizer step on one freshly sampled batch of trajectories,
which is the natural unit for conditioning-set models: every step resamples
observation and target points, so data augmentation is built into the loop.
Everything is deterministic given (config, seed, dataset).
"""

from __future__ import annotations

import json
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, ObservationSet, sample_batch
from .errors import CheckpointError, ConfigError, TrainingError
from .models import (
    CnepModel,
    CnmpModel,
    LossBreakdown,
    ModelConfig,
    build_cnep,
    build_parity_cnmp,
)

OPTIMIZERS = ("adam", "adaptive-moments", "sgd")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    epochs: int = 2000
    n_max: int = 5
    m_max: int = 5
    alphas: tuple[float, float, float] = (1.0, -1.0, 1.0)
    learning_rate: float = 3e-4
    optimizer: str = "adam"
    seed: int = 0
    validation_every: int = 250
    val_cond_time: float = 0.15
    rebalance_every: int = 0   # 0 disables starved-expert splitting

    def __post_init__(self):
        if self.batch_size < 1 or self.n_max < 1 or self.m_max < 1:
            raise ConfigError("batch_size, n_max and m_max must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.validation_every < 1:
            raise ConfigError("validation_every must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}, expected {OPTIMIZERS}")
        if not 0.0 <= self.val_cond_time <= 1.0:
            raise ConfigError("val_cond_time must lie in [0, 1]")
        if self.rebalance_every < 0:
            raise ConfigError("rebalance_every must be >= 0")
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))


@dataclass
class TrainReport:
    model_kind: str
    num_experts: int
    alphas: tuple[float, float, float]
    rec: np.ndarray
    batch_entropy: np.ndarray
    ind_entropy: np.ndarray
    total: np.ndarray
    val_epochs: np.ndarray
    val_mse: np.ndarray
    wall_time: float
    parameter_count: int

    @property
    def epochs(self) -> int:
        return len(self.total)

    def deterministic_fields(self) -> tuple:
        """Everything except wall-clock time, for reproducibility checks."""
        return (self.model_kind, self.num_experts, self.alphas,
                self.rec.tobytes(), self.batch_entropy.tobytes(),
                self.ind_entropy.tobytes(), self.total.tobytes(),
                self.val_epochs.tobytes(), self.val_mse.tobytes(),
                self.parameter_count)

    def to_csv(self, path):
        val_at = {int(e): v for e, v in zip(self.val_epochs, self.val_mse)}
        with open(path, "w", encoding="utf-8") as f:
            f.write("epoch,rec,batch_entropy,ind_entropy,total,val_mse\n")
            for i in range(self.epochs):
                val = repr(val_at[i]) if i in val_at else ""
                f.write(f"{i},{self.rec[i]!r},{self.batch_entropy[i]!r},"
                        f"{self.ind_entropy[i]!r},{self.total[i]!r},{val}\n")


class _Adam:
    """Adaptive-moments optimizer on one flat parameter vector."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, values: np.ndarray, grad: np.ndarray):
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        denom = np.sqrt(self.v)
        denom /= np.sqrt(1.0 - self.beta2 ** self.t)
        denom += self.eps
        step = self.m / denom
        step *= self.lr / (1.0 - self.beta1 ** self.t)
        values -= step

    def moment_arrays(self) -> tuple:
        return (self.m, self.v)


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, values: np.ndarray, grad: np.ndarray):
        values -= self.lr * grad

    def moment_arrays(self) -> tuple:
        return ()


def _make_optimizer(cfg: TrainConfig, size: int):
    if cfg.optimizer == "sgd":
        return _Sgd(cfg.learning_rate)
    return _Adam(size, cfg.learning_rate)


def validate(model, ds: Dataset, cond_time: float = 0.15) -> float:
    """Regenerate each trajectory from a single conditioning point.

    The point is the trajectory's own sample nearest to cond_time; the
    returned value is the mean over trajectories of the full-length MSE
    between predicted means and ground truth.
    """
    errs = []
    for tr in ds.trajectories:
        idx = int(np.argmin(np.abs(tr.times - cond_time)))
        obs = ObservationSet(tr.times[idx:idx + 1], tr.sm[idx:idx + 1])
        gen = model.generate(obs, tr.times)
        errs.append(float(np.mean((gen.means - tr.sm) ** 2)))
    return float(np.mean(errs))


def _probe_latents(model, ds: Dataset, cfg: TrainConfig,
                   rng: np.random.Generator, rows: int = 256) -> np.ndarray:
    """Latents of freshly sampled conditioning sets, for split directions."""
    obs_t, obs_sm, _, _ = sample_batch(ds, rows, cfg.n_max, cfg.m_max, rng)
    R, _ = model._encode_batch(obs_t, obs_sm)
    return R


def train(model, ds: Dataset, cfg: TrainConfig) -> TrainReport:
    """Run cfg.epochs optimizer steps; abort loudly on a non-finite loss.

    With rebalance_every > 0 on a gated model, a starved expert (tracked by
    an exponential moving average of the gate's column means) is periodically
    replaced by a perturbed clone of the busiest expert, a split move that
    keeps the reconstruction loss continuous while restoring expert
    utilization.
    """
    if model.dm != ds.dm:
        raise ConfigError(f"model dm {model.dm} != dataset dm {ds.dm}")
    rng = np.random.default_rng([cfg.seed, 1])
    opt = _make_optimizer(cfg, model.store.size)
    series = {k: np.empty(cfg.epochs) for k in
              ("rec", "batch_entropy", "ind_entropy", "total")}
    val_epochs, val_mse = [], []
    d = getattr(model, "d", 1)
    gate_mass = np.full(d, 1.0 / d)
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        batch = sample_batch(ds, cfg.batch_size, cfg.n_max, cfg.m_max, rng)
        model.store.zero_grad()
        bd = model.loss_and_grad(*batch, alphas=cfg.alphas)
        for name in ("rec", "batch_entropy", "ind_entropy", "total"):
            value = getattr(bd, name)
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}: component {name!r}")
            series[name][epoch] = value
        opt.step(model.store.values, model.store.grad)
        if bd.gate_mean is not None:
            gate_mass = 0.99 * gate_mass + 0.01 * bd.gate_mean
        if (cfg.rebalance_every and d > 1
                and (epoch + 1) % cfg.rebalance_every == 0):
            dead = int(np.argmin(gate_mass))
            busy = int(np.argmax(gate_mass))
            if gate_mass[dead] < 0.25 / d and gate_mass[busy] > 1.25 / d:
                probes = _probe_latents(model, ds, cfg, rng)
                model.split_expert(busy, dead, rng,
                                   extra_flats=opt.moment_arrays(),
                                   probe_latents=probes)
                gate_mass = np.full(d, 1.0 / d)
        if (epoch + 1) % cfg.validation_every == 0:
            val_epochs.append(epoch)
            val_mse.append(validate(model, ds, cfg.val_cond_time))
    return TrainReport(
        model_kind=model.kind,
        num_experts=getattr(model, "d", 1),
        alphas=cfg.alphas,
        rec=series["rec"],
        batch_entropy=series["batch_entropy"],
        ind_entropy=series["ind_entropy"],
        total=series["total"],
        val_epochs=np.array(val_epochs, dtype=np.int64),
        val_mse=np.array(val_mse),
        wall_time=time.perf_counter() - start,
        parameter_count=model.parameter_count(),
    )


def smoothed_loss(report: TrainReport, window: int = 51) -> np.ndarray:
    """Trailing moving average of the reconstruction loss on a common scale.

    CNEP's stored rec carries a 1/d factor from the gate weighting, so it is
    multiplied back by d to be comparable with the CNMP negative log
    likelihood.
    """
    series = report.rec * report.num_experts
    if len(series) == 0:
        return series.copy()
    csum = np.cumsum(series)
    out = np.empty_like(series)
    for i in range(len(series)):
        lo = max(0, i - window + 1)
        out[i] = (csum[i] - (csum[lo - 1] if lo > 0 else 0.0)) / (i - lo + 1)
    return out


def convergence_epoch(report: TrainReport, threshold: float,
                      window: int = 51) -> int | None:
    """First epoch whose smoothed comparable loss drops to the threshold."""
    sm = smoothed_loss(report, window)
    below = np.nonzero(sm <= threshold)[0]
    return int(below[0]) if len(below) else None


def _rank_abs(values: np.ndarray) -> np.ndarray:
    """Average ranks (1-based) of |values|, ties sharing the mean rank."""
    a = np.abs(values)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a))
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_signed_rank(x, y) -> float:
    """Two-sided exact p-value of the paired signed-rank test.

    Zero differences are dropped; the null distribution is enumerated by
    dynamic programming over doubled ranks (doubling makes tied average
    ranks integral), which is exact for the sample sizes used here.
    """
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        return 1.0
    ranks2 = np.rint(2.0 * _rank_abs(d)).astype(np.int64)
    w_plus = int(ranks2[d > 0].sum())
    total = int(ranks2.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in ranks2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r]
        counts += shifted
    denom = 2.0 ** n
    p_le = counts[:w_plus + 1].sum() / denom
    p_ge = counts[w_plus:].sum() / denom
    return float(min(1.0, 2.0 * min(p_le, p_ge)))


@dataclass
class ComparisonResult:
    """Paired per-seed validation errors for the two models plus a verdict."""

    seeds: list[int]
    cnmp_mse: np.ndarray
    cnep_mse: np.ndarray
    cnmp_param_count: int
    cnep_param_count: int
    p_value: float
    cnmp_reports: list[TrainReport] = field(default_factory=list)
    cnep_reports: list[TrainReport] = field(default_factory=list)

    @property
    def significant(self) -> bool:
        return self.p_value < 0.05

    def summary(self) -> dict:
        return {
            "cnmp_mean": float(self.cnmp_mse.mean()),
            "cnep_mean": float(self.cnep_mse.mean()),
            "cnmp_median": float(np.median(self.cnmp_mse)),
            "cnep_median": float(np.median(self.cnep_mse)),
            "p_value": self.p_value,
            "significant": self.significant,
        }


def resolve_seeds(seeds) -> list[int]:
    if isinstance(seeds, (int, np.integer)):
        out = list(range(int(seeds)))
    else:
        out = [int(s) for s in seeds]
    if len(out) < 2:
        raise ConfigError("comparison runs need at least 2 seeds")
    if len(set(out)) != len(out):
        raise ConfigError(f"seeds must be distinct, got {out}")
    return out


def default_workers() -> int:
    return max(1, min(4, os.cpu_count() or 1))


def parallel_map(fn, payloads, workers: int | None = None):
    """Map a picklable worker over payloads, order-preserving.

    Per-seed runs share nothing mutable, so fanning them out over processes
    changes wall time only; results come back in payload order.
    """
    workers = default_workers() if workers is None else max(1, workers)
    payloads = list(payloads)
    if workers == 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=min(workers, len(payloads))) as pool:
        return list(pool.map(fn, payloads))


def _comparison_worker(payload):
    ds, model_cfg, train_cfg, seed, keep = payload
    cfg = replace(train_cfg, seed=seed)
    cnmp = build_parity_cnmp(model_cfg, seed=seed)
    rep_m = train(cnmp, ds, cfg)
    mse_m = validate(cnmp, ds, cfg.val_cond_time)
    cnep = build_cnep(model_cfg, seed=seed)
    rep_e = train(cnep, ds, cfg)
    mse_e = validate(cnep, ds, cfg.val_cond_time)
    return mse_m, mse_e, (rep_m if keep else None), (rep_e if keep else None)


def comparison_run(ds: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
                   seeds=10, keep_reports: bool = True,
                   workers: int | None = None) -> ComparisonResult:
    """Train both models per seed under parameter parity and pair the errors.

    Parity (CNMP count within [1.0, 1.1] x CNEP count) is asserted before any
    training happens; results are ordered by the given seed list regardless
    of worker scheduling.
    """
    seed_list = resolve_seeds(seeds)
    probe_cnep = build_cnep(model_cfg, seed=0)
    probe_cnmp = build_parity_cnmp(model_cfg, seed=0)
    ratio = probe_cnmp.parameter_count() / probe_cnep.parameter_count()
    if not 1.0 <= ratio <= 1.1:
        raise ConfigError(
            f"parameter parity violated: cnmp/cnep ratio {ratio:.4f} outside [1.0, 1.1]")

    rows = parallel_map(
        _comparison_worker,
        [(ds, model_cfg, train_cfg, seed, keep_reports) for seed in seed_list],
        workers)
    cnmp_arr = np.array([r[0] for r in rows])
    cnep_arr = np.array([r[1] for r in rows])
    return ComparisonResult(
        seeds=seed_list,
        cnmp_mse=cnmp_arr,
        cnep_mse=cnep_arr,
        cnmp_param_count=probe_cnmp.parameter_count(),
        cnep_param_count=probe_cnep.parameter_count(),
        p_value=wilcoxon_signed_rank(cnmp_arr, cnep_arr),
        cnmp_reports=[r[2] for r in rows] if keep_reports else [],
        cnep_reports=[r[3] for r in rows] if keep_reports else [],
    )


_MAGIC = b"CNEPCKPT"
_FORMAT_VERSION = 1


def checkpoint(model, path):
    """Write a versioned binary checkpoint: JSON header + named float64 arrays."""
    arrays = list(model.named_params())
    header = {
        "format_version": _FORMAT_VERSION,
        "model_kind": model.kind,
        "topology": model.topology(),
        "arrays": [{"name": n, "shape": list(t.shape)} for n, t in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, t in arrays:
            f.write(t.values.astype("<f8").tobytes())


def restore(path, expect_kind: str | None = None):
    """Rebuild a model from a checkpoint, bit-exact in the weights."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < len(_MAGIC) + 8 or data[:len(_MAGIC)] != _MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", data[len(_MAGIC):len(_MAGIC) + 8])
    hstart = len(_MAGIC) + 8
    if len(data) < hstart + hlen:
        raise CheckpointError("truncated checkpoint (incomplete header)")
    try:
        header = json.loads(data[hstart:hstart + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("format_version") != _FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {header.get('format_version')!r}")
    kind = header.get("model_kind")
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(
            f"checkpoint holds a {kind!r} model, expected {expect_kind!r}")
    topo = header.get("topology", {})
    try:
        if kind == "cnmp":
            model = CnmpModel(
                dm=topo["dm"], latent_width=topo["latent_width"],
                encoder_hidden=tuple(topo["encoder_hidden"]),
                query_hidden=tuple(topo["query_hidden"]),
                activation=topo["activation"], seed=0)
        elif kind == "cnep":
            model = CnepModel(
                dm=topo["dm"], num_experts=topo["num_experts"],
                latent_width=topo["latent_width"],
                encoder_hidden=tuple(topo["encoder_hidden"]),
                expert_hidden=tuple(topo["expert_hidden"]),
                gate_hidden=tuple(topo["gate_hidden"]),
                activation=topo["activation"], seed=0)
        else:
            raise CheckpointError(f"unknown model_kind {kind!r}")
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"incomplete checkpoint topology: {exc}") from exc

    expected = list(model.named_params())
    declared = header.get("arrays", [])
    if [a["name"] for a in declared] != [n for n, _ in expected]:
        raise CheckpointError("checkpoint array names do not match the topology")
    offset = hstart + hlen
    for decl, (name, tensor) in zip(declared, expected):
        if tuple(decl["shape"]) != tensor.shape:
            raise CheckpointError(f"array {name!r} has shape {decl['shape']}, "
                                  f"expected {list(tensor.shape)}")
        nbytes = tensor.values.size * 8
        if offset + nbytes > len(data):
            raise CheckpointError(f"truncated checkpoint (array {name!r})")
        flat = np.frombuffer(data, dtype="<f8", count=tensor.values.size, offset=offset)
        tensor.values[:] = flat.reshape(tensor.shape)
        offset += nbytes
    if offset != len(data):
        raise CheckpointError("checkpoint has trailing bytes")
    return model
