"""Trajectory data model, synthetic dataset families, sampling, and CSV I/O.

A trajectory is an ordered list of (time, sensorimotor-vector) samples with
times normalized to [0, 1].  The three generator families (sine waves of
increasing modality, intersecting curves, and a mirrored obstacle-avoidance
pair) are all pure functions of (config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetParseError
from .geometry import ObstacleSpec


@dataclass
class Trajectory:
    times: np.ndarray          # (T,), strictly increasing, in [0, 1]
    sm: np.ndarray             # (T, dm)
    id: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.sm = np.asarray(self.sm, dtype=np.float64)
        if self.sm.ndim == 1:
            self.sm = self.sm[:, None]
        if self.times.ndim != 1 or self.sm.shape[0] != self.times.shape[0]:
            raise ValueError("times and sm must have matching leading length")
        if len(self.times) < 2:
            raise ValueError("a trajectory needs at least two samples")
        if not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(self.times)) and np.all(np.isfinite(self.sm))):
            raise ValueError("trajectory contains non-finite entries")

    @property
    def T(self) -> int:
        return len(self.times)

    @property
    def dm(self) -> int:
        return self.sm.shape[1]


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    dm: int
    offset: np.ndarray = None   # per-dimension normalization offset
    scale: np.ndarray = None    # per-dimension normalization scale
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.trajectories:
            raise ValueError("a dataset needs at least one trajectory")
        if self.offset is None:
            self.offset = np.zeros(self.dm)
        if self.scale is None:
            self.scale = np.ones(self.dm)
        self.offset = np.asarray(self.offset, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        T = self.trajectories[0].T
        for tr in self.trajectories:
            if tr.dm != self.dm:
                raise ValueError(f"trajectory {tr.id!r} has dm={tr.dm}, dataset dm={self.dm}")
            if tr.T != T:
                raise ValueError("all trajectories in a dataset must share T")

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def T(self) -> int:
        return self.trajectories[0].T

    def sm_stack(self) -> np.ndarray:
        """All trajectories as one (N, T, dm) array."""
        return np.stack([tr.sm for tr in self.trajectories])

    def normalized(self) -> "Dataset":
        """Rescale each SM dimension to [-1, 1] by midrange/halfrange; times to [0, 1]."""
        stack = self.sm_stack()
        lo = stack.min(axis=(0, 1))
        hi = stack.max(axis=(0, 1))
        offset = (hi + lo) / 2.0
        scale = np.where(hi > lo, (hi - lo) / 2.0, 1.0)
        trajs = []
        for tr in self.trajectories:
            t = tr.times
            t = (t - t[0]) / (t[-1] - t[0])
            trajs.append(Trajectory(t, (tr.sm - offset) / scale, tr.id))
        return Dataset(trajs, self.dm, offset, scale, dict(self.meta))

    def denormalized(self) -> "Dataset":
        """Invert the stored (offset, scale) mapping on the SM values."""
        trajs = [Trajectory(tr.times, tr.sm * self.scale + self.offset, tr.id)
                 for tr in self.trajectories]
        return Dataset(trajs, self.dm, meta=dict(self.meta))


@dataclass
class ObservationSet:
    """Conditioning tuples (t, SM(t)) supplied to a model."""

    times: np.ndarray           # (n,)
    values: np.ndarray          # (n, dm)

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=np.float64))
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if len(self.times) < 1:
            raise ValueError("an observation set needs at least one tuple")
        if len(np.unique(self.times)) != len(self.times):
            raise ValueError("observation times must be distinct")
        if self.values.shape[0] != self.times.shape[0]:
            raise ValueError("times and values must align")

    def __len__(self) -> int:
        return len(self.times)


def _time_grid(T: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, T)


def gen_sines(num_modes: int, samples_per_mode: int = 20, T: int = 200,
              seed: int = 0) -> Dataset:
    """Sine waves of 1..num_modes full cycles over [0, 1], dm = 1.

    Mode k is sin(2*pi*k*t); each sample scales the amplitude by a factor
    drawn from U(0.98, 1.02) so every mode is a cluster of near-duplicates.
    """
    if num_modes < 1:
        raise ValueError("num_modes must be >= 1")
    rng = np.random.default_rng(seed)
    times = _time_grid(T)
    trajs = []
    for k in range(1, num_modes + 1):
        base = np.sin(2.0 * np.pi * k * times)
        for s in range(samples_per_mode):
            amp = 1.0 + rng.uniform(-0.02, 0.02)
            trajs.append(Trajectory(times, amp * base, f"sine{k}-{s:02d}"))
    return Dataset(trajs, dm=1, meta={"family": "sines", "num_modes": num_modes})


# Noiseless base curves of the intersecting family; all four are zero at
# t in {0, 0.5, 1}, which the benchmark uses as conditioning points.
INTERSECTING_CURVES = (
    lambda t: np.sin(2.0 * np.pi * t),
    lambda t: -np.sin(2.0 * np.pi * t),
    lambda t: np.sin(4.0 * np.pi * t),
    lambda t: -np.sin(4.0 * np.pi * t),
)

INTERSECTING_COMMON_POINTS = ((0.0, 0.0), (0.5, 0.0), (1.0, 0.0))


def gen_intersecting(T: int = 200, seed: int = 0) -> Dataset:
    """Four distinct one-dimensional curves sharing the value 0 at t = 0.5."""
    rng = np.random.default_rng(seed)
    times = _time_grid(T)
    trajs = []
    for i, curve in enumerate(INTERSECTING_CURVES):
        amp = 1.0 + rng.uniform(-0.02, 0.02)
        trajs.append(Trajectory(times, amp * curve(times), f"mix{i}"))
    return Dataset(trajs, dm=1, meta={
        "family": "intersecting",
        "common_points": [list(p) for p in INTERSECTING_COMMON_POINTS],
    })


def gen_obstacle_pair(T: int = 200, seed: int = 0) -> tuple[Dataset, ObstacleSpec]:
    """Two planar demos from (0,0) to (1,0) arcing over/under a box obstacle.

    The upper arc peaks near (0.5, 0.4), the lower near (0.5, -0.4); the
    obstacle is the axis-aligned box centered at (0.5, 0) with half-extents
    (0.1, 0.15), which both demonstrations clear.
    """
    rng = np.random.default_rng(seed)
    times = _time_grid(T)
    arc = np.sin(np.pi * times)
    trajs = []
    for name, sign in (("upper", 1.0), ("lower", -1.0)):
        amp = 0.4 * (1.0 + rng.uniform(-0.02, 0.02))
        sm = np.stack([times, sign * amp * arc], axis=1)
        trajs.append(Trajectory(times, sm, name))
    obstacle = ObstacleSpec(center=(0.5, 0.0), half_extents=(0.1, 0.15))
    ds = Dataset(trajs, dm=2, meta={"family": "obstacle"})
    return ds, obstacle


def sample_obs_targets(traj: Trajectory, n_max: int, m_max: int,
                       rng: np.random.Generator):
    """Draw n ~ U{1..n_max} observations and m ~ U{1..m_max} targets.

    Both index sets are drawn without replacement from the trajectory grid
    (independently of each other, so they may overlap).  Returns the
    observation set, the target times, and the ground-truth SM rows.
    """
    if not (1 <= n_max <= traj.T and 1 <= m_max <= traj.T):
        raise ValueError("n_max and m_max must be in [1, T]")
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    obs_idx = rng.choice(traj.T, size=n, replace=False)
    tgt_idx = rng.choice(traj.T, size=m, replace=False)
    obs = ObservationSet(traj.times[obs_idx], traj.sm[obs_idx])
    return obs, traj.times[tgt_idx].copy(), traj.sm[tgt_idx].copy()


def sample_batch(ds: Dataset, batch_size: int, n_max: int, m_max: int,
                 rng: np.random.Generator):
    """Rectangular training batch with n and m shared across the batch.

    Returns (obs_t, obs_sm, tgt_t, tgt_sm) of shapes (b,n), (b,n,dm),
    (b,m), (b,m,dm).
    """
    T = ds.T
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    idx = rng.integers(0, len(ds), size=batch_size)
    obs_t = np.empty((batch_size, n))
    obs_sm = np.empty((batch_size, n, ds.dm))
    tgt_t = np.empty((batch_size, m))
    tgt_sm = np.empty((batch_size, m, ds.dm))
    for i, j in enumerate(idx):
        tr = ds.trajectories[j]
        oi = rng.choice(T, size=n, replace=False)
        ti = rng.choice(T, size=m, replace=False)
        obs_t[i] = tr.times[oi]
        obs_sm[i] = tr.sm[oi]
        tgt_t[i] = tr.times[ti]
        tgt_sm[i] = tr.sm[ti]
    return obs_t, obs_sm, tgt_t, tgt_sm


def save_dataset(ds: Dataset, path):
    """Write the documented CSV layout: traj_id,t,sm_0,...,sm_{dm-1}."""
    cols = ",".join(f"sm_{k}" for k in range(ds.dm))
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"traj_id,t,{cols}\n")
        for tr in ds.trajectories:
            for t, row in zip(tr.times, tr.sm):
                vals = ",".join(repr(float(v)) for v in row)
                f.write(f"{tr.id},{repr(float(t))},{vals}\n")


def load_dataset(path) -> Dataset:
    """Parse the CSV layout written by save_dataset, validating as it goes."""
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise DatasetParseError("no trajectories: file is empty")
    header = lines[0].split(",")
    if len(header) < 3 or header[0] != "traj_id" or header[1] != "t":
        raise DatasetParseError(f"row 1: malformed header {lines[0]!r}")
    dm = len(header) - 2
    for k, name in enumerate(header[2:]):
        if name != f"sm_{k}":
            raise DatasetParseError(f"row 1: expected column sm_{k}, got {name!r}")

    groups: dict[str, list[tuple[float, list[float]]]] = {}
    order: list[str] = []
    prev_id = None
    for rownum, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != dm + 2:
            raise DatasetParseError(
                f"row {rownum}: expected {dm + 2} fields, got {len(fields)}")
        tid = fields[0]
        if tid != prev_id and tid in groups:
            raise DatasetParseError(
                f"row {rownum}: trajectory {tid!r} is not contiguous")
        try:
            t = float(fields[1])
        except ValueError:
            raise DatasetParseError(f"row {rownum}, column t: not a number: {fields[1]!r}")
        if math.isnan(t) or math.isinf(t):
            raise DatasetParseError(f"row {rownum}, column t: non-finite value")
        sm_row = []
        for k, cell in enumerate(fields[2:]):
            try:
                v = float(cell)
            except ValueError:
                raise DatasetParseError(
                    f"row {rownum}, column sm_{k}: not a number: {cell!r}")
            if math.isnan(v) or math.isinf(v):
                raise DatasetParseError(f"row {rownum}, column sm_{k}: non-finite value")
            sm_row.append(v)
        if tid not in groups:
            groups[tid] = []
            order.append(tid)
        elif groups[tid] and t <= groups[tid][-1][0]:
            raise DatasetParseError(f"row {rownum}: non-monotone time {t!r}")
        groups[tid].append((t, sm_row))
        prev_id = tid

    if not groups:
        raise DatasetParseError("no trajectories: file has a header but no rows")
    trajs = []
    for tid in order:
        rows = groups[tid]
        times = np.array([r[0] for r in rows])
        sm = np.array([r[1] for r in rows])
        try:
            trajs.append(Trajectory(times, sm, tid))
        except ValueError as exc:
            raise DatasetParseError(f"trajectory {tid!r}: {exc}") from exc
    T = trajs[0].T
    for tr in trajs:
        if tr.T != T:
            raise DatasetParseError(
                f"trajectory {tr.id!r} has {tr.T} rows, expected {T}")
    return Dataset(trajs, dm=dm)
