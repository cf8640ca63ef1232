"""Synthetic demonstration corpus with known ground-truth skills.

A demonstration is a sequence of straight-line segments. Each segment follows
one of K primitive directions (unit vectors at angles 2*pi*j/K in the first
two dimensions), holds it for a sampled number of steps, and adds isotropic
Gaussian noise to every action. States integrate actions exactly:
s_{t+1} = s_t + a_t from the origin. Consecutive segments never repeat a
primitive, so the labeled boundaries always mark a real behavior change.

Trajectories are exchanged as JSONL (one object per line, float64 values
round-tripped losslessly through repr) with normalization statistics in a
separate stats.json sidecar, computed on the training split only.

Per-demonstration RNG streams are derived as default_rng([seed, index]), so
generation order is irrelevant and any demonstration can be regenerated in
isolation.
"""

import json
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, InputError, SchemaError


@dataclass
class CorpusSpec:
    """Generator settings. Ranges are inclusive on both ends."""

    num_primitives: int = 4
    dim: int = 2
    segments_range: tuple = (3, 5)
    segment_length_range: tuple = (5, 10)
    action_noise: float = 0.05
    demo_count: int = 500
    seed: int = 0

    def validate(self):
        if self.num_primitives < 2:
            raise ConfigError(f"num_primitives must be >= 2, got {self.num_primitives}")
        if self.dim < 2:
            raise ConfigError(f"dim must be >= 2, got {self.dim}")
        lo, hi = self.segments_range
        if not (1 <= lo <= hi):
            raise ConfigError(f"segments_range must satisfy 1 <= lo <= hi, got {self.segments_range}")
        llo, lhi = self.segment_length_range
        if not (2 <= llo <= lhi):
            raise ConfigError(
                f"segment_length_range must satisfy 2 <= lo <= hi, got {self.segment_length_range}"
            )
        if self.action_noise < 0:
            raise ConfigError(f"action_noise must be >= 0, got {self.action_noise}")
        if self.demo_count < 1:
            raise ConfigError(f"demo_count must be >= 1, got {self.demo_count}")
        return self


@dataclass
class Trajectory:
    """One demonstration: states and the actions taken at them, equal length.

    labels[t] is the primitive generating actions[t]; boundaries are the
    1-based first steps of each segment (so they always contain 1). Both are
    optional; corpus-generated data carries them, rolled-out data may not.
    """

    states: np.ndarray
    actions: np.ndarray
    task_id: Optional[int] = None
    labels: Optional[np.ndarray] = None
    boundaries: Optional[list] = None

    def __post_init__(self):
        self.states = np.ascontiguousarray(self.states, dtype=np.float64)
        self.actions = np.ascontiguousarray(self.actions, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def length(self) -> int:
        return self.states.shape[0]

    def validate(self, min_len: int = 1):
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise InputError("trajectory arrays must be 2-d")
        if self.states.shape[0] != self.actions.shape[0]:
            raise InputError(
                f"states length {self.states.shape[0]} != actions length {self.actions.shape[0]}"
            )
        if self.states.shape[0] < min_len:
            raise InputError(f"trajectory length {self.states.shape[0]} < {min_len}")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.actions))):
            raise InputError("trajectory contains non-finite values")
        if self.labels is not None and self.labels.shape != (self.length,):
            raise InputError(
                f"labels shape {self.labels.shape} != ({self.length},)"
            )
        if self.boundaries is not None:
            bs = list(self.boundaries)
            if not bs or bs[0] != 1 or bs != sorted(set(bs)) or bs[-1] > self.length:
                raise InputError(f"boundaries must be sorted unique 1-based starting at 1, got {bs}")
        return self


@dataclass
class NormStats:
    """Per-dimension affine normalization: x_norm = (x - mean) / scale."""

    state_mean: np.ndarray
    state_scale: np.ndarray
    action_mean: np.ndarray
    action_scale: np.ndarray


@dataclass
class Dataset:
    trajectories: list = field(default_factory=list)
    stats: Optional[NormStats] = None

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)


def primitive_directions(num_primitives: int, dim: int) -> np.ndarray:
    """Unit direction vectors at angles 2*pi*j/K in the leading plane."""
    angles = 2.0 * np.pi * np.arange(num_primitives) / num_primitives
    dirs = np.zeros((num_primitives, dim))
    dirs[:, 0] = np.cos(angles)
    dirs[:, 1] = np.sin(angles)
    return dirs


def generate_demo(spec: CorpusSpec, index: int) -> Trajectory:
    """Generate demonstration `index` on its own derived RNG stream."""
    rng = np.random.default_rng([spec.seed, index])
    dirs = primitive_directions(spec.num_primitives, spec.dim)
    n_segments = int(rng.integers(spec.segments_range[0], spec.segments_range[1] + 1))
    primitives = []
    lengths = []
    prev = -1
    for _ in range(n_segments):
        if prev < 0:
            j = int(rng.integers(spec.num_primitives))
        else:
            j = int(rng.integers(spec.num_primitives - 1))
            if j >= prev:
                j += 1
        primitives.append(j)
        prev = j
        lengths.append(
            int(rng.integers(spec.segment_length_range[0], spec.segment_length_range[1] + 1))
        )
    total = int(np.sum(lengths))
    actions = np.empty((total, spec.dim))
    labels = np.empty(total, dtype=np.int64)
    boundaries = []
    t = 0
    for j, ln in zip(primitives, lengths):
        boundaries.append(t + 1)
        noise = spec.action_noise * rng.standard_normal((ln, spec.dim))
        actions[t : t + ln] = dirs[j] + noise
        labels[t : t + ln] = j
        t += ln
    states = np.zeros((total, spec.dim))
    states[1:] = np.cumsum(actions[:-1], axis=0)
    return Trajectory(
        states=states, actions=actions, labels=labels, boundaries=boundaries
    ).validate(min_len=2)


def generate_corpus(spec: CorpusSpec) -> Dataset:
    spec.validate()
    return Dataset([generate_demo(spec, i) for i in range(spec.demo_count)])


def split_dataset(dataset: Dataset, test_count: int, seed: int):
    """Deterministic random split; returns (train, test)."""
    n = len(dataset)
    if not (0 < test_count < n):
        raise ConfigError(f"test_count must be in (0, {n}), got {test_count}")
    perm = np.random.default_rng([seed, 999983]).permutation(n)
    test_idx = set(int(i) for i in perm[:test_count])
    train = [t for i, t in enumerate(dataset.trajectories) if i not in test_idx]
    test = [t for i, t in enumerate(dataset.trajectories) if i in test_idx]
    return Dataset(train), Dataset(test)


def downsample(traj: Trajectory, factor: int) -> Trajectory:
    """Keep every factor-th state; each new action is the sum of the original
    actions over its window (the tail window may be shorter). factor 1 is the
    identity."""
    if factor < 1:
        raise InputError(f"downsample factor must be >= 1, got {factor}")
    if factor == 1:
        return replace(traj)
    t = traj.length
    idx = np.arange(0, t, factor)
    if idx.size < 2:
        raise InputError(f"downsample factor {factor} leaves fewer than 2 steps of {t}")
    states = traj.states[idx].copy()
    cum = np.vstack([np.zeros((1, traj.actions.shape[1])), np.cumsum(traj.actions, axis=0)])
    ends = np.append(idx[1:], t)
    actions = cum[ends] - cum[idx]
    labels = traj.labels[idx].copy() if traj.labels is not None else None
    boundaries = None
    if labels is not None:
        boundaries = [1] + [k + 1 for k in range(1, labels.size) if labels[k] != labels[k - 1]]
    return Trajectory(
        states=states,
        actions=actions,
        task_id=traj.task_id,
        labels=labels,
        boundaries=boundaries,
    ).validate(min_len=2)


# ---------------------------------------------------------------------------
# normalization


def compute_norm_stats(dataset: Dataset) -> NormStats:
    """Per-dimension mean and population std pooled over all steps.

    Zero-variance dimensions get scale 1 with a warning, leaving them
    centered but unscaled.
    """
    if len(dataset) == 0:
        raise InputError("cannot compute normalization statistics of an empty dataset")
    states = np.vstack([t.states for t in dataset])
    actions = np.vstack([t.actions for t in dataset])

    def mean_scale(x, name):
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        flat = scale == 0.0
        if np.any(flat):
            warnings.warn(
                f"zero-variance {name} dimensions {np.where(flat)[0].tolist()} left unscaled",
                RuntimeWarning,
                stacklevel=3,
            )
            scale = np.where(flat, 1.0, scale)
        return mean, scale

    sm, ss = mean_scale(states, "state")
    am, asc = mean_scale(actions, "action")
    return NormStats(state_mean=sm, state_scale=ss, action_mean=am, action_scale=asc)


def normalize(dataset: Dataset, stats: Optional[NormStats] = None) -> Dataset:
    """Affinely normalize every trajectory. When stats is None they are
    computed from this dataset (pass the training split's stats for test
    data)."""
    if stats is None:
        stats = compute_norm_stats(dataset)
    out = []
    for tr in dataset:
        out.append(
            replace(
                tr,
                states=(tr.states - stats.state_mean) / stats.state_scale,
                actions=(tr.actions - stats.action_mean) / stats.action_scale,
            )
        )
    return Dataset(out, stats=stats)


def denormalize(traj: Trajectory, stats: NormStats) -> Trajectory:
    return replace(
        traj,
        states=traj.states * stats.state_scale + stats.state_mean,
        actions=traj.actions * stats.action_scale + stats.action_mean,
    )


# ---------------------------------------------------------------------------
# serialization


def _traj_to_obj(traj: Trajectory) -> dict:
    obj = {
        "states": traj.states.tolist(),
        "actions": traj.actions.tolist(),
    }
    if traj.task_id is not None:
        obj["task_id"] = int(traj.task_id)
    if traj.labels is not None:
        obj["labels"] = traj.labels.tolist()
    if traj.boundaries is not None:
        obj["boundaries"] = [int(b) for b in traj.boundaries]
    return obj


def save_jsonl(dataset: Dataset, path):
    with open(path, "w") as fh:
        for traj in dataset:
            fh.write(json.dumps(_traj_to_obj(traj)) + "\n")


def _parse_traj(obj: dict, where: str) -> Trajectory:
    if not isinstance(obj, dict) or "states" not in obj or "actions" not in obj:
        raise SchemaError(f"{where}: object must have 'states' and 'actions'")
    try:
        states = np.array(obj["states"], dtype=np.float64)
        actions = np.array(obj["actions"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: ragged or non-numeric arrays: {exc}") from None
    traj = Trajectory(
        states=states,
        actions=actions,
        task_id=obj.get("task_id"),
        labels=np.asarray(obj["labels"], dtype=np.int64) if "labels" in obj else None,
        boundaries=list(obj["boundaries"]) if "boundaries" in obj else None,
    )
    try:
        traj.validate(min_len=2)
    except InputError as exc:
        raise SchemaError(f"{where}: {exc}") from None
    return traj


def load_jsonl(path) -> Dataset:
    """Parse a JSONL trajectory file; errors carry the file and line number."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            out.append(_parse_traj(obj, f"{path}:{lineno}"))
    if not out:
        raise SchemaError(f"{path}: no trajectories")
    return Dataset(out)


def save_stats(stats: NormStats, path):
    obj = {
        "state_mean": stats.state_mean.tolist(),
        "state_scale": stats.state_scale.tolist(),
        "action_mean": stats.action_mean.tolist(),
        "action_scale": stats.action_scale.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def load_stats(path) -> NormStats:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON: {exc}") from None
    try:
        return NormStats(
            state_mean=np.array(obj["state_mean"], dtype=np.float64),
            state_scale=np.array(obj["state_scale"], dtype=np.float64),
            action_mean=np.array(obj["action_mean"], dtype=np.float64),
            action_scale=np.array(obj["action_scale"], dtype=np.float64),
        )
    except KeyError as exc:
        raise SchemaError(f"{path}: missing key {exc}") from None
