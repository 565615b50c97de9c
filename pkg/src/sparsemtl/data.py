"""Trial datasets: synthetic dual-task generation, on-disk format, splits.

A dataset directory holds meta.json, trials.bin (N x E x T float32,
little-endian, row-major, trial-major) and labels.json (N class indices).
Trials are promoted to float64 in memory. Synthetic data plants per-class
rank-1 components: some shared between the two tasks, some task-specific,
plus white noise, so that joint training has real shared structure to find.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError, SplitError
from .network import TASKS

# Amplitudes of the planted rank-1 components (unit-norm factors).
SHARED_AMPLITUDE = 9.0
TASK_AMPLITUDE = 6.0


@dataclass
class TrialDataset:
    """Labeled trials for one task; trials stacked as (N, E, T) float64."""

    task: str
    trials: np.ndarray
    labels: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        self.trials = np.ascontiguousarray(self.trials, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.task not in TASKS:
            raise DataFormatError(f"unknown task tag {self.task!r}")
        if self.trials.ndim != 3:
            raise DataFormatError(f"trials must be (N, E, T), got {self.trials.shape}")
        if len(self.labels) != len(self.trials):
            raise DataFormatError(
                f"{len(self.labels)} labels for {len(self.trials)} trials"
            )
        if not np.all(np.isfinite(self.trials)):
            raise DataFormatError("trials contain non-finite values")
        if len(self.labels) and (self.labels.min() < 0
                                 or self.labels.max() >= len(self.class_names)):
            raise DataFormatError("label outside class range")

    def __len__(self) -> int:
        return len(self.trials)

    def __getitem__(self, i: int) -> tuple[np.ndarray, int]:
        return self.trials[i], int(self.labels[i])

    @property
    def n_channels(self) -> int:
        return self.trials.shape[1]

    @property
    def n_samples(self) -> int:
        return self.trials.shape[2]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, indices: np.ndarray) -> "TrialDataset":
        return TrialDataset(self.task, self.trials[indices].copy(),
                            self.labels[indices].copy(), list(self.class_names))


@dataclass(frozen=True)
class SynthConfig:
    n_channels: int = 16
    n_samples: int = 128
    n_classes: int = 3
    trials_per_class: int = 50
    shared_patterns: int = 2
    task_patterns: int = 1
    noise_std: float = 1.0
    seed: int = 0

    def validate(self) -> "SynthConfig":
        for name in ("n_channels", "n_samples", "n_classes", "trials_per_class",
                     "shared_patterns", "task_patterns"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be nonnegative")
        return self


def _unit(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=n)
    return v / np.linalg.norm(v)


def generate_synthetic(cfg: SynthConfig) -> tuple[TrialDataset, TrialDataset]:
    """Seeded dual-task datasets with identical shared class components.

    Each trial of class c is sum_j A_s * a_cj s_cj^T (shared across tasks)
    plus sum_j A_t * b_cj u_cj^T (task-specific) plus N(0, noise_std^2).
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    E, T, C = cfg.n_channels, cfg.n_samples, cfg.n_classes

    shared = []
    for _ in range(C):
        shared.append(sum(
            SHARED_AMPLITUDE * np.outer(_unit(rng, E), _unit(rng, T))
            for _ in range(cfg.shared_patterns)
        ))
    task_templates = {}
    for task in TASKS:
        task_templates[task] = [sum(
            TASK_AMPLITUDE * np.outer(_unit(rng, E), _unit(rng, T))
            for _ in range(cfg.task_patterns)
        ) for _ in range(C)]

    class_names = [f"class{c}" for c in range(C)]
    datasets = []
    for task in TASKS:
        trials = np.empty((C * cfg.trials_per_class, E, T))
        labels = np.empty(C * cfg.trials_per_class, dtype=np.int64)
        i = 0
        for c in range(C):
            template = shared[c] + task_templates[task][c]
            for _ in range(cfg.trials_per_class):
                noise = rng.normal(scale=cfg.noise_std, size=(E, T)) if cfg.noise_std > 0 \
                    else np.zeros((E, T))
                trials[i] = template + noise
                labels[i] = c
                i += 1
        datasets.append(TrialDataset(task, trials, labels, class_names))
    return datasets[0], datasets[1]


def save_dataset(ds: TrialDataset, path: str | Path) -> None:
    """Write meta.json, trials.bin (float32 LE) and labels.json."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "task": ds.task,
        "channels": ds.n_channels,
        "samples": ds.n_samples,
        "classes": list(ds.class_names),
        "n_trials": len(ds),
    }
    (path / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    (path / "trials.bin").write_bytes(
        np.ascontiguousarray(ds.trials, dtype="<f4").tobytes()
    )
    (path / "labels.json").write_text(
        json.dumps([int(v) for v in ds.labels]) + "\n"
    )


def load_dataset(path: str | Path) -> TrialDataset:
    """Load a dataset directory; raises DataFormatError before returning
    anything partial."""
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
    except FileNotFoundError as e:
        raise DataFormatError(f"missing meta.json in {path}") from e
    except json.JSONDecodeError as e:
        raise DataFormatError(f"unparseable meta.json in {path}: {e}") from e
    for key in ("task", "channels", "samples", "classes", "n_trials"):
        if key not in meta:
            raise DataFormatError(f"meta.json missing key {key!r}")
    task = meta["task"]
    if task not in TASKS:
        raise DataFormatError(f"unknown task tag {task!r}")
    n, E, T = int(meta["n_trials"]), int(meta["channels"]), int(meta["samples"])

    raw = (path / "trials.bin").read_bytes()
    expected = n * E * T * 4
    if len(raw) != expected:
        raise DataFormatError(
            f"trials.bin holds {len(raw)} bytes, expected {expected} "
            f"({n} trials x {E} channels x {T} samples x 4)"
        )
    trials = np.frombuffer(raw, dtype="<f4").reshape(n, E, T).astype(np.float64)

    labels = json.loads((path / "labels.json").read_text())
    if len(labels) != n:
        raise DataFormatError(f"labels.json holds {len(labels)} labels, expected {n}")
    return TrialDataset(task, trials, np.asarray(labels), list(meta["classes"]))


def zscore(x: np.ndarray) -> np.ndarray:
    """Standardize each channel of one (E, T) trial to mean 0, std 1.

    A constant channel is centered only (it comes out all zeros).
    """
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    centered = x - mu
    return np.where(sd > 0, centered / np.where(sd > 0, sd, 1.0), centered)


def zscore_dataset(ds: TrialDataset) -> TrialDataset:
    trials = np.stack([zscore(t) for t in ds.trials]) if len(ds) else ds.trials
    return TrialDataset(ds.task, trials, ds.labels.copy(), list(ds.class_names))


def split(ds: TrialDataset, train_fraction: float, seed: int
          ) -> tuple[TrialDataset, TrialDataset]:
    """Stratified train/validation split, deterministic under the seed."""
    if not 0 < train_fraction < 1:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for c in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) < 2:
            raise SplitError(f"class {c} has {len(idx)} trial(s); need at least 2")
        perm = rng.permutation(idx)
        n_train = int(np.floor(train_fraction * len(idx) + 0.5))
        n_train = min(max(n_train, 1), len(idx) - 1)
        train_idx.append(perm[:n_train])
        val_idx.append(perm[n_train:])
    train_idx = np.sort(np.concatenate(train_idx))
    val_idx = np.sort(np.concatenate(val_idx))
    return ds.subset(train_idx), ds.subset(val_idx)
