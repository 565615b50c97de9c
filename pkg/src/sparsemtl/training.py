"""Static-mask multitask training: masked Adam steps on the combined loss,
loss-curve recording, and run directory serialization.

Masks are applied before training (pruned weights zeroed) and the gradient
is multiplied by the mask before the moment updates and the step, so pruned
parameters and both optimizer moments stay exactly zero for the whole run.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .data import TrialDataset
from .errors import ConfigError, DataFormatError, DivergenceError, NumericError
from .network import (
    GROUPS,
    TASK_ME,
    TASK_MI,
    TASKS,
    ArchConfig,
    LossWeights,
    MaskSet,
    ParameterPartition,
    build_loss_graph,
    build_model,
    forward_task,
)

PARAMS_MAGIC = b"SMTPAR1"
RECORD_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_mi: float = 1.0
    lambda_me: float = 1.0
    seed: int = 0
    val_every: int = 1

    def validate(self) -> "TrainConfig":
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("moment coefficients must lie in [0, 1)")
        if self.val_every < 1:
            raise ConfigError("val_every must be >= 1")
        return self

    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_mi, self.lambda_me).validate()


@dataclass
class MultitaskSplits:
    """Train/validation splits for both tasks."""

    train_mi: TrialDataset
    val_mi: TrialDataset
    train_me: TrialDataset
    val_me: TrialDataset

    def train(self, task: str) -> TrialDataset:
        return self.train_mi if task == TASK_MI else self.train_me

    def val(self, task: str) -> TrialDataset:
        return self.val_mi if task == TASK_MI else self.val_me


@dataclass
class RunRecord:
    """Per-epoch curves plus the final parameter snapshot."""

    config: dict
    train_loss: list[float] = field(default_factory=list)
    val_epochs: list[int] = field(default_factory=list)
    val_loss: dict[str, list[float]] = field(default_factory=lambda: {t: [] for t in TASKS})
    val_accuracy: dict[str, list[float]] = field(default_factory=lambda: {t: [] for t in TASKS})
    val_f1: dict[str, list[float]] = field(default_factory=lambda: {t: [] for t in TASKS})
    epoch_seconds: list[float] = field(default_factory=list)
    partition: ParameterPartition | None = None
    masks: MaskSet | None = None

    def final(self, which: str, task: str) -> float:
        return {"loss": self.val_loss, "accuracy": self.val_accuracy,
                "f1": self.val_f1}[which][task][-1]


class _BatchStream:
    """Index batches over one task's training set; draws a fresh permutation
    from the shared generator whenever the current epoch is exhausted."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self._order = rng.permutation(n)
        self._pos = 0

    def next_batch(self) -> np.ndarray:
        if self._pos >= self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        batch = self._order[self._pos:self._pos + self.batch_size]
        self._pos += len(batch)
        return batch

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(self.n / self.batch_size)


class MaskedAdam:
    """Adam whose gradient is zeroed at pruned indices before the moment
    updates and the step, keeping pruned weights and moments at exact zero."""

    def __init__(self, partition: ParameterPartition, masks: MaskSet, cfg: TrainConfig):
        self.partition = partition
        self.cfg = cfg
        self.m = {p.name: np.zeros_like(p.value) for p in partition.params}
        self.v = {p.name: np.zeros_like(p.value) for p in partition.params}
        self.t = 0
        self.bits: dict[str, np.ndarray | None] = {p.name: None for p in partition.params}
        for group in GROUPS:
            flat = masks.for_group(group)
            for p, sl in partition.mask_slices(group):
                self.bits[p.name] = flat[sl].reshape(p.value.shape).astype(np.float64)

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        cfg = self.cfg
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for p in self.partition.params:
            g = grads[p.name]
            bits = self.bits[p.name]
            if bits is not None:
                g = g * bits
            m = self.m[p.name] = cfg.beta1 * self.m[p.name] + (1 - cfg.beta1) * g
            v = self.v[p.name] = cfg.beta2 * self.v[p.name] + (1 - cfg.beta2) * (g * g)
            p.value = p.value - cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def apply_masks(partition: ParameterPartition, masks: MaskSet) -> ParameterPartition:
    """Zero the pruned weights in place (idempotent); returns the partition."""
    masks.validate_against(partition)
    for group in GROUPS:
        flat = masks.for_group(group)
        for p, sl in partition.mask_slices(group):
            bits = flat[sl].reshape(p.value.shape)
            p.value = np.where(bits == 1, p.value, 0.0)
    return partition


def evaluate(partition: ParameterPartition, masks: MaskSet, ds: TrialDataset,
             task: str) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and confusion matrix on one task's dataset."""
    logits = forward_task(partition, masks, ds.trials, task)
    from .autodiff import softmax_cross_entropy
    loss = softmax_cross_entropy(logits, ds.labels)
    preds = np.argmax(logits, axis=1)
    conf = metrics.confusion_matrix(ds.labels, preds, partition.cfg.n_classes)
    return loss, conf


def train(partition: ParameterPartition, masks: MaskSet, splits: MultitaskSplits,
          cfg: TrainConfig) -> RunRecord:
    """Train the masked model; parameters update in place, curves per epoch."""
    cfg.validate()
    weights = cfg.weights()
    apply_masks(partition, masks)
    for task in TASKS:
        if len(splits.train(task)) == 0 or len(splits.val(task)) == 0:
            raise ConfigError(f"{task} split is empty")

    rng = np.random.default_rng(cfg.seed)
    streams = {task: _BatchStream(len(splits.train(task)), cfg.batch_size, rng)
               for task in TASKS}
    steps_per_epoch = max(s.batches_per_epoch for s in streams.values())
    opt = MaskedAdam(partition, masks, cfg)
    record = RunRecord(
        config={"train": asdict(cfg), "arch": asdict(partition.cfg)},
        partition=partition,
        masks=masks,
    )

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        step_losses = []
        for step in range(steps_per_epoch):
            batches = {}
            for task in TASKS:
                ds = splits.train(task)
                idx = streams[task].next_batch()
                batches[task] = (ds.trials[idx], ds.labels[idx])
            try:
                g, loss, nodes = build_loss_graph(partition, masks, batches, weights)
            except NumericError as e:
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, step {step}: {e}",
                    epoch=epoch, step=step,
                ) from e
            g.backward(loss)
            opt.step(g.gradients(nodes))
            step_losses.append(float(loss.value))
        record.train_loss.append(float(np.mean(step_losses)))
        if (epoch + 1) % cfg.val_every == 0 or epoch == cfg.epochs - 1:
            if not record.val_epochs or record.val_epochs[-1] != epoch:
                record.val_epochs.append(epoch)
                for task in TASKS:
                    loss, conf = evaluate(partition, masks, splits.val(task), task)
                    record.val_loss[task].append(loss)
                    record.val_accuracy[task].append(metrics.accuracy(conf))
                    record.val_f1[task].append(metrics.macro_f1(conf))
        record.epoch_seconds.append(time.perf_counter() - t0)
    return record


# ---------------------------------------------------------------------------
# run directory serialization
# ---------------------------------------------------------------------------

def save_params(partition: ParameterPartition, path: str | Path) -> None:
    """Magic, then per group: uint64 LE count + float64 LE values (declaration
    order, biases included)."""
    chunks = [PARAMS_MAGIC]
    for group in GROUPS:
        values = [p.value.ravel() for p in partition.group_params(group)]
        flat = np.concatenate(values) if values else np.zeros(0)
        chunks.append(np.uint64(flat.size).astype("<u8").tobytes())
        chunks.append(flat.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(partition: ParameterPartition, path: str | Path) -> ParameterPartition:
    """Fill the partition's values from params.bin, cross-checking counts."""
    raw = Path(path).read_bytes()
    if not raw.startswith(PARAMS_MAGIC):
        raise DataFormatError(f"{path}: bad magic, expected {PARAMS_MAGIC!r}")
    offset = len(PARAMS_MAGIC)
    for group in GROUPS:
        if offset + 8 > len(raw):
            raise DataFormatError(f"{path}: truncated before {group!r} header")
        count = int(np.frombuffer(raw, dtype="<u8", count=1, offset=offset)[0])
        offset += 8
        expected = sum(p.value.size for p in partition.group_params(group))
        if count != expected:
            raise DataFormatError(
                f"{path}: group {group!r} holds {count} values, expected {expected}"
            )
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise DataFormatError(f"{path}: truncated inside group {group!r}")
        flat = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).copy()
        offset += nbytes
        pos = 0
        for p in partition.group_params(group):
            n = p.value.size
            p.value = flat[pos:pos + n].reshape(p.value.shape)
            pos += n
    if offset != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return partition


def save_run(record: RunRecord, path: str | Path) -> None:
    """Write record.json, params.bin, and the masks (when present)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    doc = {
        "version": RECORD_VERSION,
        "config": record.config,
        "train_loss": record.train_loss,
        "val_epochs": record.val_epochs,
        "val_loss": record.val_loss,
        "val_accuracy": record.val_accuracy,
        "val_f1": record.val_f1,
        "epoch_seconds": record.epoch_seconds,
    }
    (path / "record.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    if record.partition is not None:
        save_params(record.partition, path / "params.bin")
    if record.masks is not None:
        from .pruning import save_masks
        meta = record.config.get("masks", {})
        save_masks(record.masks, path / "masks.bin",
                   sigma=meta.get("sigma"), method=meta.get("method"),
                   seed=meta.get("seed"))


def load_run(path: str | Path) -> RunRecord:
    path = Path(path)
    try:
        doc = json.loads((path / "record.json").read_text())
    except FileNotFoundError as e:
        raise DataFormatError(f"missing record.json in {path}") from e
    except json.JSONDecodeError as e:
        raise DataFormatError(f"unparseable record.json: {e}") from e
    if doc.get("version") != RECORD_VERSION:
        raise DataFormatError(f"unsupported record version {doc.get('version')!r}")
    record = RunRecord(
        config=doc["config"],
        train_loss=doc["train_loss"],
        val_epochs=doc["val_epochs"],
        val_loss=doc["val_loss"],
        val_accuracy=doc["val_accuracy"],
        val_f1=doc["val_f1"],
        epoch_seconds=doc["epoch_seconds"],
    )
    params_path = path / "params.bin"
    if params_path.exists():
        arch = ArchConfig(**doc["config"]["arch"])
        record.partition = load_params(build_model(arch, seed=0), params_path)
    masks_path = path / "masks.bin"
    if masks_path.exists():
        from .pruning import load_masks
        record.masks, _ = load_masks(masks_path)
    return record


def curves_text(record: RunRecord) -> str:
    """epoch,train_loss,val_loss_MI,val_loss_ME; val cells empty on epochs
    without a validation pass."""
    lines = ["epoch,train_loss,val_loss_MI,val_loss_ME"]
    val_at = {e: i for i, e in enumerate(record.val_epochs)}
    for epoch, tl in enumerate(record.train_loss):
        if epoch in val_at:
            i = val_at[epoch]
            mi = repr(float(record.val_loss[TASK_MI][i]))
            me = repr(float(record.val_loss[TASK_ME][i]))
        else:
            mi = me = ""
        lines.append(f"{epoch},{repr(float(tl))},{mi},{me}")
    return "\n".join(lines) + "\n"


def write_curves(record: RunRecord, path: str | Path) -> None:
    Path(path).write_text(curves_text(record))
