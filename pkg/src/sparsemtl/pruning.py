"""Mask generation: per-task saliency pruning with an OR arbiter for the
shared group, plus magnitude (LTH) and global-saliency (SNIP) baselines.

All generators are pure functions of (partition snapshot, data, config) and
share one retention contract: a group of size d keeps
kappa = max(1, round_half_up((1 - sigma) * d)) entries, ranked by score with
ties broken by lower flat index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import TrialDataset
from .errors import (
    ConfigError,
    DataFormatError,
    DimensionError,
    DivergenceError,
    InputError,
    NumericError,
)
from .network import (
    GROUP_SHARED,
    GROUPS,
    TASK_ME,
    TASK_MI,
    TASKS,
    LossWeights,
    MaskSet,
    ParameterPartition,
    build_loss_graph,
)

MASKS_MAGIC = b"SMTMASK1"
_GROUP_IDS = {TASK_MI: 1, TASK_ME: 2, GROUP_SHARED: 3}


@dataclass(frozen=True)
class SparsityConfig:
    """Target sparsity sigma in (0, 1), saliency batch size, and seed."""

    sigma: float
    saliency_batch: int = 128
    seed: int = 0

    def validate(self) -> "SparsityConfig":
        if not 0 < self.sigma < 1:
            raise ConfigError(f"sigma must lie in (0, 1), got {self.sigma}")
        if self.saliency_batch < 1:
            raise ConfigError("saliency_batch must be >= 1")
        return self


@dataclass
class SaliencyScores:
    """Normalized |g * theta| per maskable entry of the task's private group
    and the shared group, in flat order (shared block first)."""

    task: str
    scores: np.ndarray
    n_shared: int

    @property
    def shared_part(self) -> np.ndarray:
        return self.scores[:self.n_shared]

    @property
    def task_part(self) -> np.ndarray:
        return self.scores[self.n_shared:]


def round_half_up(x: float) -> int:
    """round() used by every retention count: .5 rounds up."""
    return int(math.floor(x + 0.5))


def retained_count(sigma: float, d_group: int) -> int:
    return max(1, min(d_group, round_half_up((1.0 - sigma) * d_group)))


def _normalize(scores: np.ndarray) -> np.ndarray:
    total = scores.sum()
    return scores / total if total > 0 else scores


def draw_saliency_batch(ds: TrialDataset, cfg: SparsityConfig
                        ) -> tuple[np.ndarray, np.ndarray]:
    """One seeded batch of min(saliency_batch, N) trials."""
    if len(ds) == 0:
        raise InputError("cannot draw a saliency batch from an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    idx = rng.permutation(len(ds))[:min(cfg.saliency_batch, len(ds))]
    return ds.trials[idx], ds.labels[idx]


def _maskable_grads(partition: ParameterPartition, grads: dict[str, np.ndarray],
                    group: str) -> np.ndarray:
    parts = [np.abs(grads[p.name].ravel() * p.value.ravel())
             for p in partition.maskable_params(group)]
    return np.concatenate(parts) if parts else np.zeros(0)


def _loss_gradients(partition: ParameterPartition,
                    batches: dict[str, tuple[np.ndarray, np.ndarray]],
                    weights: LossWeights | None = None) -> dict[str, np.ndarray]:
    masks = MaskSet.all_ones(partition)
    g, loss, nodes = build_loss_graph(partition, masks, batches, weights)
    g.backward(loss)
    return g.gradients(nodes)


def saliency_scores(partition: ParameterPartition, task: str,
                    batch: tuple[np.ndarray, np.ndarray],
                    cfg: SparsityConfig) -> SaliencyScores:
    """Connection sensitivity |g_j * theta_j| of the task's mean cross-entropy
    over its private and the shared group, all-ones masks, normalized to sum 1."""
    cfg.validate()
    x, y = batch
    if len(x) == 0:
        raise InputError("saliency batch is empty")
    grads = _loss_gradients(partition, {task: (x, y)})
    shared = _maskable_grads(partition, grads, GROUP_SHARED)
    private = _maskable_grads(partition, grads, task)
    scores = np.concatenate([shared, private])
    if not np.all(np.isfinite(scores)):
        raise NumericError("non-finite saliency scores")
    return SaliencyScores(task, _normalize(scores), len(shared))


def topk_mask(scores: np.ndarray, sigma: float) -> np.ndarray:
    """Binary mask retaining the top max(1, round((1-sigma)*d)) scores; ties
    go to the lower flat index."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise InputError("scores must be a non-empty flat vector")
    if not 0 < sigma < 1:
        raise ConfigError(f"sigma must lie in (0, 1), got {sigma}")
    kappa = retained_count(sigma, scores.size)
    order = np.argsort(-scores, kind="stable")
    mask = np.zeros(scores.size, dtype=np.uint8)
    mask[order[:kappa]] = 1
    return mask


def _topk_selection(scores: np.ndarray, kappa: int) -> np.ndarray:
    order = np.argsort(-scores, kind="stable")
    mask = np.zeros(scores.size, dtype=np.uint8)
    mask[order[:kappa]] = 1
    return mask


def magnitude_mask(theta: np.ndarray, sigma: float) -> np.ndarray:
    """topk_mask with scores |theta|."""
    return topk_mask(np.abs(np.asarray(theta, dtype=np.float64).ravel()), sigma)


def arbiter_or(m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    """Element-wise OR: an entry is pruned only if both inputs pruned it."""
    m1 = np.asarray(m1, dtype=np.uint8)
    m2 = np.asarray(m2, dtype=np.uint8)
    if m1.shape != m2.shape:
        raise DimensionError(f"mask lengths differ: {m1.shape} vs {m2.shape}")
    return np.logical_or(m1, m2).astype(np.uint8)


def generate_masks_ours(partition: ParameterPartition, data_mi: TrialDataset,
                        data_me: TrialDataset, cfg: SparsityConfig) -> MaskSet:
    """Per task, a joint top-k over private + shared saliency; the shared mask
    is the OR of the two shared candidates, so only parameters unimportant to
    both tasks are pruned."""
    cfg.validate()
    data = {TASK_MI: data_mi, TASK_ME: data_me}
    private, candidates = {}, {}
    for task in TASKS:
        batch = draw_saliency_batch(data[task], cfg)
        s = saliency_scores(partition, task, batch, cfg)
        kappa = retained_count(cfg.sigma, s.scores.size)
        combined = _topk_selection(s.scores, kappa)
        candidates[task] = combined[:s.n_shared]
        private[task] = combined[s.n_shared:]
    return MaskSet(
        mask_mi=private[TASK_MI],
        mask_me=private[TASK_ME],
        mask_shared=arbiter_or(candidates[TASK_MI], candidates[TASK_ME]),
    ).validate_against(partition)


def snip_global_masks(partition: ParameterPartition, data_mi: TrialDataset,
                      data_me: TrialDataset, cfg: SparsityConfig,
                      weights: LossWeights | None = None) -> MaskSet:
    """One saliency pass on the combined loss, one global top-k across all
    maskable parameters, split back into the three groups. No arbiter."""
    cfg.validate()
    weights = (weights or LossWeights(1.0, 1.0)).validate()
    data = {TASK_MI: data_mi, TASK_ME: data_me}
    batches = {task: draw_saliency_batch(data[task], cfg) for task in TASKS}
    grads = _loss_gradients(partition, batches, weights)
    pieces = [_maskable_grads(partition, grads, group) for group in GROUPS]
    scores = _normalize(np.concatenate(pieces))
    if not np.all(np.isfinite(scores)):
        raise NumericError("non-finite saliency scores")
    kappa = retained_count(cfg.sigma, scores.size)
    selection = _topk_selection(scores, kappa)
    sizes = [len(p) for p in pieces]
    offsets = np.cumsum([0] + sizes)
    by_group = {g: selection[offsets[i]:offsets[i + 1]] for i, g in enumerate(GROUPS)}
    return MaskSet(
        mask_mi=by_group[TASK_MI],
        mask_me=by_group[TASK_ME],
        mask_shared=by_group[GROUP_SHARED],
    ).validate_against(partition)


def lth_round_counts(d_group: int, sigma: float, rounds: int) -> list[int]:
    """Monotone per-round retention targets with (1-r)^rounds = 1-sigma."""
    rate = 1.0 - (1.0 - sigma) ** (1.0 / rounds)
    counts, prev = [], d_group
    for t in range(1, rounds + 1):
        kappa = max(1, min(prev, round_half_up(((1.0 - rate) ** t) * d_group)))
        counts.append(kappa)
        prev = kappa
    return counts


def lth_masks(partition: ParameterPartition, splits, cfg: SparsityConfig,
              rounds: int = 5, train_cfg=None) -> MaskSet:
    """Iterative magnitude pruning with rewind to initialization.

    Each round trains for 20% of the full budget under the current masks,
    prunes each group separately to its scheduled count by trained magnitude
    (among survivors), and rewinds surviving weights to their initial values.
    """
    from .training import TrainConfig, train

    cfg.validate()
    if rounds < 1:
        raise ConfigError("rounds must be >= 1")
    train_cfg = train_cfg or TrainConfig()
    budget = max(1, round_half_up(0.2 * train_cfg.epochs))

    initial = {p.name: p.value.copy() for p in partition.params}
    schedule = {g: lth_round_counts(partition.maskable_size(g), cfg.sigma, rounds)
                for g in GROUPS}
    masks = MaskSet.all_ones(partition)
    work = partition.copy()

    for t in range(rounds):
        round_seed = int(np.random.SeedSequence([cfg.seed, t]).generate_state(1)[0])
        round_cfg = TrainConfig(
            epochs=budget, batch_size=train_cfg.batch_size,
            learning_rate=train_cfg.learning_rate, beta1=train_cfg.beta1,
            beta2=train_cfg.beta2, eps=train_cfg.eps,
            lambda_mi=train_cfg.lambda_mi, lambda_me=train_cfg.lambda_me,
            seed=round_seed, val_every=budget,
        )
        try:
            train(work, masks, splits, round_cfg)
        except DivergenceError as e:
            raise DivergenceError(f"LTH round {t}: {e}", epoch=e.epoch, step=e.step) from e
        new_masks = {}
        for group in GROUPS:
            trained = work.flat_maskable(group)
            survivors = masks.for_group(group)
            scores = np.where(survivors == 1, np.abs(trained), -np.inf)
            new_masks[group] = _topk_selection(scores, schedule[group][t])
        masks = MaskSet(mask_mi=new_masks[TASK_MI], mask_me=new_masks[TASK_ME],
                        mask_shared=new_masks[GROUP_SHARED])
        # rewind to initialization; apply_masks in the next round zeroes the pruned
        for p in work.params:
            p.value = initial[p.name].copy()
    return masks.validate_against(partition)


# ---------------------------------------------------------------------------
# mask file format
# ---------------------------------------------------------------------------

def save_masks(masks: MaskSet, path: str | Path, sigma=None, method=None,
               seed=None) -> None:
    """Binary masks (magic, then per group: id byte, uint64 LE bit count,
    LSB-first packed bits) plus a JSON sidecar with the generation metadata."""
    path = Path(path)
    chunks = [MASKS_MAGIC]
    for group in (TASK_MI, TASK_ME, GROUP_SHARED):
        m = masks.for_group(group)
        chunks.append(bytes([_GROUP_IDS[group]]))
        chunks.append(np.uint64(m.size).astype("<u8").tobytes())
        chunks.append(np.packbits(m, bitorder="little").tobytes())
    path.write_bytes(b"".join(chunks))
    sidecar = {
        "sigma": sigma,
        "method": method,
        "seed": seed,
        "densities": {g: masks.density(g) for g in (TASK_MI, TASK_ME, GROUP_SHARED)},
    }
    path.with_suffix(".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n"
    )


def load_masks(path: str | Path) -> tuple[MaskSet, dict | None]:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(MASKS_MAGIC):
        raise DataFormatError(f"{path}: bad magic, expected {MASKS_MAGIC!r}")
    offset = len(MASKS_MAGIC)
    by_group = {}
    for group in (TASK_MI, TASK_ME, GROUP_SHARED):
        if offset + 9 > len(raw):
            raise DataFormatError(f"{path}: truncated before group {group!r}")
        gid = raw[offset]
        if gid != _GROUP_IDS[group]:
            raise DataFormatError(f"{path}: expected group id {_GROUP_IDS[group]}, got {gid}")
        count = int(np.frombuffer(raw, dtype="<u8", count=1, offset=offset + 1)[0])
        offset += 9
        nbytes = (count + 7) // 8
        if offset + nbytes > len(raw):
            raise DataFormatError(f"{path}: truncated inside group {group!r}")
        packed = np.frombuffer(raw, dtype=np.uint8, count=nbytes, offset=offset)
        by_group[group] = np.unpackbits(packed, count=count, bitorder="little")
        offset += nbytes
    if offset != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    sidecar_path = path.with_suffix(".json")
    sidecar = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else None
    return MaskSet(mask_mi=by_group[TASK_MI], mask_me=by_group[TASK_ME],
                   mask_shared=by_group[GROUP_SHARED]), sidecar
