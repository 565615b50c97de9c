"""Dual-task convolutional classifier with a shared trunk and private heads.

The trunk (temporal conv -> ELU -> spatial conv -> ELU -> average pool ->
flatten -> dense embedding) is shared by both tasks; each task owns a
two-layer head. Parameters are partitioned into the shared group and two
private groups with a stable flat index per group, and every weight (never
a bias) is maskable. Masked forward passes multiply each maskable parameter
by its mask bit before use.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError, InputError

TASK_MI = "MI"
TASK_ME = "ME"
TASKS = (TASK_MI, TASK_ME)
GROUP_SHARED = "shared"
GROUPS = (GROUP_SHARED, TASK_MI, TASK_ME)


@dataclass(frozen=True)
class ArchConfig:
    """Shape of the classifier; defaults fit 16-channel, 128-sample trials."""

    n_channels: int = 16        # electrodes per trial
    n_samples: int = 128        # time samples per trial
    temporal_filters: int = 8   # trunk conv kernels
    temporal_kernel: int = 25   # conv width along time
    spatial_filters: int = 16   # full-height conv kernels
    pool_width: int = 8
    embedding_dim: int = 64
    head_hidden: int = 32
    n_classes: int = 3

    def validate(self) -> "ArchConfig":
        for name, value in self.__dict__.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if self.temporal_kernel > self.n_samples:
            raise ConfigError(
                f"temporal_kernel {self.temporal_kernel} exceeds n_samples {self.n_samples}"
            )
        if self.conv_len % self.pool_width != 0:
            raise ConfigError(
                f"pool_width {self.pool_width} does not divide conv length {self.conv_len}"
            )
        return self

    @property
    def conv_len(self) -> int:
        return self.n_samples - self.temporal_kernel + 1

    @property
    def pooled_len(self) -> int:
        return self.conv_len // self.pool_width

    @property
    def flat_dim(self) -> int:
        return self.spatial_filters * self.pooled_len


@dataclass(frozen=True)
class LossWeights:
    """Per-task loss weights; both nonnegative, not both zero."""

    mi: float = 1.0
    me: float = 1.0

    def validate(self) -> "LossWeights":
        if self.mi < 0 or self.me < 0 or self.mi + self.me <= 0:
            raise ConfigError(f"loss weights must be nonnegative and not both zero: {self}")
        return self

    def for_task(self, task: str) -> float:
        return self.mi if task == TASK_MI else self.me


@dataclass
class Parameter:
    name: str
    group: str
    value: np.ndarray
    maskable: bool


class ParameterPartition:
    """All model parameters split into shared / private-MI / private-ME groups.

    Declaration order is fixed by the architecture, which makes the per-group
    flat index of maskable entries (each tensor raveled row-major) stable and
    reproducible for a given ArchConfig.
    """

    def __init__(self, cfg: ArchConfig, params: list[Parameter]):
        self.cfg = cfg
        self.params = params
        self._by_name = {p.name: p for p in params}
        if len(self._by_name) != len(params):
            raise ConfigError("duplicate parameter names in partition")

    def __getitem__(self, name: str) -> Parameter:
        return self._by_name[name]

    def group_params(self, group: str) -> list[Parameter]:
        return [p for p in self.params if p.group == group]

    def maskable_params(self, group: str) -> list[Parameter]:
        return [p for p in self.params if p.group == group and p.maskable]

    def maskable_size(self, group: str) -> int:
        return sum(p.value.size for p in self.maskable_params(group))

    @property
    def d(self) -> int:
        """Total maskable parameter count across all groups."""
        return sum(self.maskable_size(g) for g in GROUPS)

    def d_task(self, task: str) -> int:
        """Maskable count of the task's private group plus the shared group."""
        _check_task(task)
        return self.maskable_size(GROUP_SHARED) + self.maskable_size(task)

    def flat_maskable(self, group: str) -> np.ndarray:
        """Concatenated maskable weights of a group in stable flat order."""
        parts = [p.value.ravel() for p in self.maskable_params(group)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def set_flat_maskable(self, group: str, flat: np.ndarray) -> None:
        if flat.shape != (self.maskable_size(group),):
            raise DimensionError(
                f"flat vector {flat.shape} does not match group {group!r} "
                f"size {self.maskable_size(group)}"
            )
        offset = 0
        for p in self.maskable_params(group):
            n = p.value.size
            p.value = flat[offset:offset + n].reshape(p.value.shape).copy()
            offset += n

    def mask_slices(self, group: str) -> list[tuple[Parameter, slice]]:
        """Per-tensor slices into the group's flat maskable vector."""
        out, offset = [], 0
        for p in self.maskable_params(group):
            out.append((p, slice(offset, offset + p.value.size)))
            offset += p.value.size
        return out

    def copy(self) -> "ParameterPartition":
        return ParameterPartition(
            self.cfg,
            [replace(p, value=p.value.copy()) for p in self.params],
        )


@dataclass
class MaskSet:
    """Binary masks aligned with the partition's maskable entries per group."""

    mask_mi: np.ndarray
    mask_me: np.ndarray
    mask_shared: np.ndarray

    def __post_init__(self):
        for name in ("mask_mi", "mask_me", "mask_shared"):
            m = np.asarray(getattr(self, name), dtype=np.uint8)
            if m.ndim != 1 or not np.all((m == 0) | (m == 1)):
                raise DimensionError(f"{name} must be a flat 0/1 vector")
            setattr(self, name, m)

    def for_group(self, group: str) -> np.ndarray:
        return {TASK_MI: self.mask_mi, TASK_ME: self.mask_me,
                GROUP_SHARED: self.mask_shared}[group]

    def validate_against(self, partition: ParameterPartition) -> "MaskSet":
        for group in GROUPS:
            m = self.for_group(group)
            want = partition.maskable_size(group)
            if m.shape != (want,):
                raise DimensionError(
                    f"mask for {group!r} has length {m.shape[0]}, partition has {want}"
                )
        return self

    def density(self, group: str) -> float:
        m = self.for_group(group)
        return float(m.sum()) / m.size if m.size else 1.0

    def retained(self, group: str) -> int:
        return int(self.for_group(group).sum())

    def copy(self) -> "MaskSet":
        return MaskSet(self.mask_mi.copy(), self.mask_me.copy(), self.mask_shared.copy())

    @classmethod
    def all_ones(cls, partition: ParameterPartition) -> "MaskSet":
        return cls(*(np.ones(partition.maskable_size(g), dtype=np.uint8)
                     for g in (TASK_MI, TASK_ME, GROUP_SHARED)))

    @classmethod
    def all_zeros(cls, partition: ParameterPartition) -> "MaskSet":
        return cls(*(np.zeros(partition.maskable_size(g), dtype=np.uint8)
                     for g in (TASK_MI, TASK_ME, GROUP_SHARED)))


def _check_task(task: str) -> None:
    if task not in TASKS:
        raise InputError(f"unknown task {task!r}, expected one of {TASKS}")


def _he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_model(cfg: ArchConfig, seed: int) -> ParameterPartition:
    """He-uniform weights, zero biases, drawn in declaration order from one
    seeded generator, so the same seed gives bitwise-identical parameters."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    params: list[Parameter] = []

    def weight(name, group, shape, fan_in):
        params.append(Parameter(name, group, _he_uniform(rng, shape, fan_in), True))

    def bias(name, group, size):
        params.append(Parameter(name, group, np.zeros(size), False))

    E, kt = cfg.n_channels, cfg.temporal_kernel
    weight("temporal.kernels", GROUP_SHARED, (cfg.temporal_filters, E, kt), E * kt)
    bias("temporal.bias", GROUP_SHARED, cfg.temporal_filters)
    weight("spatial.kernels", GROUP_SHARED, (cfg.spatial_filters, cfg.temporal_filters),
           cfg.temporal_filters)
    bias("spatial.bias", GROUP_SHARED, cfg.spatial_filters)
    weight("embed.weight", GROUP_SHARED, (cfg.embedding_dim, cfg.flat_dim), cfg.flat_dim)
    bias("embed.bias", GROUP_SHARED, cfg.embedding_dim)
    # both heads start from the same draw; task data breaks the symmetry
    hidden_w = _he_uniform(rng, (cfg.head_hidden, cfg.embedding_dim), cfg.embedding_dim)
    out_w = _he_uniform(rng, (cfg.n_classes, cfg.head_hidden), cfg.head_hidden)
    for task in TASKS:
        params.append(Parameter(f"{task}.hidden.weight", task, hidden_w.copy(), True))
        bias(f"{task}.hidden.bias", task, cfg.head_hidden)
        params.append(Parameter(f"{task}.out.weight", task, out_w.copy(), True))
        bias(f"{task}.out.bias", task, cfg.n_classes)
    return ParameterPartition(cfg, params)


def masked_values(partition: ParameterPartition, masks: MaskSet) -> dict[str, np.ndarray]:
    """Parameter values with each maskable entry multiplied by its mask bit.

    Uses np.where so pruned entries come out as true +0.0 regardless of sign.
    """
    masks.validate_against(partition)
    values = {p.name: p.value for p in partition.params}
    for group in GROUPS:
        flat_mask = masks.for_group(group)
        for p, sl in partition.mask_slices(group):
            bits = flat_mask[sl].reshape(p.value.shape)
            values[p.name] = np.where(bits == 1, p.value, 0.0)
    return values


def _trunk(g: ad.Graph, nodes: dict[str, ad.Node], x: ad.Node, cfg: ArchConfig) -> ad.Node:
    h = g.conv_temporal(x, nodes["temporal.kernels"], nodes["temporal.bias"])
    h = g.elu(h)
    h = g.conv_spatial(h, nodes["spatial.kernels"], nodes["spatial.bias"])
    h = g.elu(h)
    h = g.avg_pool(h, cfg.pool_width)
    h = g.flatten(h)
    return g.dense(h, nodes["embed.weight"], nodes["embed.bias"])


def _head(g: ad.Graph, nodes: dict[str, ad.Node], emb: ad.Node, task: str) -> ad.Node:
    h = g.dense(emb, nodes[f"{task}.hidden.weight"], nodes[f"{task}.hidden.bias"])
    h = g.elu(h)
    return g.dense(h, nodes[f"{task}.out.weight"], nodes[f"{task}.out.bias"])


def build_loss_graph(
    partition: ParameterPartition,
    masks: MaskSet,
    batches: dict[str, tuple[np.ndarray, np.ndarray]],
    weights: LossWeights | None = None,
) -> tuple[ad.Graph, ad.Node, dict[str, ad.Node]]:
    """Masked multitask loss graph over one batch per task.

    `batches` maps task name to (x, y) with x of shape (B, E, T). Returns the
    graph, the scalar loss node, and the parameter nodes keyed by name.
    """
    weights = (weights or LossWeights()).validate()
    if not batches:
        raise InputError("at least one task batch is required")
    values = masked_values(partition, masks)
    g = ad.Graph()
    nodes = {name: g.parameter(v, name=name) for name, v in values.items()}
    terms, lambdas = [], []
    for task in TASKS:
        if task not in batches:
            continue
        x, y = batches[task]
        x = ad.as_tensor(x)
        if x.ndim != 3 or x.shape[0] == 0:
            raise InputError(f"{task} batch must be a non-empty (B, E, T) array")
        if x.shape[1:] != (partition.cfg.n_channels, partition.cfg.n_samples):
            raise DimensionError(
                f"{task} batch shape {x.shape} does not match arch "
                f"({partition.cfg.n_channels}, {partition.cfg.n_samples})"
            )
        xin = g.input(x, name=f"x.{task}")
        emb = _trunk(g, nodes, xin, partition.cfg)
        logits = _head(g, nodes, emb, task)
        terms.append(g.softmax_cross_entropy(logits, y))
        lambdas.append(weights.for_task(task))
    loss = g.weighted_sum(terms, lambdas)
    g.forward()
    return g, loss, nodes


def forward_task(
    partition: ParameterPartition,
    masks: MaskSet,
    x: np.ndarray,
    task: str,
) -> np.ndarray:
    """Masked logits for one trial (E, T) -> (C,) or a batch (B, E, T) -> (B, C)."""
    _check_task(task)
    x = ad.as_tensor(x)
    single = x.ndim == 2
    xb = x[None] if single else x
    if xb.ndim != 3 or xb.shape[1:] != (partition.cfg.n_channels, partition.cfg.n_samples):
        raise DimensionError(
            f"trial shape {x.shape} does not match arch "
            f"({partition.cfg.n_channels}, {partition.cfg.n_samples})"
        )
    values = masked_values(partition, masks)
    g = ad.Graph()
    nodes = {name: g.parameter(v, name=name) for name, v in values.items()}
    emb = _trunk(g, nodes, g.input(xb), partition.cfg)
    logits = _head(g, nodes, emb, task).value
    return logits[0] if single else logits


def multitask_loss(
    partition: ParameterPartition,
    masks: MaskSet,
    batch_mi: tuple[np.ndarray, np.ndarray],
    batch_me: tuple[np.ndarray, np.ndarray],
    weights: LossWeights | None = None,
) -> float:
    """lambda_MI * mean-CE(MI batch) + lambda_ME * mean-CE(ME batch)."""
    _, loss, _ = build_loss_graph(
        partition, masks, {TASK_MI: batch_mi, TASK_ME: batch_me}, weights
    )
    return float(loss.value)
