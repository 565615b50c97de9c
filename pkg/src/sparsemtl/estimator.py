"""Sklearn-style estimator facade over the mask-generation + training pipeline.

`SparseMultitaskClassifier` follows the fit/predict convention with one extra
per-trial argument `tasks` tagging each trial as motor imagery ("MI"/0) or
motor execution ("ME"/1), so the dual-task model slots into ordinary
array-based workflows while training both heads jointly.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .data import TrialDataset, split, zscore
from .errors import InputError
from .network import ArchConfig, MaskSet, TASKS, build_model, forward_task
from .pruning import SparsityConfig, generate_masks_ours, lth_masks, snip_global_masks
from .training import MultitaskSplits, TrainConfig, train
from .validation import check_labels, check_tasks, check_trials
from . import autodiff


class SparseMultitaskClassifier(BaseEstimator):
    """Dual-task trial classifier trained with static pruning masks.

    Parameters mirror the architecture and training defaults; `method`
    selects the mask generator: "dense" (no pruning), "ours" (per-task
    saliency with an OR arbiter on the shared trunk), "snip" (one global
    saliency ranking) or "lth" (iterative magnitude pruning with rewind).
    """

    def __init__(self, method="ours", sparsity=0.4, epochs=100, batch_size=16,
                 learning_rate=1e-3, lambda_mi=1.0, lambda_me=1.0,
                 temporal_filters=8, temporal_kernel=25, spatial_filters=16,
                 pool_width=8, embedding_dim=64, head_hidden=32, lth_rounds=5,
                 saliency_batch=128, validation_fraction=0.2, random_state=0):
        self.method = method
        self.sparsity = sparsity
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lambda_mi = lambda_mi
        self.lambda_me = lambda_me
        self.temporal_filters = temporal_filters
        self.temporal_kernel = temporal_kernel
        self.spatial_filters = spatial_filters
        self.pool_width = pool_width
        self.embedding_dim = embedding_dim
        self.head_hidden = head_hidden
        self.lth_rounds = lth_rounds
        self.saliency_batch = saliency_batch
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    # -- internals -----------------------------------------------------------

    def _arch(self, n_channels: int, n_samples: int, n_classes: int) -> ArchConfig:
        return ArchConfig(
            n_channels=n_channels, n_samples=n_samples,
            temporal_filters=self.temporal_filters,
            temporal_kernel=self.temporal_kernel,
            spatial_filters=self.spatial_filters, pool_width=self.pool_width,
            embedding_dim=self.embedding_dim, head_hidden=self.head_hidden,
            n_classes=n_classes,
        ).validate()

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, lambda_mi=self.lambda_mi,
            lambda_me=self.lambda_me, seed=self.random_state,
        ).validate()

    def _zscore(self, X: np.ndarray) -> np.ndarray:
        return np.stack([zscore(x) for x in X])

    # -- sklearn surface ------------------------------------------------------

    def fit(self, X, y, tasks):
        """Fit on trials X (n, E, T) with labels y and per-trial task tags."""
        X = check_trials(X)
        y = check_labels(y, len(X))
        tasks = check_tasks(tasks, len(X))
        self.classes_ = np.unique(y)
        n_classes = int(self.classes_.max()) + 1
        X = self._zscore(X)

        per_task = {}
        for task in TASKS:
            sel = tasks == task
            if not np.any(sel):
                raise InputError(f"no trials tagged {task}; both tasks are required")
            names = [f"class{c}" for c in range(n_classes)]
            per_task[task] = TrialDataset(task, X[sel], y[sel], names)
        splits_by_task = {
            task: split(per_task[task], 1.0 - self.validation_fraction,
                        self.random_state)
            for task in TASKS
        }
        splits = MultitaskSplits(
            train_mi=splits_by_task["MI"][0], val_mi=splits_by_task["MI"][1],
            train_me=splits_by_task["ME"][0], val_me=splits_by_task["ME"][1],
        )

        self.partition_ = build_model(
            self._arch(X.shape[1], X.shape[2], n_classes), self.random_state
        )
        if self.method == "dense":
            self.masks_ = MaskSet.all_ones(self.partition_)
        else:
            sp = SparsityConfig(self.sparsity, self.saliency_batch, self.random_state)
            if self.method == "ours":
                self.masks_ = generate_masks_ours(
                    self.partition_, splits.train_mi, splits.train_me, sp)
            elif self.method == "snip":
                self.masks_ = snip_global_masks(
                    self.partition_, splits.train_mi, splits.train_me, sp)
            elif self.method == "lth":
                self.masks_ = lth_masks(self.partition_, splits, sp,
                                        rounds=self.lth_rounds,
                                        train_cfg=self._train_config())
            else:
                raise InputError(f"unknown method {self.method!r}")
        self.record_ = train(self.partition_, self.masks_, splits, self._train_config())
        self.n_features_in_ = X.shape[1] * X.shape[2]
        return self

    def _check_fitted(self):
        if not hasattr(self, "partition_"):
            raise InputError("estimator is not fitted; call fit first")

    def decision_function(self, X, tasks):
        """Per-trial logits through the trial's own task head."""
        self._check_fitted()
        cfg = self.partition_.cfg
        X = self._zscore(check_trials(X, cfg.n_channels, cfg.n_samples))
        tasks = check_tasks(tasks, len(X))
        logits = np.zeros((len(X), cfg.n_classes))
        for task in TASKS:
            sel = tasks == task
            if np.any(sel):
                logits[sel] = forward_task(self.partition_, self.masks_, X[sel], task)
        return logits

    def predict_proba(self, X, tasks):
        return autodiff.softmax(self.decision_function(X, tasks))

    def predict(self, X, tasks):
        return np.argmax(self.decision_function(X, tasks), axis=1)

    def score(self, X, y, tasks):
        """Mean accuracy over the given trials."""
        y = check_labels(y, len(np.asarray(X)))
        return float(np.mean(self.predict(X, tasks) == y))
