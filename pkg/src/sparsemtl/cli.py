"""Command-line front end: generate / masks / train / sweep / report.

Configuration is a JSON file; repeatable flags (--seed, --sparsity, --method)
override the file, which overrides built-in defaults. SMT_SEED provides the
seed list when neither flags nor the file set one. Exit codes: 0 success,
1 usage, 2 data/format error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .data import (
    SynthConfig,
    TrialDataset,
    generate_synthetic,
    load_dataset,
    save_dataset,
    zscore_dataset,
    split,
)
from .errors import (
    ConfigError,
    DataFormatError,
    DivergenceError,
    InputError,
    NumericError,
    SplitError,
)
from .metrics import SweepRecord
from .network import ArchConfig, MaskSet, TASK_ME, TASK_MI, TASKS, build_model
from .pruning import (
    SparsityConfig,
    generate_masks_ours,
    lth_masks,
    save_masks,
    snip_global_masks,
)
from .training import (
    MultitaskSplits,
    RunRecord,
    TrainConfig,
    curves_text,
    save_run,
    train,
    write_curves,
)

METHODS = ("dense", "lth", "snip", "ours")

# stream separation for the per-run seed
_PURPOSE = {"model": 0, "split": 1, "mask": 2, "train": 3}


def derive_seed(seed: int, purpose: str) -> int:
    return int(np.random.SeedSequence([seed, _PURPOSE[purpose]]).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    out: str = "runs"
    synthetic: dict = field(default_factory=dict)
    mi_path: str | None = None
    me_path: str | None = None
    arch: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    sparsities: list[float] = field(default_factory=lambda: [0.2, 0.4, 0.8])
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    seeds: list[int] = field(default_factory=lambda: [0])
    train_fraction: float = 0.8
    lth_rounds: int = 5
    saliency_batch: int = 128
    jobs: int = 1

    def validate(self) -> "ExperimentConfig":
        for sigma in self.sparsities:
            if not 0 < sigma < 1:
                raise ConfigError(f"sparsity {sigma} outside (0, 1); dense is a method")
        if not self.methods or not self.seeds:
            raise ConfigError("need at least one method and one seed")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}, expected one of {METHODS}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        ArchConfig(**self.arch).validate()
        TrainConfig(**self.train).validate()
        SynthConfig(**self.synthetic).validate()
        return self

    def arch_config(self) -> ArchConfig:
        return ArchConfig(**self.arch)

    def train_config(self, seed: int) -> TrainConfig:
        kwargs = dict(self.train)
        kwargs["seed"] = seed
        return TrainConfig(**kwargs)

    @classmethod
    def load(cls, path: str | Path | None, overrides: dict | None = None
             ) -> "ExperimentConfig":
        data: dict = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except FileNotFoundError as e:
                raise DataFormatError(f"config file not found: {path}") from e
            except json.JSONDecodeError as e:
                raise DataFormatError(f"unparseable config {path}: {e}") from e
            unknown = set(data) - set(cls.__dataclass_fields__)
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, value in (overrides or {}).items():
            if value not in (None, []):
                data[key] = value
        if "seeds" not in data and os.environ.get("SMT_SEED"):
            try:
                data["seeds"] = [int(os.environ["SMT_SEED"])]
            except ValueError as e:
                raise ConfigError(f"SMT_SEED is not an integer: {e}") from e
        return cls(**data).validate()


def load_task_datasets(cfg: ExperimentConfig) -> tuple[TrialDataset, TrialDataset]:
    """Load from directories when paths are set, else generate synthetic;
    trials come back z-scored per channel."""
    if (cfg.mi_path is None) != (cfg.me_path is None):
        raise ConfigError("set both mi_path and me_path, or neither")
    if cfg.mi_path is not None:
        mi, me = load_dataset(cfg.mi_path), load_dataset(cfg.me_path)
        if mi.task != TASK_MI or me.task != TASK_ME:
            raise DataFormatError(
                f"task tags ({mi.task}, {me.task}) do not match (MI, ME)"
            )
    else:
        mi, me = generate_synthetic(SynthConfig(**cfg.synthetic))
    return zscore_dataset(mi), zscore_dataset(me)


def make_splits(mi: TrialDataset, me: TrialDataset, fraction: float,
                seed: int) -> MultitaskSplits:
    split_seed = derive_seed(seed, "split")
    train_mi, val_mi = split(mi, fraction, split_seed)
    train_me, val_me = split(me, fraction, split_seed)
    return MultitaskSplits(train_mi, val_mi, train_me, val_me)


def build_masks(partition, splits: MultitaskSplits, method: str,
                sigma: float | None, seed: int, cfg: ExperimentConfig) -> MaskSet:
    if method == "dense":
        return MaskSet.all_ones(partition)
    sp = SparsityConfig(sigma, cfg.saliency_batch, derive_seed(seed, "mask"))
    if method == "ours":
        return generate_masks_ours(partition, splits.train_mi, splits.train_me, sp)
    if method == "snip":
        return snip_global_masks(partition, splits.train_mi, splits.train_me, sp)
    if method == "lth":
        return lth_masks(partition, splits, sp, rounds=cfg.lth_rounds,
                         train_cfg=cfg.train_config(derive_seed(seed, "mask")))
    raise ConfigError(f"unknown method {method!r}")


def run_experiment(mi: TrialDataset, me: TrialDataset, cfg: ExperimentConfig,
                   method: str, sigma: float | None, seed: int
                   ) -> tuple[list[SweepRecord], RunRecord]:
    """One (method, sparsity, seed) run on pre-z-scored datasets."""
    splits = make_splits(mi, me, cfg.train_fraction, seed)
    partition = build_model(cfg.arch_config(), derive_seed(seed, "model"))
    masks = build_masks(partition, splits, method, sigma, seed, cfg)
    record = train(partition, masks, splits, cfg.train_config(derive_seed(seed, "train")))
    record.config["masks"] = {"method": method, "sigma": sigma, "seed": seed}
    pct = 0.0 if sigma is None else sigma * 100.0
    rows = [
        SweepRecord(method, pct, task, seed,
                    record.final("accuracy", task), record.final("f1", task))
        for task in TASKS
    ]
    return rows, record


def _curve_name(method: str, sigma: float | None, seed: int) -> str:
    pct = 0 if sigma is None else sigma * 100
    return f"{method}_s{format(pct, 'g')}_seed{seed}.csv"


def _sweep_job(args) -> tuple[list[SweepRecord], str, str | None]:
    mi, me, cfg, method, sigma, seed = args
    name = _curve_name(method, sigma, seed)
    try:
        rows, record = run_experiment(mi, me, cfg, method, sigma, seed)
    except DivergenceError:
        pct = 0.0 if sigma is None else sigma * 100.0
        rows = [SweepRecord(method, pct, task, seed, None, None) for task in TASKS]
        return rows, name, None
    return rows, name, curves_text(record)


def run_sweep(cfg: ExperimentConfig) -> tuple[list[SweepRecord], int]:
    """All (method, sparsity, seed) runs; returns the records and the number
    of diverged runs. Emits report.csv, report.md and curves/*.csv."""
    mi, me = load_task_datasets(cfg)
    jobs = []
    for method in cfg.methods:
        sigmas = [None] if method == "dense" else cfg.sparsities
        for sigma in sigmas:
            for seed in cfg.seeds:
                jobs.append((mi, me, cfg, method, sigma, seed))

    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]

    out_dir = Path(cfg.out)
    curves_dir = out_dir / "curves"
    curves_dir.mkdir(parents=True, exist_ok=True)
    records: list[SweepRecord] = []
    failed = 0
    for rows, name, curve_text in results:
        records.extend(rows)
        if curve_text is None:
            failed += 1
            continue
        tmp = curves_dir / (name + ".tmp")
        tmp.write_text(curve_text)
        os.replace(tmp, curves_dir / name)
    metrics.write_report(records, out_dir)
    return records, failed


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(cfg: ExperimentConfig) -> int:
    mi, me = generate_synthetic(SynthConfig(**cfg.synthetic))
    out = Path(cfg.out)
    for name, ds in (("mi", mi), ("me", me)):
        save_dataset(ds, out / name)
        print(out / name)
    return 0


def cmd_masks(cfg: ExperimentConfig, method: str, sigma: float | None,
              seed: int) -> int:
    mi, me = load_task_datasets(cfg)
    splits = make_splits(mi, me, cfg.train_fraction, seed)
    partition = build_model(cfg.arch_config(), derive_seed(seed, "model"))
    masks = build_masks(partition, splits, method, sigma, seed, cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "masks.bin"
    save_masks(masks, path, sigma=sigma, method=method, seed=seed)
    print(path)
    return 0


def cmd_train(cfg: ExperimentConfig, method: str, sigma: float | None,
              seed: int) -> int:
    mi, me = load_task_datasets(cfg)
    rows, record = run_experiment(mi, me, cfg, method, sigma, seed)
    out = Path(cfg.out)
    save_run(record, out)
    write_curves(record, out / "curves.csv")
    for row in rows:
        print(f"{row.task}: accuracy={row.accuracy:.4f} f1={row.f1:.4f}")
    print(out)
    return 0


def cmd_sweep(cfg: ExperimentConfig) -> int:
    records, failed = run_sweep(cfg)
    out_dir = Path(cfg.out)
    print(out_dir / "report.csv")
    print(out_dir / "report.md")
    if failed:
        print(f"{failed} run(s) diverged", file=sys.stderr)
        return 3
    return 0


def cmd_report(run_dir: str) -> int:
    csv_path = Path(run_dir) / "report.csv"
    try:
        text = csv_path.read_text()
    except FileNotFoundError as e:
        raise DataFormatError(f"missing report.csv in {run_dir}") from e
    records = metrics.records_from_csv(text)
    rendered = metrics.render_report(records)
    (Path(run_dir) / "report.md").write_text(rendered)
    print(rendered, end="")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_common(p: argparse.ArgumentParser, with_run_args: bool = False):
    p.add_argument("--config", metavar="PATH", help="JSON experiment config")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--seed", metavar="N", type=int, action="append", default=[],
                   help="run seed (repeatable; overrides config seeds)")
    p.add_argument("--sparsity", metavar="F", type=float, action="append", default=[],
                   help="sparsity level in (0,1) (repeatable)")
    p.add_argument("--method", metavar="NAME", action="append", default=[],
                   choices=METHODS, help="method (repeatable)")
    p.add_argument("--jobs", metavar="N", type=int,
                   help="parallel worker slots for sweep")


def _config_from_args(args) -> ExperimentConfig:
    overrides = {
        "out": args.out,
        "seeds": args.seed,
        "sparsities": args.sparsity,
        "methods": args.method,
        "jobs": getattr(args, "jobs", None),
    }
    return ExperimentConfig.load(args.config, overrides)


def build_parser() -> _Parser:
    parser = _Parser(
        prog="sparsemtl",
        description="Sparse multitask training for dual-task trial classification. "
                    "Precedence: flags > config file > SMT_SEED > defaults.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in (
        ("generate", "write synthetic MI/ME dataset directories"),
        ("masks", "generate and save pruning masks for one run"),
        ("train", "run one (method, sparsity, seed) training"),
        ("sweep", "run the full methods x sparsities x seeds grid"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
    report = sub.add_parser("report", help="render report.md from report.csv")
    report.add_argument("run_dir", help="directory containing report.csv")
    return parser


def _single_run_args(cfg: ExperimentConfig) -> tuple[str, float | None, int]:
    method = cfg.methods[0]
    sigma = None if method == "dense" else cfg.sparsities[0]
    return method, sigma, cfg.seeds[0]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.command == "report":
            return cmd_report(args.run_dir)
        cfg = _config_from_args(args)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        method, sigma, seed = _single_run_args(cfg)
        if args.command == "masks":
            return cmd_masks(cfg, method, sigma, seed)
        if args.command == "train":
            return cmd_train(cfg, method, sigma, seed)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, DataFormatError, InputError, SplitError) as e:
        print(f"sparsemtl: {e}", file=sys.stderr)
        return 2
    except (DivergenceError, NumericError) as e:
        print(f"sparsemtl: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
