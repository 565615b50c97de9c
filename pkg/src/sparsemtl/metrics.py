"""Accuracy and macro-F1 from confusion counts, plus multi-seed aggregation
and the sweep report formats (report.csv / report.md)."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError, InputError, LabelError

METHOD_ORDER = ("dense", "lth", "snip", "ours")
CSV_HEADER = ["method", "sparsity_pct", "task", "seed", "accuracy", "f1"]


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """C x C count matrix; rows are true classes, columns predictions."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise InputError(f"{y_true.shape} labels vs {y_pred.shape} predictions")
    for arr, what in ((y_true, "true"), (y_pred, "predicted")):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelError(f"{what} label out of range for {n_classes} classes")
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    return conf


def accuracy(conf: np.ndarray) -> float:
    total = int(conf.sum())
    if total == 0:
        raise InputError("empty confusion matrix")
    return float(np.trace(conf)) / total


def macro_f1(conf: np.ndarray) -> float:
    """Unweighted mean over classes of 2pr/(p+r); a class with p+r = 0
    contributes 0."""
    if int(conf.sum()) == 0:
        raise InputError("empty confusion matrix")
    conf = np.asarray(conf, dtype=np.float64)
    tp = np.diag(conf)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    f1s = []
    for c in range(conf.shape[0]):
        p_den, r_den = tp[c] + fp[c], tp[c] + fn[c]
        p = tp[c] / p_den if p_den > 0 else 0.0
        r = tp[c] / r_den if r_den > 0 else 0.0
        f1s.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
    return float(np.mean(f1s))


@dataclass(frozen=True)
class SweepRecord:
    """One evaluated (method, sparsity, task, seed) cell; accuracy/f1 are None
    for a failed (diverged) run."""

    method: str
    sparsity_pct: float
    task: str
    seed: int
    accuracy: float | None
    f1: float | None

    @property
    def failed(self) -> bool:
        return self.accuracy is None


def aggregate(records: list[SweepRecord]) -> dict[tuple[str, float, str], tuple[float, float, int]]:
    """(method, sparsity_pct, task) -> (mean, std, n) of accuracy; failed rows
    are skipped. Std uses the n-1 denominator and is 0 for n = 1."""
    return _aggregate_field(records, "accuracy")


def aggregate_f1(records: list[SweepRecord]) -> dict[tuple[str, float, str], tuple[float, float, int]]:
    return _aggregate_field(records, "f1")


def _aggregate_field(records, field):
    cells: dict[tuple[str, float, str], list[float]] = {}
    for r in records:
        if r.failed:
            continue
        cells.setdefault((r.method, r.sparsity_pct, r.task), []).append(getattr(r, field))
    out = {}
    for key, vals in cells.items():
        arr = np.asarray(vals)
        std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
        out[key] = (float(arr.mean()), std, len(arr))
    return out


def _record_sort_key(r: SweepRecord):
    method_rank = METHOD_ORDER.index(r.method) if r.method in METHOD_ORDER else len(METHOD_ORDER)
    return (method_rank, r.method, r.sparsity_pct, r.task, r.seed)


def records_to_csv(records: list[SweepRecord]) -> str:
    """Canonically ordered CSV; byte-identical for identical records."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in sorted(records, key=_record_sort_key):
        writer.writerow([
            r.method,
            format(r.sparsity_pct, "g"),
            r.task,
            r.seed,
            "" if r.accuracy is None else repr(float(r.accuracy)),
            "" if r.f1 is None else repr(float(r.f1)),
        ])
    return buf.getvalue()


def records_from_csv(text: str) -> list[SweepRecord]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataFormatError("empty report.csv") from None
    if header != CSV_HEADER:
        raise DataFormatError(f"unexpected report.csv header {header!r}")
    records = []
    for i, row in enumerate(reader, start=2):
        if len(row) != len(CSV_HEADER):
            raise DataFormatError(f"report.csv line {i} has {len(row)} fields")
        try:
            records.append(SweepRecord(
                method=row[0],
                sparsity_pct=float(row[1]),
                task=row[2],
                seed=int(row[3]),
                accuracy=float(row[4]) if row[4] else None,
                f1=float(row[5]) if row[5] else None,
            ))
        except ValueError as e:
            raise DataFormatError(f"report.csv line {i}: {e}") from e
    return records


def render_report(records: list[SweepRecord]) -> str:
    """Markdown grid of mean +/- std cells: accuracy in percent with one
    decimal, F1 with two, per task."""
    acc = aggregate(records)
    f1 = aggregate_f1(records)

    def row_key(mp):
        method, pct = mp
        rank = METHOD_ORDER.index(method) if method in METHOD_ORDER else len(METHOD_ORDER)
        return (rank, method, pct)

    rows = sorted({(r.method, r.sparsity_pct) for r in records}, key=row_key)
    lines = [
        "| Method | Sparsity (%) | MI Acc. (%) | MI F1 | ME Acc. (%) | ME F1 |",
        "| --- | --- | --- | --- | --- | --- |",
    ]
    for method, pct in rows:
        cells = []
        for task in ("MI", "ME"):
            a = acc.get((method, pct, task))
            f = f1.get((method, pct, task))
            cells.append("-" if a is None else f"{a[0] * 100:.1f} ± {a[1] * 100:.1f}")
            cells.append("-" if f is None else f"{f[0]:.2f} ± {f[1]:.2f}")
        lines.append(f"| {method} | {format(pct, 'g')} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_report(records: list[SweepRecord], out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    md_path = out_dir / "report.md"
    csv_path.write_text(records_to_csv(records))
    md_path.write_text(render_report(records))
    return csv_path, md_path
