"""Binary classification metrics and the results table.

A prediction is positive when its score is >= the threshold (0.5 by
default). AUC is the Mann-Whitney probability that a random positive
outscores a random negative, with ties credited one half.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

import numpy as np

from mmfusion.errors import ContractError


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def as_tuple(self) -> tuple[int, int, int, int]:
        return self.tp, self.fp, self.fn, self.tn


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    sensitivity: float
    f1: float
    auc: float
    confusion: Confusion
    n: int
    undefined: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = dict(zip(("tp", "fp", "fn", "tn"), self.confusion.as_tuple()))
        return d


def confusion(scores, labels, threshold: float = 0.5) -> Confusion:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    if scores.size == 0:
        raise ContractError("confusion of an empty prediction set")
    if scores.shape != labels.shape:
        raise ContractError(f"scores {scores.shape} and labels {labels.shape} differ in shape")
    pred = scores >= threshold
    pos = labels == 1
    return Confusion(int(np.sum(pred & pos)), int(np.sum(pred & ~pos)),
                     int(np.sum(~pred & pos)), int(np.sum(~pred & ~pos)))


def point_metrics(c: Confusion) -> tuple[float, float, float, float, list[str]]:
    """accuracy, precision, sensitivity, f1 and the names of metrics whose
    denominator was zero (those are reported as 0)."""
    if c.n < 1:
        raise ContractError("point metrics need at least one sample")
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    acc = (c.tp + c.tn) / c.n
    prec = ratio(c.tp, c.tp + c.fp, "precision")
    sens = ratio(c.tp, c.tp + c.fn, "sensitivity")
    # harmonic mean of precision and sensitivity in count form, exact for integer fixtures
    f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, "f1") if c.tp else ratio(0, 0, "f1")
    return acc, prec, sens, f1, undefined


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(x.size, dtype=float)
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sx[1:] != sx[:-1]])
    ends = np.r_[starts[1:], sx.size]
    run_rank = (starts + ends + 1) / 2.0  # mean of positions start+1 .. end
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def auc(scores, labels) -> float:
    """Rank-sum (Mann-Whitney U) AUC in O(n log n)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        missing = "positive" if n_pos == 0 else "negative"
        raise ContractError(f"AUC undefined: no {missing} samples")
    ranks = average_ranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pairwise_auc(scores, labels) -> float:
    """O(n^2) reference: fraction of (pos, neg) pairs ordered correctly, ties 1/2."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    pos, neg = scores[labels == 1], scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise ContractError("AUC undefined for single-class input")
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (pos.size * neg.size)


def evaluate_scores(scores, labels, threshold: float = 0.5) -> MetricsReport:
    c = confusion(scores, labels, threshold)
    acc, prec, sens, f1, undefined = point_metrics(c)
    try:
        area = auc(scores, labels)
    except ContractError:
        area = 0.0
        undefined.append("auc")
    return MetricsReport(acc, prec, sens, f1, area, c, c.n, undefined)


# ---------------------------------------------------------------------- table
TABLE_COLUMNS = ("Feature Extractor", "Classifier", "ACC", "Precision", "Sensitivity", "F1 Score", "AUC")


def round3(x: float) -> str:
    """Half-up rounding to three decimals (0.6665 -> 0.667)."""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))


def table_rows(entries: Sequence[tuple[str, MetricsReport | None]], classifier: str = "ANN") -> list[dict[str, str]]:
    """One row per entry. A name like ``VGG16+LSTM`` fills both the feature
    extractor and classifier columns; a ``None`` report marks a failed run."""
    rows = []
    for name, m in entries:
        extractor, clf = name.rsplit("+", 1) if "+" in name else (name, classifier)
        if m is None:
            values = ("failed",) * 5
        else:
            values = tuple(round3(x) for x in (m.accuracy, m.precision, m.sensitivity, m.f1, m.auc))
        rows.append(dict(zip(TABLE_COLUMNS, (extractor, clf) + values)))
    return rows


def report_table(entries: Sequence[tuple[str, MetricsReport | None]], classifier: str = "ANN") -> tuple[str, str]:
    """Aligned plain-text table and the same rows as CSV."""
    if not entries:
        raise ContractError("report_table needs at least one entry")
    rows = table_rows(entries, classifier)
    widths = {c: max(len(c), *(len(r[c]) for r in rows)) for c in TABLE_COLUMNS}
    line = " | ".join(c.ljust(widths[c]) for c in TABLE_COLUMNS)
    sep = "-+-".join("-" * widths[c] for c in TABLE_COLUMNS)
    body = [" | ".join(r[c].ljust(widths[c]) for c in TABLE_COLUMNS) for r in rows]
    text = "\n".join([line, sep, *body]) + "\n"
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return text, buf.getvalue()
