"""Signal analyses: answer distributions, chi-squared association with
veracity, leave-one-signal-out ablation, and trigger frequencies among
true-positive vs false-negative predictions.

A signal counts as "triggered" when the answer is Yes; No and Unsure are
grouped as not triggered, which keeps every contingency table 2x2 (one
degree of freedom).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import FoldPlan
from .errors import ValidationError
from .evaluation import run_cv
from .extraction import AnswerMatrix
from .label_model import CorrelationSet, LabelModelConfig, VoteMatrix

SIGNIFICANCE_LEVEL = 0.05
ANSWER_KEYS = ("yes", "no", "unsure")
GROUPS = ("politics", "entertainment", "all")


@dataclass(frozen=True)
class ContingencyTable2x2:
    """Rows: signal triggered / not triggered. Columns: misinformation / not."""

    a: int  # triggered, misinformation
    b: int  # triggered, non-misinformation
    c: int  # not triggered, misinformation
    d: int  # not triggered, non-misinformation

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValidationError("contingency counts must be non-negative")
        if self.total < 1:
            raise ValidationError("contingency table must hold at least one observation")

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d


@dataclass(frozen=True)
class SignalAssociation:
    signal_id: str
    chi2: float
    p: float
    normalized: float  # chi2 divided by the dataset's maximum chi2
    reject: bool  # null hypothesis of independence rejected at p < 0.05


@dataclass(frozen=True)
class AggregateAssociation:
    signal_id: str
    normalized: float  # mean of the member datasets' normalized statistics
    reject: bool  # rejected only if rejected in every member dataset


@dataclass(frozen=True)
class AblationEntry:
    signal_id: str
    baseline_f1: float
    ablated_f1: float

    @property
    def percent_change(self) -> float:
        return 100.0 * (self.ablated_f1 - self.baseline_f1) / self.baseline_f1


@dataclass(frozen=True)
class TriggerFrequencies:
    """Per-signal Yes rate among true-positive and false-negative predictions."""

    tp_count: int
    fn_count: int
    signal_ids: tuple[str, ...]
    tp_freq: tuple[float | None, ...]
    fn_freq: tuple[float | None, ...]

    @property
    def tp_total(self) -> float | None:
        return None if self.tp_count == 0 else float(sum(self.tp_freq))

    @property
    def fn_total(self) -> float | None:
        return None if self.fn_count == 0 else float(sum(self.fn_freq))

    def percent_decrease(self, index: int) -> float | None:
        tp, fn = self.tp_freq[index], self.fn_freq[index]
        if tp is None or fn is None or tp == 0:
            return None
        return 100.0 * (tp - fn) / tp


def chi_squared(t: ContingencyTable2x2) -> tuple[float, float]:
    """Pearson statistic (no continuity correction) and its 1-dof p-value.

    Expected counts come from the row/column marginals; a zero marginal makes
    the test vacuous (statistic 0, p 1). The p-value uses the closed form
    erfc(sqrt(chi2 / 2)).
    """
    observed = np.array([[t.a, t.b], [t.c, t.d]], dtype=np.float64)
    row = observed.sum(axis=1)
    col = observed.sum(axis=0)
    if np.any(row == 0) or np.any(col == 0):
        return 0.0, 1.0
    expected = np.outer(row, col) / observed.sum()
    stat = float(((observed - expected) ** 2 / expected).sum())
    return stat, math.erfc(math.sqrt(stat / 2.0))


def answer_distribution(am: AnswerMatrix, labels) -> dict[str, dict[int, dict[str, float]]]:
    """Per signal and veracity class, the proportion of yes/no/unsure answers."""
    labels = _check_labels(am, labels)
    out: dict[str, dict[int, dict[str, float]]] = {}
    for j, sid in enumerate(am.signal_ids):
        out[sid] = {}
        for cls in (0, 1):
            rows = am.values[labels == cls, j]
            total = rows.shape[0]
            if total == 0:
                out[sid][cls] = {key: float("nan") for key in ANSWER_KEYS}
            else:
                out[sid][cls] = {
                    key: float(np.sum(rows == key)) / total for key in ANSWER_KEYS
                }
    return out


def associations(am: AnswerMatrix, labels) -> list[SignalAssociation]:
    """Chi-squared association of each signal with veracity, max-normalized."""
    labels = _check_labels(am, labels)
    raw: list[tuple[str, float, float]] = []
    for j, sid in enumerate(am.signal_ids):
        yes = am.values[:, j] == "yes"
        table = ContingencyTable2x2(
            a=int(np.sum(yes & (labels == 1))),
            b=int(np.sum(yes & (labels == 0))),
            c=int(np.sum(~yes & (labels == 1))),
            d=int(np.sum(~yes & (labels == 0))),
        )
        stat, p = chi_squared(table)
        raw.append((sid, stat, p))
    max_stat = max(stat for _, stat, _ in raw)
    return [
        SignalAssociation(
            signal_id=sid,
            chi2=stat,
            p=p,
            normalized=stat / max_stat if max_stat > 0 else 0.0,
            reject=p < SIGNIFICANCE_LEVEL,
        )
        for sid, stat, p in raw
    ]


def aggregate_associations(per_dataset: dict[str, list[SignalAssociation]],
                           domains: dict[str, str],
                           group: str) -> list[AggregateAssociation]:
    """Average normalized statistics across a domain group; reject only if every
    member dataset rejects."""
    if group not in GROUPS:
        raise ValidationError(f"unknown group {group!r}; expected one of {GROUPS}")
    members = [
        name for name in per_dataset
        if group == "all" or domains.get(name) == group
    ]
    if not members:
        raise ValidationError(f"no datasets in group {group!r}")
    reference = [assoc.signal_id for assoc in per_dataset[members[0]]]
    for name in members[1:]:
        if [assoc.signal_id for assoc in per_dataset[name]] != reference:
            raise ValidationError(f"dataset {name!r} has a different signal set")
    out = []
    for i, sid in enumerate(reference):
        values = [per_dataset[name][i].normalized for name in members]
        flags = [per_dataset[name][i].reject for name in members]
        out.append(
            AggregateAssociation(
                signal_id=sid,
                normalized=float(np.mean(values)),
                reject=all(flags),
            )
        )
    return out


def ablation(vm: VoteMatrix, labels, folds: FoldPlan, cfg: LabelModelConfig,
             corr: CorrelationSet | None = None,
             baseline_f1: float | None = None) -> list[AblationEntry]:
    """Drop each signal in turn and re-run cross-validation with identical
    folds and seeds; report the percent change against the full-signal run.

    Pass ``baseline_f1`` to reuse an already-computed full-signal score.
    """
    if vm.n < 2:
        raise ValidationError("ablation needs at least two signals")
    corr = corr or CorrelationSet()
    if baseline_f1 is None:
        baseline = run_cv(vm, labels, folds, method="pastel", cfg=cfg, corr=corr).f1_mean
    else:
        baseline = baseline_f1
    entries = []
    for j, sid in enumerate(vm.signal_ids):
        reduced = vm.without_column(sid)
        score = run_cv(
            reduced, labels, folds, method="pastel", cfg=cfg, corr=corr.drop_column(j)
        ).f1_mean
        entries.append(AblationEntry(signal_id=sid, baseline_f1=baseline, ablated_f1=score))
    return entries


def tp_fn_frequencies(am: AnswerMatrix, predictions, gold) -> TriggerFrequencies:
    """Yes rates per signal among TP (pred 1, gold 1) and FN (pred 0, gold 1) rows."""
    predictions = np.asarray(predictions)
    gold = _check_labels(am, gold)
    if predictions.shape[0] != am.m:
        raise ValidationError("predictions must align with the answer matrix rows")
    tp_rows = (predictions == 1) & (gold == 1)
    fn_rows = (predictions == 0) & (gold == 1)
    tp_count = int(tp_rows.sum())
    fn_count = int(fn_rows.sum())

    def rates(mask, count):
        if count == 0:
            return tuple(None for _ in am.signal_ids)
        sub = am.values[mask]
        return tuple(float(np.sum(sub[:, j] == "yes")) / count for j in range(am.n))

    return TriggerFrequencies(
        tp_count=tp_count,
        fn_count=fn_count,
        signal_ids=tuple(am.signal_ids),
        tp_freq=rates(tp_rows, tp_count),
        fn_freq=rates(fn_rows, fn_count),
    )


def _check_labels(am: AnswerMatrix, labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape[0] != am.m:
        raise ValidationError("labels must align with the answer matrix rows")
    if not np.isin(labels, (0, 1)).all():
        raise ValidationError("labels must be binary")
    return labels.astype(np.int8)
