"""Metrics and evaluation protocols: macro F1, confusion counts, error rates,
k-fold cross-validation, and cross-domain transfer.

The positive class is misinformation (1). Cross-validation fits the label
model on training folds only (labels are never used for fitting, only for
scoring) and reports mean, sample standard deviation, and standard error
across folds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import FoldPlan
from .errors import ValidationError
from .label_model import (
    CorrelationSet,
    LabelModelConfig,
    VoteMatrix,
    fit,
    majority_vote,
    predict_proba,
)

METHODS = ("pastel", "majority")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValidationError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            tn=self.tn + other.tn,
        )

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def _check_binary(preds, labels) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValidationError(
            f"predictions ({preds.shape}) and labels ({labels.shape}) differ in length"
        )
    if preds.size == 0:
        raise ValidationError("empty input")
    if not np.isin(preds, (0, 1)).all() or not np.isin(labels, (0, 1)).all():
        raise ValidationError("predictions and labels must be binary")
    return preds.astype(np.int8), labels.astype(np.int8)


def confusion(preds, labels) -> ConfusionCounts:
    preds, labels = _check_binary(preds, labels)
    return ConfusionCounts(
        tp=int(np.sum((preds == 1) & (labels == 1))),
        fp=int(np.sum((preds == 1) & (labels == 0))),
        fn=int(np.sum((preds == 0) & (labels == 1))),
        tn=int(np.sum((preds == 0) & (labels == 0))),
    )


def f1_macro(preds, labels) -> float:
    """Unweighted mean of per-class F1.

    A class absent from both predictions and labels scores a vacuous 1;
    a class predicted or present but never matched scores 0.
    """
    preds, labels = _check_binary(preds, labels)
    scores = []
    for cls in (0, 1):
        tp = int(np.sum((preds == cls) & (labels == cls)))
        fp = int(np.sum((preds == cls) & (labels != cls)))
        fn = int(np.sum((preds != cls) & (labels == cls)))
        denom = 2 * tp + fp + fn
        scores.append(1.0 if denom == 0 else 2.0 * tp / denom)
    return float(np.mean(scores))


def fnr_fpr(c: ConfusionCounts) -> tuple[float | None, float | None]:
    """False-negative and false-positive rates; None marks a zero denominator."""
    fnr = c.fn / (c.tp + c.fn) if (c.tp + c.fn) > 0 else None
    fpr = c.fp / (c.fp + c.tn) if (c.fp + c.tn) > 0 else None
    return fnr, fpr


@dataclass
class EvaluationReport:
    method: str
    dataset: str
    k: int
    seed: int
    fold_f1: list[float]
    fold_confusion: list[ConfusionCounts]
    protocol: str = ""
    oof_probabilities: np.ndarray | None = field(default=None, repr=False, compare=False)
    oof_predictions: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def f1_mean(self) -> float:
        return float(np.mean(self.fold_f1))

    @property
    def f1_std(self) -> float:
        """Sample (n-1) standard deviation across folds; 0 for a single fold."""
        return float(np.std(self.fold_f1, ddof=1)) if len(self.fold_f1) > 1 else 0.0

    @property
    def f1_sem(self) -> float:
        return self.f1_std / math.sqrt(len(self.fold_f1)) if self.fold_f1 else 0.0

    @property
    def confusion_total(self) -> ConfusionCounts:
        total = ConfusionCounts()
        for c in self.fold_confusion:
            total = total + c
        return total

    @property
    def fnr(self) -> float | None:
        return fnr_fpr(self.confusion_total)[0]

    @property
    def fpr(self) -> float | None:
        return fnr_fpr(self.confusion_total)[1]

    def to_json(self) -> str:
        payload = {
            "method": self.method,
            "dataset": self.dataset,
            "k": self.k,
            "seed": self.seed,
            "protocol": self.protocol,
            "fold_f1": [float(v) for v in self.fold_f1],
            "fold_confusion": [c.to_dict() for c in self.fold_confusion],
            "f1_mean": self.f1_mean,
            "f1_std": self.f1_std,
            "f1_sem": self.f1_sem,
            "confusion_total": self.confusion_total.to_dict(),
            "fnr": self.fnr,
            "fpr": self.fpr,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvaluationReport":
        doc = json.loads(text)
        return cls(
            method=doc["method"],
            dataset=doc["dataset"],
            k=doc["k"],
            seed=doc["seed"],
            protocol=doc.get("protocol", ""),
            fold_f1=list(doc["fold_f1"]),
            fold_confusion=[ConfusionCounts(**c) for c in doc["fold_confusion"]],
        )

    def render_row(self) -> str:
        return (
            f"{self.dataset:<16} {self.method:<10} "
            f"F1-macro {self.f1_mean:.4f} ±{self.f1_std:.4f} (sem {self.f1_sem:.4f})  "
            f"FNR {_fmt_rate(self.fnr)}  FPR {_fmt_rate(self.fpr)}"
        )


def _fmt_rate(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.3f}"


def fold_seed(base_seed: int, fold: int) -> int:
    """Stable per-fold seed so parallel and serial fold evaluation agree."""
    return int(np.random.SeedSequence((base_seed, fold)).generate_state(1)[0])


def run_cv(vm: VoteMatrix, labels, folds: FoldPlan, method: str = "pastel",
           cfg: LabelModelConfig | None = None,
           corr: CorrelationSet | None = None) -> EvaluationReport:
    """k-fold protocol: fit on train folds (votes only), score on the held-out fold."""
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; expected one of {METHODS}")
    labels = np.asarray(labels)
    if labels.shape[0] != vm.m or folds.assignments.shape[0] != vm.m:
        raise ValidationError("labels and fold plan must align with the vote matrix rows")
    if method == "pastel" and cfg is None:
        raise ValidationError("pastel evaluation requires a label-model config")

    fold_f1: list[float] = []
    fold_conf: list[ConfusionCounts] = []
    oof_prob = np.full(vm.m, np.nan)
    oof_pred = np.full(vm.m, -1, dtype=np.int8)
    for f in range(folds.k):
        test_idx = folds.test_indices(f)
        if test_idx.size == 0:
            raise ValidationError(f"fold {f} has no test rows")
        if method == "pastel":
            train_idx = folds.train_indices(f)
            params = fit(vm.rows(train_idx), corr, replace(cfg, seed=fold_seed(cfg.seed, f)))
            wl = predict_proba(params, vm.rows(test_idx))
        else:
            wl = majority_vote(vm.rows(test_idx))
        fold_f1.append(f1_macro(wl.predictions, labels[test_idx]))
        fold_conf.append(confusion(wl.predictions, labels[test_idx]))
        oof_prob[test_idx] = wl.probabilities
        oof_pred[test_idx] = wl.predictions

    return EvaluationReport(
        method=method,
        dataset=vm.dataset,
        k=folds.k,
        seed=cfg.seed if cfg is not None else folds.seed,
        fold_f1=fold_f1,
        fold_confusion=fold_conf,
        protocol=f"cv{folds.k}",
        oof_probabilities=oof_prob,
        oof_predictions=oof_pred,
    )


def run_cross_domain(train_vm: VoteMatrix, test_vm: VoteMatrix, test_labels,
                     cfg: LabelModelConfig,
                     corr: CorrelationSet | None = None) -> EvaluationReport:
    """Fit on every training row, evaluate once on every test row; no folds."""
    if list(train_vm.signal_ids) != list(test_vm.signal_ids):
        raise ValidationError(
            "train and test matrices disagree on signal columns: "
            f"{train_vm.signal_ids} vs {test_vm.signal_ids}"
        )
    test_labels = np.asarray(test_labels)
    if test_labels.shape[0] != test_vm.m:
        raise ValidationError("labels must align with the test matrix rows")
    params = fit(train_vm, corr, cfg)
    wl = predict_proba(params, test_vm)
    return EvaluationReport(
        method="pastel",
        dataset=f"{train_vm.dataset}->{test_vm.dataset}",
        k=1,
        seed=cfg.seed,
        fold_f1=[f1_macro(wl.predictions, test_labels)],
        fold_confusion=[confusion(wl.predictions, test_labels)],
        protocol="crossdomain",
        oof_probabilities=wl.probabilities,
        oof_predictions=wl.predictions,
    )


def evaluate_zeroshot(preds, labels, folds: FoldPlan | None = None,
                      dataset: str = "") -> EvaluationReport:
    """Score direct binary predictions; with a fold plan, per held-out fold."""
    preds, labels = _check_binary(preds, labels)
    if folds is None:
        fold_f1 = [f1_macro(preds, labels)]
        fold_conf = [confusion(preds, labels)]
        k, seed = 1, 0
    else:
        if folds.assignments.shape[0] != preds.shape[0]:
            raise ValidationError("fold plan must align with the predictions")
        fold_f1, fold_conf = [], []
        for f in range(folds.k):
            idx = folds.test_indices(f)
            fold_f1.append(f1_macro(preds[idx], labels[idx]))
            fold_conf.append(confusion(preds[idx], labels[idx]))
        k, seed = folds.k, folds.seed
    return EvaluationReport(
        method="zeroshot",
        dataset=dataset,
        k=k,
        seed=seed,
        fold_f1=fold_f1,
        fold_confusion=fold_conf,
        protocol=f"cv{k}" if folds is not None else "single",
        oof_predictions=preds,
    )
