"""Generative label model over ternary signal votes.

Votes encode each signal's answer as 1 (votes misinformation), 0 (votes
legitimate) or -1 (abstain). The model is log-linear over per-signal accuracy
and propensity indicators plus optional pairwise agreement indicators, and is
trained without ground truth by minimising the negative log marginal
likelihood of the observed votes with gradient descent. The negative phase is
exact enumeration for narrow matrices and persistent-chain Gibbs sampling
otherwise; both run through the kernels module.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import FitDivergence, ValidationError
from .extraction import AnswerMatrix

VOTE_MISINFO = 1
VOTE_LEGIT = 0
VOTE_ABSTAIN = -1

_ANSWER_TO_VOTE = {"yes": VOTE_MISINFO, "no": VOTE_LEGIT, "unsure": VOTE_ABSTAIN}


@dataclass
class VoteMatrix:
    """m x n labeling-function output matrix with entries in {1, 0, -1}."""

    dataset: str
    article_ids: list[str]
    signal_ids: list[str]
    votes: np.ndarray  # int8, shape (m, n)

    def __post_init__(self):
        self.votes = np.asarray(self.votes, dtype=np.int8)
        m, n = self.votes.shape
        if m != len(self.article_ids) or n != len(self.signal_ids):
            raise ValidationError("vote matrix shape does not match id registries")
        bad = ~np.isin(self.votes, (1, 0, -1))
        if bad.any():
            raise ValidationError("vote matrix entries must be in {1, 0, -1}")

    @property
    def m(self) -> int:
        return self.votes.shape[0]

    @property
    def n(self) -> int:
        return self.votes.shape[1]

    def rows(self, indices) -> "VoteMatrix":
        indices = np.asarray(indices)
        return VoteMatrix(
            dataset=self.dataset,
            article_ids=[self.article_ids[i] for i in indices],
            signal_ids=list(self.signal_ids),
            votes=self.votes[indices],
        )

    def without_column(self, signal_id: str) -> "VoteMatrix":
        if signal_id not in self.signal_ids:
            raise ValidationError(f"unknown signal id {signal_id!r}")
        j = self.signal_ids.index(signal_id)
        keep = [k for k in range(self.n) if k != j]
        return VoteMatrix(
            dataset=self.dataset,
            article_ids=list(self.article_ids),
            signal_ids=[self.signal_ids[k] for k in keep],
            votes=self.votes[:, keep],
        )


@dataclass(frozen=True)
class CorrelationSet:
    """Unordered index pairs of potentially correlated labeling functions."""

    pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        seen = set()
        for a, b in self.pairs:
            if a == b:
                raise ValidationError(f"correlation pair ({a},{b}) is a self-pair")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise ValidationError(f"duplicate correlation pair {key}")
            seen.add(key)
        object.__setattr__(self, "pairs", tuple(sorted((min(a, b), max(a, b)) for a, b in self.pairs)))

    def __len__(self) -> int:
        return len(self.pairs)

    def validate_for(self, n: int) -> None:
        for a, b in self.pairs:
            if not (0 <= a < n and 0 <= b < n):
                raise ValidationError(f"correlation pair ({a},{b}) out of range for n={n}")

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        a = np.array([p[0] for p in self.pairs], dtype=np.int64)
        b = np.array([p[1] for p in self.pairs], dtype=np.int64)
        return a, b

    def drop_column(self, j: int) -> "CorrelationSet":
        """Remove pairs touching column j and reindex the remainder."""
        kept = []
        for a, b in self.pairs:
            if a == j or b == j:
                continue
            kept.append((a - (a > j), b - (b > j)))
        return CorrelationSet(pairs=tuple(kept))


@dataclass(frozen=True)
class LabelModelConfig:
    seed: int
    epochs: int = 500
    step_size: float = 0.1
    mode: str = "auto"  # exact | gibbs | auto (exact when n <= exact_limit)
    chains: int = 100
    sweeps: int = 5
    prior: float = 0.5
    init_accuracy: float = 0.5
    exact_limit: int = kernels.EXACT_MAX_N

    def __post_init__(self):
        if self.seed is None or int(self.seed) < 0:
            raise ValidationError("label-model seed is mandatory and must be >= 0")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.step_size <= 0:
            raise ValidationError("step size must be positive")
        if self.mode not in ("exact", "gibbs", "auto"):
            raise ValidationError(f"unknown fit mode {self.mode!r}")
        if self.chains < 1 or self.sweeps < 1:
            raise ValidationError("chains and sweeps must be >= 1")
        if not (0.0 < self.prior < 1.0):
            raise ValidationError("class prior must lie strictly inside (0, 1)")


@dataclass
class LabelModelParams:
    """Learned weights [accuracy (n) | propensity (n) | correlation (|C|)]."""

    n: int
    corr: CorrelationSet
    weights: np.ndarray
    prior: float
    epochs: int
    seed: int
    mode: str
    objective_trace: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        expected = 2 * self.n + len(self.corr)
        if self.weights.shape != (expected,):
            raise ValidationError(
                f"weight vector must have length {expected}, got {self.weights.shape}"
            )
        if not np.all(np.isfinite(self.weights)):
            raise ValidationError("weights must be finite")
        if not (0.0 < self.prior < 1.0):
            raise ValidationError("class prior must lie strictly inside (0, 1)")

    @property
    def accuracy_weights(self) -> np.ndarray:
        return self.weights[: self.n]

    @property
    def propensity_weights(self) -> np.ndarray:
        return self.weights[self.n : 2 * self.n]

    @property
    def correlation_weights(self) -> np.ndarray:
        return self.weights[2 * self.n :]

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else float("nan")

    def to_json(self) -> str:
        payload = {
            "n": self.n,
            "pairs": [list(p) for p in self.corr.pairs],
            "weights": [float(w) for w in self.weights],
            "prior": self.prior,
            "epochs": self.epochs,
            "seed": self.seed,
            "mode": self.mode,
            "objective_trace": [float(v) for v in self.objective_trace],
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LabelModelParams":
        doc = json.loads(text)
        return cls(
            n=doc["n"],
            corr=CorrelationSet(pairs=tuple(tuple(p) for p in doc["pairs"])),
            weights=np.array(doc["weights"], dtype=np.float64),
            prior=doc["prior"],
            epochs=doc["epochs"],
            seed=doc["seed"],
            mode=doc["mode"],
            objective_trace=list(doc["objective_trace"]),
        )


@dataclass
class WeakLabels:
    """Per-article misinformation probability and thresholded prediction."""

    article_ids: list[str]
    probabilities: np.ndarray  # float64 in [0, 1]
    predictions: np.ndarray  # int8 in {0, 1}; ties at 0.5 resolve to 0
    all_abstain: np.ndarray  # bool; row had no non-abstain votes


def answers_to_votes(am: AnswerMatrix) -> VoteMatrix:
    """Encode answers: Yes -> 1 (votes misinformation), No -> 0, Unsure -> -1."""
    votes = np.empty(am.values.shape, dtype=np.int8)
    for answer, vote in _ANSWER_TO_VOTE.items():
        votes[am.values == answer] = vote
    return VoteMatrix(
        dataset=am.dataset,
        article_ids=list(am.article_ids),
        signal_ids=list(am.signal_ids),
        votes=votes,
    )


def majority_vote(vm: VoteMatrix) -> WeakLabels:
    """Fraction of non-abstain votes for misinformation; all-abstain rows get 0.5."""
    pos = (vm.votes == VOTE_MISINFO).sum(axis=1).astype(np.float64)
    neg = (vm.votes == VOTE_LEGIT).sum(axis=1).astype(np.float64)
    active = pos + neg
    all_abstain = active == 0
    probs = np.full(vm.m, 0.5)
    np.divide(pos, active, out=probs, where=~all_abstain)
    preds = (probs > 0.5).astype(np.int8)
    return WeakLabels(
        article_ids=list(vm.article_ids),
        probabilities=probs,
        predictions=preds,
        all_abstain=all_abstain,
    )


def select_correlations(vm: VoteMatrix, threshold: float = 1.0) -> CorrelationSet:
    """Pairs whose agreement rate over mutually non-abstaining rows exceeds threshold.

    The default threshold of 1.0 cannot be exceeded, so no pairs are selected.
    """
    if not (0.0 <= threshold <= 1.0):
        raise ValidationError("correlation threshold must lie in [0, 1]")
    if vm.m < 2:
        raise ValidationError("need at least two rows to estimate agreement")
    pairs = []
    for j in range(vm.n):
        for k in range(j + 1, vm.n):
            both = (vm.votes[:, j] != VOTE_ABSTAIN) & (vm.votes[:, k] != VOTE_ABSTAIN)
            count = int(both.sum())
            if count == 0:
                continue
            agree = int(((vm.votes[:, j] == vm.votes[:, k]) & both).sum())
            if agree / count > threshold:
                pairs.append((j, k))
    return CorrelationSet(pairs=tuple(pairs))


def features(row, y: int, corr: CorrelationSet) -> np.ndarray:
    """Reference feature map for one vote row and a candidate label.

    Accuracy block: vote equals the label (abstains never match). Propensity
    block: vote is not abstain. Correlation block: paired votes agree.
    """
    row = np.asarray(row, dtype=np.int8)
    if y not in (0, 1):
        raise ValidationError(f"label must be 0 or 1, got {y!r}")
    if not np.isin(row, (1, 0, -1)).all():
        raise ValidationError("vote row entries must be in {1, 0, -1}")
    n = row.shape[0]
    corr.validate_for(n)
    phi = np.zeros(2 * n + len(corr), dtype=np.float64)
    phi[:n] = row == y
    phi[n : 2 * n] = row != VOTE_ABSTAIN
    for i, (a, b) in enumerate(corr.pairs):
        phi[2 * n + i] = 1.0 if row[a] == row[b] else 0.0
    return phi


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class _DataStats:
    """Per-fit cached indicator matrices of the observed votes."""

    def __init__(self, votes: np.ndarray, corr: CorrelationSet):
        self.m, self.n = votes.shape
        self.a1 = (votes == VOTE_MISINFO).astype(np.float64)
        self.a0 = (votes == VOTE_LEGIT).astype(np.float64)
        self.prop = self.a1 + self.a0
        a, b = corr.arrays()
        self.corr = (votes[:, a] == votes[:, b]).astype(np.float64)
        self.prop_mean = self.prop.mean(axis=0)
        self.corr_mean = self.corr.mean(axis=0) if len(corr) else np.zeros(0)

    def positive_phase(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean per-row log marginal score and data-conditional feature expectation."""
        n = self.n
        w_acc, w_prop, w_corr = w[:n], w[n : 2 * n], w[2 * n :]
        s1 = self.a1 @ w_acc
        s0 = self.a0 @ w_acc
        base = self.prop @ w_prop
        if w_corr.shape[0]:
            base += self.corr @ w_corr
        data_term = float(np.mean(base + np.logaddexp(s1, s0)))
        p1 = _sigmoid(s1 - s0)
        e_acc = (self.a1.T @ p1 + self.a0.T @ (1.0 - p1)) / self.m
        return data_term, np.concatenate([e_acc, self.prop_mean, self.corr_mean])


def nll_and_grad(votes: np.ndarray, corr: CorrelationSet, w: np.ndarray,
                 engine: kernels.ExactEngine | None = None,
                 stats: _DataStats | None = None) -> tuple[float, np.ndarray]:
    """Exact negative log marginal likelihood (per row) and its gradient."""
    votes = np.asarray(votes, dtype=np.int8)
    n = votes.shape[1]
    if stats is None:
        stats = _DataStats(votes, corr)
    if engine is None:
        a, b = corr.arrays()
        engine = kernels.ExactEngine(n, a, b)
    data_term, e_data = stats.positive_phase(w)
    log_z, e_model = engine.expectations(w[:n], w[n : 2 * n], w[2 * n :])
    return log_z - data_term, e_model - e_data


def _initial_weights(n: int, corr: CorrelationSet, init_accuracy: float) -> np.ndarray:
    # Positive accuracy init anchors the better-than-chance mode; the marginal
    # likelihood cannot distinguish it from the globally flipped one.
    w = np.zeros(2 * n + len(corr), dtype=np.float64)
    w[:n] = init_accuracy
    return w


def fit(vm: VoteMatrix, corr: CorrelationSet | None = None,
        cfg: LabelModelConfig | None = None) -> LabelModelParams:
    """Train the label model on observed votes only (no ground truth).

    Exact mode evaluates the true objective each epoch and backtracks (halving
    the step) whenever a step would increase it, so the recorded trace is
    non-increasing. Gibbs mode uses persistent chains for the negative phase
    with a fixed step; its trace records only the data term, since the
    partition function is unavailable at that scale. Deterministic per seed.
    """
    if cfg is None:
        raise ValidationError("a LabelModelConfig (with seed) is required")
    corr = corr or CorrelationSet()
    corr.validate_for(vm.n)
    if vm.m < 1:
        raise ValidationError("vote matrix has no rows")
    if np.all(vm.votes == VOTE_ABSTAIN):
        raise ValidationError("every vote abstains; nothing to fit")

    n = vm.n
    mode = cfg.mode
    if mode == "auto":
        mode = "exact" if n <= cfg.exact_limit else "gibbs"
    if mode == "exact" and n > cfg.exact_limit:
        raise ValidationError(f"exact mode supports n <= {cfg.exact_limit}, got n={n}")

    stats = _DataStats(vm.votes, corr)
    w = _initial_weights(n, corr, cfg.init_accuracy)
    corr_a, corr_b = corr.arrays()
    trace: list[float] = []

    if mode == "exact":
        engine = kernels.ExactEngine(n, corr_a, corr_b)
        step = cfg.step_size
        nll, grad = nll_and_grad(vm.votes, corr, w, engine=engine, stats=stats)
        if not math.isfinite(nll):
            raise FitDivergence("objective is non-finite at initialisation", last_finite=None)
        trace.append(nll)
        for _ in range(cfg.epochs):
            w_try = w - step * grad
            nll_try, grad_try = nll_and_grad(vm.votes, corr, w_try, engine=engine, stats=stats)
            if not math.isfinite(nll_try) or nll_try > nll + 1e-12:
                step *= 0.5
            else:
                w, nll, grad = w_try, nll_try, grad_try
            trace.append(nll)
    else:
        rng = np.random.default_rng(cfg.seed)
        lam = rng.integers(-1, 2, size=(cfg.chains, n), dtype=np.int8)
        y = rng.integers(0, 2, size=cfg.chains, dtype=np.int8)
        samples = float(cfg.chains * cfg.sweeps)
        last_finite = w.copy()
        for _ in range(cfg.epochs):
            data_term, e_data = stats.positive_phase(w)
            if not math.isfinite(data_term) or not np.all(np.isfinite(w)):
                raise FitDivergence(
                    "gibbs-mode objective went non-finite", last_finite=last_finite
                )
            uniforms = rng.random((cfg.sweeps, cfg.chains, n + 1))
            phi_sum = kernels.gibbs_accumulate(
                lam, y, w[:n], w[n : 2 * n], corr_a, corr_b, w[2 * n :], uniforms
            )
            e_model = phi_sum / samples
            last_finite = w.copy()
            w = w - cfg.step_size * (e_model - e_data)
            trace.append(-data_term)
        if not np.all(np.isfinite(w)):
            raise FitDivergence("gibbs-mode weights went non-finite", last_finite=last_finite)

    return LabelModelParams(
        n=n,
        corr=corr,
        weights=w,
        prior=cfg.prior,
        epochs=cfg.epochs,
        seed=cfg.seed,
        mode=mode,
        objective_trace=trace,
    )


def predict_proba(params: LabelModelParams, vm: VoteMatrix) -> WeakLabels:
    """Exact per-row posterior probability of misinformation under the model."""
    if vm.n != params.n:
        raise ValidationError(
            f"vote matrix has {vm.n} columns but params were fit for {params.n}"
        )
    params.corr.validate_for(vm.n)
    a1 = (vm.votes == VOTE_MISINFO).astype(np.float64)
    a0 = (vm.votes == VOTE_LEGIT).astype(np.float64)
    margin = (a1 - a0) @ params.accuracy_weights
    logit_prior = math.log(params.prior / (1.0 - params.prior))
    probs = _sigmoid(margin + logit_prior)
    preds = (probs > 0.5).astype(np.int8)
    all_abstain = np.all(vm.votes == VOTE_ABSTAIN, axis=1)
    return WeakLabels(
        article_ids=list(vm.article_ids),
        probabilities=probs,
        predictions=preds,
        all_abstain=all_abstain,
    )


def log_partition_exact(weights: np.ndarray, n: int, corr: CorrelationSet) -> float:
    """Brutally enumerable log Z for narrow models; the Gibbs-phase test oracle."""
    weights = np.asarray(weights, dtype=np.float64)
    corr.validate_for(n)
    if weights.shape != (2 * n + len(corr),):
        raise ValidationError(
            f"weight vector must have length {2 * n + len(corr)}, got {weights.shape}"
        )
    a, b = corr.arrays()
    engine = kernels.ExactEngine(n, a, b)
    return engine.log_partition(weights[:n], weights[n : 2 * n], weights[2 * n :])


# ---------------------------------------------------------------------------
# Persistence.
# ---------------------------------------------------------------------------

def save_votes_csv(vm: VoteMatrix, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["article_id", *vm.signal_ids])
        for i, aid in enumerate(vm.article_ids):
            writer.writerow([aid, *(int(v) for v in vm.votes[i])])


def load_votes_csv(path: str | Path, dataset: str | None = None) -> VoteMatrix:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty vote matrix") from None
        signal_ids = header[1:]
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} cells")
            ids.append(row[0])
            try:
                rows.append([int(v) for v in row[1:]])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: non-integer vote") from exc
    return VoteMatrix(
        dataset=dataset or path.stem,
        article_ids=ids,
        signal_ids=signal_ids,
        votes=np.array(rows, dtype=np.int8),
    )


def save_weak_labels_csv(wl: WeakLabels, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["article_id", "probability", "prediction"])
        for aid, prob, pred in zip(wl.article_ids, wl.probabilities, wl.predictions):
            writer.writerow([aid, repr(float(prob)), int(pred)])
