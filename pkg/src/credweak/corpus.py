"""Article corpora: loading, validation, statistics, stratified folds, truncation.

The canonical on-disk format is JSONL with fields {id, title, text, label};
CSV files are mapped onto it through a configurable column mapping. Label
vocabulary is config-driven (e.g. "fake" -> 1) because source datasets ship
with heterogeneous label spellings.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

DOMAIN_TAGS = ("politics", "entertainment", "other")

# Accepted without an explicit label_map: the canonical 0/1 encoding.
_CANONICAL_LABELS = {0: 0, 1: 1, "0": 0, "1": 1}


@dataclass(frozen=True)
class Article:
    """One news item. ``label`` is 1 for misinformation, 0 otherwise, None if unknown."""

    id: str
    title: str
    body: str
    label: int | None = None

    def __post_init__(self):
        if not self.id:
            raise ValidationError("article id must be nonempty")
        if not self.title and not self.body:
            raise ValidationError(f"article {self.id!r}: title and body are both empty")
        if self.label is not None and self.label not in (0, 1):
            raise ValidationError(f"article {self.id!r}: label must be 0 or 1, got {self.label!r}")

    def tokens(self) -> list[str]:
        """Whitespace tokens of title followed by body."""
        return self.title.split() + self.body.split()


@dataclass
class Dataset:
    name: str
    articles: list[Article]
    domain_tag: str = "other"

    def __post_init__(self):
        if not self.name:
            raise ValidationError("dataset name must be nonempty")
        if self.domain_tag not in DOMAIN_TAGS:
            raise ValidationError(
                f"dataset {self.name!r}: domain_tag must be one of {DOMAIN_TAGS}, got {self.domain_tag!r}"
            )
        seen: set[str] = set()
        for a in self.articles:
            if a.id in seen:
                raise ValidationError(f"dataset {self.name!r}: duplicate article id {a.id!r}")
            seen.add(a.id)
        labelled = [a for a in self.articles if a.label is not None]
        if labelled and len(labelled) != len(self.articles):
            raise ValidationError(
                f"dataset {self.name!r}: mixed labeled/unlabeled articles "
                f"({len(labelled)} of {len(self.articles)} labeled)"
            )

    def __len__(self) -> int:
        return len(self.articles)

    def __iter__(self):
        return iter(self.articles)

    @property
    def ids(self) -> list[str]:
        return [a.id for a in self.articles]

    @property
    def is_labeled(self) -> bool:
        return bool(self.articles) and self.articles[0].label is not None

    def labels(self) -> np.ndarray:
        if not self.is_labeled:
            raise ValidationError(f"dataset {self.name!r} is unlabeled")
        return np.array([a.label for a in self.articles], dtype=np.int8)


@dataclass(frozen=True)
class FoldPlan:
    """Per-article fold assignment for k-fold cross-validation."""

    k: int
    seed: int
    assignments: np.ndarray  # shape (m,), values in [0, k)

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


@dataclass(frozen=True)
class StatsSummary:
    dataset: str
    size: int
    class_counts: dict[int, int]
    class_proportions: dict[int, float]
    mean_tokens: float

    def to_json(self) -> str:
        payload = {
            "dataset": self.dataset,
            "size": self.size,
            "class_counts": {str(k): v for k, v in sorted(self.class_counts.items())},
            "class_proportions": {str(k): v for k, v in sorted(self.class_proportions.items())},
            "mean_tokens": self.mean_tokens,
        }
        return json.dumps(payload, sort_keys=True)


@dataclass(frozen=True)
class TruncationResult:
    article: Article
    truncated: bool
    title_overflow: bool  # title alone exceeded the budget; body dropped entirely


def _parse_label(raw, label_map: dict | None, where: str) -> int:
    mapping = label_map if label_map is not None else _CANONICAL_LABELS
    key = raw
    if key not in mapping and isinstance(key, str):
        key = key.strip().lower()
    if key not in mapping:
        raise ValidationError(f"{where}: unmappable label {raw!r}")
    value = mapping[key]
    if value not in (0, 1):
        raise ValidationError(f"{where}: label map must target 0/1, got {value!r}")
    return value


def _record_to_article(rec: dict, label_map: dict | None, where: str) -> Article:
    for req in ("id", "title", "text"):
        if req not in rec or rec[req] is None:
            raise ValidationError(f"{where}: missing field {req!r}")
    label = None
    if rec.get("label") is not None and rec.get("label") != "":
        label = _parse_label(rec["label"], label_map, where)
    try:
        return Article(id=str(rec["id"]), title=str(rec["title"]), body=str(rec["text"]), label=label)
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def load_dataset(
    path: str | Path,
    format: str = "jsonl",
    name: str | None = None,
    domain_tag: str = "other",
    label_map: dict | None = None,
    columns: dict[str, str] | None = None,
) -> Dataset:
    """Load a dataset from JSONL or CSV.

    ``columns`` maps the canonical field names (id, title, text, label) to the
    CSV header names; it defaults to the identity mapping. Errors carry the
    offending line number.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"dataset file not found: {path}")
    name = name or path.stem
    records: list[Article] = []

    if format == "jsonl":
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                where = f"{path}:{lineno}"
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValidationError(f"{where}: invalid JSON ({exc.msg})") from exc
                if not isinstance(rec, dict):
                    raise ValidationError(f"{where}: record is not an object")
                records.append(_record_to_article(rec, label_map, where))
    elif format == "csv":
        colmap = {"id": "id", "title": "title", "text": "text", "label": "label"}
        colmap.update(columns or {})
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None:
                raise ValidationError(f"{path}: empty CSV (header row required)")
            for canonical in ("id", "title", "text"):
                if colmap[canonical] not in reader.fieldnames:
                    raise ValidationError(f"{path}: missing column {colmap[canonical]!r}")
            has_label = colmap["label"] in reader.fieldnames
            for lineno, row in enumerate(reader, start=2):
                where = f"{path}:{lineno}"
                rec = {
                    "id": row.get(colmap["id"]),
                    "title": row.get(colmap["title"]) or "",
                    "text": row.get(colmap["text"]) or "",
                    "label": row.get(colmap["label"]) if has_label else None,
                }
                records.append(_record_to_article(rec, label_map, where))
    else:
        raise ValidationError(f"unknown dataset format {format!r} (expected jsonl or csv)")

    if not records:
        raise ValidationError(f"{path}: no records")
    return Dataset(name=name, articles=records, domain_tag=domain_tag)


def save_dataset(d: Dataset, path: str | Path) -> None:
    """Write the canonical JSONL rendering (round-trips through load_dataset)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for a in d.articles:
            rec = {"id": a.id, "title": a.title, "text": a.body}
            if a.label is not None:
                rec["label"] = a.label
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")


def dataset_stats(d: Dataset) -> StatsSummary:
    size = len(d)
    counts: dict[int, int] = {}
    if d.is_labeled:
        labels = d.labels()
        counts = {0: int(np.sum(labels == 0)), 1: int(np.sum(labels == 1))}
    proportions = {k: v / size for k, v in counts.items()} if size else {}
    mean_tokens = float(np.mean([len(a.tokens()) for a in d.articles])) if size else 0.0
    return StatsSummary(
        dataset=d.name,
        size=size,
        class_counts=counts,
        class_proportions=proportions,
        mean_tokens=mean_tokens,
    )


def make_folds(d: Dataset, k: int, seed: int) -> FoldPlan:
    """Stratified folds: seeded shuffle then round-robin assignment within each class.

    Deterministic for a given (dataset, k, seed); per-fold class balance is
    within one article of the dataset proportion.
    """
    if k < 2:
        raise ValidationError(f"fold count must be >= 2, got {k}")
    labels = d.labels()  # raises on unlabeled
    assignments = np.full(len(d), -1, dtype=np.int64)
    rng = np.random.default_rng(seed)
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        if members.size < k:
            raise ValidationError(
                f"dataset {d.name!r}: class {cls} has {members.size} members, fewer than k={k}"
            )
        order = rng.permutation(members.size)
        for position, idx in enumerate(members[order]):
            assignments[idx] = position % k
    return FoldPlan(k=k, seed=seed, assignments=assignments)


def truncate_for_context(a: Article, budget: int) -> TruncationResult:
    """Trim the body at a whitespace-token boundary so title+body fit the budget.

    The title is always kept in full; if it alone exceeds the budget the body
    is dropped and ``title_overflow`` is set. Idempotent.
    """
    if budget <= 0:
        raise ValidationError(f"token budget must be positive, got {budget}")
    title_len = len(a.title.split())
    body_tokens = a.body.split()
    keep = max(budget - title_len, 0)
    title_overflow = title_len > budget
    if len(body_tokens) <= keep:
        return TruncationResult(article=a, truncated=False, title_overflow=title_overflow)
    trimmed = Article(id=a.id, title=a.title, body=" ".join(body_tokens[:keep]), label=a.label)
    return TruncationResult(article=trimmed, truncated=True, title_overflow=title_overflow)
