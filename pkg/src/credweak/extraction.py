"""Prompt execution against a completion backend, with a replayable cache.

The cache is a content-addressed directory of JSON entries keyed by a digest
of (model, decoding parameters, prompt). A run that dies mid-matrix resumes
from whatever entries were already written; a directory can be exported to a
single JSONL "fixture pack" and re-imported elsewhere, so published answer
matrices replay without any LLM.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .corpus import Article, Dataset, truncate_for_context
from .errors import ExtractionAborted, TransportError, ValidationError
from .signals import (
    NO,
    UNSURE,
    YES,
    Answer,
    PromptText,
    SignalSpec,
    ZERO_SHOT_ID,
    build_signal_prompt,
    build_zeroshot_prompt,
    parse_answer,
)

DEFAULT_TOKEN_BUDGET = 4096

_ANSWER_STRINGS = {YES: "yes", NO: "no", UNSURE: "unsure"}


@dataclass(frozen=True)
class BackendConfig:
    """Connection and decoding settings for a completion backend."""

    endpoint: str = ""
    model: str = "mock"
    temperature: float = 0.0
    max_new_tokens: int = 8
    timeout: float = 30.0
    retries: int = 2
    concurrency: int = 4
    api_key_env: str = "CREDWEAK_API_KEY"

    def __post_init__(self):
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if self.retries < 0:
            raise ValidationError("retry budget must be >= 0")
        if self.concurrency < 1:
            raise ValidationError("concurrency must be >= 1")

    def decoding_params(self) -> dict:
        return {"temperature": self.temperature, "max_new_tokens": self.max_new_tokens}


class CompletionCache:
    """Content-addressed completion store; one JSON file per entry.

    Writes are atomic (temp file + rename), so an aborted run never leaves a
    partial entry. ``root=None`` keeps entries in memory only.
    """

    def __init__(self, root: str | Path | None):
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
        self._memory: dict[str, dict] = {}

    @staticmethod
    def make_key(model: str, params: dict, prompt: str) -> str:
        canonical = json.dumps(
            {"model": model, "params": params, "prompt": prompt},
            sort_keys=True,
            ensure_ascii=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def get(self, key: str) -> str | None:
        entry = self._memory.get(key)
        if entry is None and self.root is not None:
            path = self._path(key)
            if path.exists():
                entry = json.loads(path.read_text(encoding="utf-8"))
                self._memory[key] = entry
        return entry["completion"] if entry else None

    def put(self, key: str, model: str, params: dict, prompt: str, completion: str) -> None:
        entry = {
            "key": key,
            "model": model,
            "params": params,
            "prompt": prompt,
            "completion": completion,
            "timestamp": time.time(),
        }
        self._memory[key] = entry
        if self.root is not None:
            path = self._path(key)
            tmp = path.with_suffix(".json.tmp")
            tmp.write_text(json.dumps(entry, sort_keys=True, ensure_ascii=False), encoding="utf-8")
            os.replace(tmp, path)

    def entries(self) -> list[dict]:
        merged: dict[str, dict] = {}
        if self.root is not None:
            for path in sorted(self.root.glob("*.json")):
                entry = json.loads(path.read_text(encoding="utf-8"))
                merged[entry["key"]] = entry
        merged.update(self._memory)
        return [merged[k] for k in sorted(merged)]

    def __len__(self) -> int:
        return len(self.entries())

    def export_pack(self, path: str | Path) -> int:
        """Write all entries to a JSONL fixture pack; returns the entry count."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        entries = self.entries()
        with open(path, "w", encoding="utf-8") as f:
            for entry in entries:
                f.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")
        return len(entries)

    def import_pack(self, path: str | Path) -> int:
        """Load entries from a JSONL fixture pack; returns how many were added."""
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"fixture pack not found: {path}")
        added = 0
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
                for req in ("key", "model", "params", "prompt", "completion"):
                    if req not in entry:
                        raise ValidationError(f"{path}:{lineno}: missing field {req!r}")
                if self.get(entry["key"]) is None:
                    self.put(
                        entry["key"], entry["model"], entry["params"],
                        entry["prompt"], entry["completion"],
                    )
                    added += 1
        return added


class HTTPBackend:
    """OpenAI-compatible chat completions over HTTP; one request per call.

    The prompt is sent as a single user message. Bearer auth is taken from
    the environment variable named in the config, when set.
    """

    def __init__(self, cfg: BackendConfig, session: requests.Session | None = None):
        if not cfg.endpoint:
            raise ValidationError("HTTP backend requires an endpoint URL")
        self.cfg = cfg
        self.session = session or requests.Session()

    def request(self, prompt: PromptText, article: Article | None = None) -> str:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.cfg.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt.text}],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_new_tokens,
        }
        try:
            response = self.session.post(
                self.cfg.endpoint, json=payload, headers=headers, timeout=self.cfg.timeout
            )
        except requests.Timeout as exc:
            raise TransportError(f"timeout after {self.cfg.timeout}s", ["timeout"]) from exc
        except requests.RequestException as exc:
            raise TransportError(f"connection failed: {exc}", [f"connection: {exc}"]) from exc
        if response.status_code != 200:
            raise TransportError(
                f"HTTP {response.status_code}: {response.text[:200]}",
                [f"http {response.status_code}"],
            )
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"malformed response body: {exc}", ["malformed body"]) from exc


class ReplayBackend:
    """Cache-only backend: any miss is an error. Used for fixture-pack replay."""

    def request(self, prompt: PromptText, article: Article | None = None) -> str:
        raise TransportError(
            "cache miss in replay mode (fixture pack does not cover this prompt)",
            ["replay miss"],
        )


@dataclass(frozen=True)
class MockProfile:
    """Behaviour of one simulated labeling function."""

    accuracy: float = 0.75
    abstain_rate: float = 0.05

    def __post_init__(self):
        if not (0.0 <= self.accuracy <= 1.0 and 0.0 <= self.abstain_rate <= 1.0):
            raise ValidationError("mock accuracy and abstain rate must lie in [0, 1]")


class MockBackend:
    """Deterministic test double: answers derive from hashing (seed, prompt).

    With a labeled article the answer is correct (Yes for misinformation)
    with the profile's accuracy after an abstain draw; unlabeled articles get
    a fair Yes/No coin. Identical across processes for a given seed.
    """

    def __init__(self, seed: int, profiles: dict[str, MockProfile] | None = None,
                 default_profile: MockProfile | None = None):
        self.seed = seed
        self.profiles = dict(profiles or {})
        self.default_profile = default_profile or MockProfile()

    def _uniforms(self, prompt_text: str) -> tuple[float, float]:
        digest = hashlib.sha256(f"{self.seed}|{prompt_text}".encode("utf-8")).digest()
        u1 = int.from_bytes(digest[:8], "big") / 2**64
        u2 = int.from_bytes(digest[8:16], "big") / 2**64
        return u1, u2

    def request(self, prompt: PromptText, article: Article | None = None) -> str:
        profile = self.profiles.get(prompt.signal_id, self.default_profile)
        u1, u2 = self._uniforms(prompt.text)
        allow_unsure = prompt.signal_id != ZERO_SHOT_ID
        if allow_unsure and u1 < profile.abstain_rate:
            return UNSURE
        label = article.label if article is not None else None
        if label is None:
            return YES if u2 < 0.5 else NO
        correct = YES if label == 1 else NO
        wrong = NO if label == 1 else YES
        return correct if u2 < profile.accuracy else wrong


@dataclass
class AnswerMatrix:
    """m x n grid of parsed ternary answers plus per-cell parse warnings."""

    dataset: str
    article_ids: list[str]
    signal_ids: list[str]
    values: np.ndarray  # dtype <U6, entries in {"yes", "no", "unsure"}
    warnings: np.ndarray  # bool, same shape

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.warnings = np.asarray(self.warnings, dtype=bool)
        shape = (len(self.article_ids), len(self.signal_ids))
        if self.values.shape != shape or self.warnings.shape != shape:
            raise ValidationError("answer matrix shape does not match id registries")
        bad = ~np.isin(self.values, list(_ANSWER_STRINGS.values()))
        if bad.any():
            raise ValidationError("answer matrix cells must be yes/no/unsure")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass
class ZeroShotResult:
    """Direct binary veracity predictions (1 = misinformation)."""

    dataset: str
    article_ids: list[str]
    predictions: np.ndarray  # int8 in {0, 1}
    warnings: np.ndarray  # bool


def complete(prompt: PromptText, cfg: BackendConfig, cache: CompletionCache,
             backend, article: Article | None = None) -> str:
    """Cache-first completion with a bounded retry loop around the backend."""
    key = CompletionCache.make_key(cfg.model, cfg.decoding_params(), prompt.text)
    cached = cache.get(key)
    if cached is not None:
        return cached
    attempts: list[str] = []
    for attempt in range(cfg.retries + 1):
        try:
            completion = backend.request(prompt, article)
        except TransportError as exc:
            attempts.extend(exc.attempts or [str(exc)])
            continue
        cache.put(key, cfg.model, cfg.decoding_params(), prompt.text, completion)
        return completion
    raise TransportError(
        f"backend failed after {cfg.retries + 1} attempts", attempts
    )


def _run_cells(cells, cfg: BackendConfig, worker):
    """Bounded-parallel fan-out; deterministic assembly keyed by cell index."""
    results: dict[tuple[int, int], object] = {}
    if cfg.concurrency == 1:
        for cell in cells:
            try:
                results[cell[0]] = worker(cell)
            except Exception as exc:  # noqa: BLE001 - re-raised with manifest
                raise _abort(results, exc) from exc
        return results
    with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
        futures = {pool.submit(worker, cell): cell[0] for cell in cells}
        error = None
        for future in futures:
            try:
                results[futures[future]] = future.result()
            except Exception as exc:  # noqa: BLE001 - re-raised below with manifest
                if error is None:
                    error = exc
        if error is not None:
            raise _abort(results, error)
    return results


def _abort(results, error):
    completed = sorted(results)
    return ExtractionAborted(
        f"extraction aborted: {error}", completed=completed, cause=error
    )


def extract_signals(d: Dataset, catalog: list[SignalSpec], cfg: BackendConfig,
                    cache: CompletionCache, backend,
                    token_budget: int = DEFAULT_TOKEN_BUDGET) -> AnswerMatrix:
    """Ask every catalog question about every article; m x n single-turn queries.

    Each cell is an independent prompt with no carried-over context. Cells
    already in the cache cost nothing, so interrupted runs resume where they
    stopped.
    """
    if not len(d):
        raise ValidationError(f"dataset {d.name!r} is empty")
    if not catalog:
        raise ValidationError("catalog is empty")
    truncated = [truncate_for_context(a, token_budget).article for a in d]

    cells = []
    for i, article in enumerate(truncated):
        for j, spec in enumerate(catalog):
            cells.append(((i, j), article, spec))

    def worker(cell):
        (_, article, spec) = cell
        prompt = build_signal_prompt(article, spec)
        completion = complete(prompt, cfg, cache, backend, article)
        return parse_answer(completion, allow_unsure=True)

    try:
        results = _run_cells(cells, cfg, worker)
    except ExtractionAborted as exc:
        exc.completed = [(d.articles[i].id, catalog[j].id) for i, j in exc.completed]
        raise

    values = np.empty((len(d), len(catalog)), dtype="<U6")
    warnings = np.zeros((len(d), len(catalog)), dtype=bool)
    for (i, j), answer in results.items():
        values[i, j] = _ANSWER_STRINGS[answer.value]
        warnings[i, j] = answer.warned
    return AnswerMatrix(
        dataset=d.name,
        article_ids=d.ids,
        signal_ids=[s.id for s in catalog],
        values=values,
        warnings=warnings,
    )


def extract_zeroshot(d: Dataset, cfg: BackendConfig, cache: CompletionCache, backend,
                     token_budget: int = DEFAULT_TOKEN_BUDGET) -> ZeroShotResult:
    """One binary veracity question per article; Yes maps to prediction 1."""
    if not len(d):
        raise ValidationError(f"dataset {d.name!r} is empty")
    truncated = [truncate_for_context(a, token_budget).article for a in d]
    cells = [((i, 0), article, None) for i, article in enumerate(truncated)]

    def worker(cell):
        (_, article, _) = cell
        prompt = build_zeroshot_prompt(article)
        completion = complete(prompt, cfg, cache, backend, article)
        return parse_answer(completion, allow_unsure=False)

    try:
        results = _run_cells(cells, cfg, worker)
    except ExtractionAborted as exc:
        exc.completed = [(d.articles[i].id, ZERO_SHOT_ID) for i, _ in exc.completed]
        raise

    preds = np.zeros(len(d), dtype=np.int8)
    warnings = np.zeros(len(d), dtype=bool)
    for (i, _), answer in results.items():
        preds[i] = 1 if answer.value == YES else 0
        warnings[i] = answer.warned
    return ZeroShotResult(
        dataset=d.name, article_ids=d.ids, predictions=preds, warnings=warnings
    )


def export_dataset_pack(d: Dataset, catalog: list[SignalSpec] | None, cfg: BackendConfig,
                        cache: CompletionCache, path: str | Path,
                        token_budget: int = DEFAULT_TOKEN_BUDGET,
                        zeroshot: bool = False) -> int:
    """Export exactly this dataset's cache entries as a JSONL fixture pack.

    Prompts are re-rendered (same truncation budget), so only cells belonging
    to the dataset land in the pack. Returns the entry count.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    prompts: list[PromptText] = []
    for article in d:
        trimmed = truncate_for_context(article, token_budget).article
        if zeroshot:
            prompts.append(build_zeroshot_prompt(trimmed))
        else:
            for spec in catalog or []:
                prompts.append(build_signal_prompt(trimmed, spec))
    params = cfg.decoding_params()
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for prompt in prompts:
            key = CompletionCache.make_key(cfg.model, params, prompt.text)
            completion = cache.get(key)
            if completion is None:
                raise ValidationError(f"cache is missing an entry for dataset {d.name!r}")
            entry = {
                "key": key,
                "model": cfg.model,
                "params": params,
                "prompt": prompt.text,
                "completion": completion,
            }
            f.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")
            count += 1
    return count


# ---------------------------------------------------------------------------
# Persistence.
# ---------------------------------------------------------------------------

def save_matrix_csv(am: AnswerMatrix, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["article_id", *am.signal_ids])
        for i, aid in enumerate(am.article_ids):
            writer.writerow([aid, *am.values[i]])


def load_matrix_csv(path: str | Path, dataset: str | None = None) -> AnswerMatrix:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"answer matrix not found: {path}")
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty answer matrix") from None
        signal_ids = header[1:]
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} cells")
            ids.append(row[0])
            rows.append(row[1:])
    values = np.array(rows, dtype="<U6")
    return AnswerMatrix(
        dataset=dataset or path.stem,
        article_ids=ids,
        signal_ids=signal_ids,
        values=values,
        warnings=np.zeros(values.shape, dtype=bool),
    )


def save_zeroshot_csv(zs: ZeroShotResult, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["article_id", "prediction", "parse_warning"])
        for aid, pred, warn in zip(zs.article_ids, zs.predictions, zs.warnings):
            writer.writerow([aid, int(pred), int(warn)])


def load_zeroshot_csv(path: str | Path, dataset: str | None = None) -> ZeroShotResult:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"zero-shot predictions not found: {path}")
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        next(reader, None)
        ids, preds, warns = [], [], []
        for row in reader:
            ids.append(row[0])
            preds.append(int(row[1]))
            warns.append(bool(int(row[2])))
    return ZeroShotResult(
        dataset=dataset or path.stem,
        article_ids=ids,
        predictions=np.array(preds, dtype=np.int8),
        warnings=np.array(warns, dtype=bool),
    )
