"""Credibility-signal catalog, prompt rendering, and completion parsing.

Prompts follow the Alpaca instruction layout with three sections
(Instruction, Input, Response). Signal prompts ask one ternary
(Yes/Unsure/No) question each; the direct veracity prompt is binary.
A Yes answer always votes for reduced credibility.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .corpus import Article
from .errors import ValidationError

YES = "Yes"
NO = "No"
UNSURE = "Unsure"

ZERO_SHOT_ID = "zero_shot"
ZERO_SHOT_QUESTION = "Does this article contain misinformation?"

DEFAULT_CATALOG_SIZE = 19

_SIGNAL_INSTRUCTION = (
    "You are a helpful and unbiased news verification assistant. You will be "
    "provided with the title and the full body of text of a news article. Then, "
    "you will answer further questions related to the given article. Ensure that "
    "your answers are grounded in reality, truthful and reliable. You are "
    "expected to answer with 'Yes' or 'No', but you are also allowed to answer "
    "with 'Unsure' if you do not have enough information or context to provide "
    "a reliable answer."
)

# Binary mode drops only the Unsure clause of the instruction.
_ZEROSHOT_INSTRUCTION = (
    "You are a helpful and unbiased news verification assistant. You will be "
    "provided with the title and the full body of text of a news article. Then, "
    "you will answer further questions related to the given article. Ensure that "
    "your answers are grounded in reality, truthful and reliable. You are "
    "expected to answer with 'Yes' or 'No'."
)

_TEMPLATE = """### Instruction:
{instruction}

### Input:
{title}
{text}

{question} ({options})

### Response:"""

# Structural skeleton every rendered prompt must match.
PROMPT_SKELETON = re.compile(
    r"\A### Instruction:\n.+?\n\n### Input:\n.*\n\n.+\((Yes/Unsure/No|Yes/No)\)\n\n### Response:\Z",
    re.DOTALL,
)

_TOKEN_RE = re.compile(r"[a-z]+")


@dataclass(frozen=True)
class SignalSpec:
    """One credibility signal: its definition and the question fed to the LLM."""

    id: str
    name: str
    definition: str
    question: str
    order: int


@dataclass(frozen=True)
class PromptText:
    text: str
    signal_id: str  # a catalog id, or ZERO_SHOT_ID for the direct veracity prompt


@dataclass(frozen=True)
class Answer:
    value: str  # Yes | No | Unsure
    raw: str
    warned: bool = False  # completion did not contain a clean standalone answer


def _validate_catalog(specs: list[SignalSpec], source: str) -> list[SignalSpec]:
    if not specs:
        raise ValidationError(f"{source}: empty catalog")
    seen: set[str] = set()
    for s in specs:
        if not s.id:
            raise ValidationError(f"{source}: signal with empty id")
        if s.id in seen:
            raise ValidationError(f"{source}: duplicate signal id {s.id!r}")
        seen.add(s.id)
        if not s.question or not s.question.endswith("?"):
            raise ValidationError(f"{source}: signal {s.id!r} question must end with '?'")
    return specs


def _specs_from_entries(entries, source: str) -> list[SignalSpec]:
    specs = []
    for order, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ValidationError(f"{source}: signal entry {order} is not a mapping")
        missing = {"id", "name", "definition", "question"} - set(entry)
        if missing:
            raise ValidationError(
                f"{source}: signal entry {order} missing field(s) {sorted(missing)}"
            )
        specs.append(
            SignalSpec(
                id=str(entry["id"]),
                name=str(entry["name"]),
                definition=str(entry["definition"]),
                question=str(entry["question"]),
                order=order,
            )
        )
    return _validate_catalog(specs, source)


def default_catalog() -> list[SignalSpec]:
    """The 19 built-in credibility signals, in catalog order."""
    raw = resources.files("credweak.data").joinpath("catalog.yaml").read_text(encoding="utf-8")
    doc = yaml.safe_load(raw)
    specs = _specs_from_entries(doc["signals"], "default catalog")
    if len(specs) != DEFAULT_CATALOG_SIZE:
        raise ValidationError(
            f"default catalog must hold {DEFAULT_CATALOG_SIZE} signals, found {len(specs)}"
        )
    return specs


def load_catalog(path: str | Path | None = None) -> list[SignalSpec]:
    """Load a catalog file; fall back to the default catalog when no path is given."""
    if path is None:
        return default_catalog()
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"catalog file not found: {path}")
    doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or "signals" not in doc:
        raise ValidationError(f"{path}: catalog must be a mapping with a 'signals' list")
    return _specs_from_entries(doc["signals"] or [], str(path))


def save_catalog(specs: list[SignalSpec], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "signals": [
            {"id": s.id, "name": s.name, "definition": s.definition, "question": s.question}
            for s in sorted(specs, key=lambda s: s.order)
        ]
    }
    path.write_text(yaml.safe_dump(doc, sort_keys=False, allow_unicode=True), encoding="utf-8")


def build_signal_prompt(a: Article, s: SignalSpec) -> PromptText:
    """Render the single-question ternary prompt for one signal."""
    text = _TEMPLATE.format(
        instruction=_SIGNAL_INSTRUCTION,
        title=a.title,
        text=a.body,
        question=s.question,
        options="Yes/Unsure/No",
    )
    return PromptText(text=text, signal_id=s.id)


def build_zeroshot_prompt(a: Article) -> PromptText:
    """Render the direct binary veracity prompt (no Unsure option)."""
    text = _TEMPLATE.format(
        instruction=_ZEROSHOT_INSTRUCTION,
        title=a.title,
        text=a.body,
        question=ZERO_SHOT_QUESTION,
        options="Yes/No",
    )
    return PromptText(text=text, signal_id=ZERO_SHOT_ID)


def parse_answer(completion: str, allow_unsure: bool = True) -> Answer:
    """Map a raw completion to Yes/No/Unsure.

    Case-insensitive scan for the first standalone yes/no/unsure token.
    Unparseable text falls back to Unsure (signal mode) or No (binary mode)
    with the warning flag set; in binary mode an explicit "unsure" also takes
    the fallback.
    """
    for token in _TOKEN_RE.findall(completion.lower()):
        if token == "yes":
            return Answer(value=YES, raw=completion)
        if token == "no":
            return Answer(value=NO, raw=completion)
        if token == "unsure":
            if allow_unsure:
                return Answer(value=UNSURE, raw=completion)
            return Answer(value=NO, raw=completion, warned=True)
    fallback = UNSURE if allow_unsure else NO
    return Answer(value=fallback, raw=completion, warned=True)
