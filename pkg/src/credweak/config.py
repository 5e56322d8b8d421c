"""Run configuration: one YAML file capturing every knob, overridable from the
command line by dotted field name, plus the reproducibility manifest."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ValidationError
from .extraction import BackendConfig, MockProfile
from .label_model import LabelModelConfig

TOOL_VERSION = "0.1.0"

_BACKEND_KINDS = ("mock", "http", "replay")

_LABEL_MODEL_DEFAULTS = {
    "epochs": 500,
    "step_size": 0.1,
    "mode": "auto",
    "chains": 100,
    "sweeps": 5,
    "prior": 0.5,
    "correlation_threshold": 1.0,
    "use_correlations": False,
}


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    path: str
    format: str = "jsonl"
    domain: str = "other"
    label_map: dict | None = None
    columns: dict | None = None


@dataclass
class RunConfig:
    seed: int
    datasets: list[DatasetSpec]
    out_dir: str = "out"
    cache_dir: str = "cache"
    folds: int = 10
    token_budget: int = 4096
    catalog: str | None = None
    backend_kind: str = "mock"
    backend: BackendConfig = field(default_factory=BackendConfig)
    mock_seed: int = 0
    mock_accuracy: float = 0.75
    mock_abstain_rate: float = 0.05
    mock_profiles: dict[str, MockProfile] = field(default_factory=dict)
    label_model: dict = field(default_factory=lambda: dict(_LABEL_MODEL_DEFAULTS))
    packs: list[str] = field(default_factory=list)
    raw: dict = field(default_factory=dict, repr=False)

    def dataset(self, name: str) -> DatasetSpec:
        for spec in self.datasets:
            if spec.name == name:
                return spec
        raise ValidationError(f"no dataset named {name!r} in the config")

    def label_model_config(self, seed: int | None = None) -> LabelModelConfig:
        lm = self.label_model
        return LabelModelConfig(
            seed=self.seed if seed is None else seed,
            epochs=int(lm["epochs"]),
            step_size=float(lm["step_size"]),
            mode=str(lm["mode"]),
            chains=int(lm["chains"]),
            sweeps=int(lm["sweeps"]),
            prior=float(lm["prior"]),
        )

    @property
    def correlation_threshold(self) -> float:
        return float(self.label_model["correlation_threshold"])

    @property
    def use_correlations(self) -> bool:
        return bool(self.label_model["use_correlations"])

    def snapshot(self) -> dict:
        """The fully resolved config as plain data, for the manifest."""
        return self.raw


def _set_dotted(doc: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = doc
    for part in parts[:-1]:
        nxt = node.get(part)
        if not isinstance(nxt, dict):
            nxt = {}
            node[part] = nxt
        node = nxt
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    """Parse a KEY=VALUE override; the value goes through YAML typing rules."""
    if "=" not in text:
        raise ValidationError(f"override must look like key=value, got {text!r}")
    key, _, raw = text.partition("=")
    key = key.strip()
    if not key:
        raise ValidationError(f"override has an empty key: {text!r}")
    return key, yaml.safe_load(raw)


def load_run_config(path: str | Path, overrides: dict[str, object] | None = None) -> RunConfig:
    """Load and validate the run config. Every referenced path must resolve."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: config must be a YAML mapping")
    for dotted, value in (overrides or {}).items():
        _set_dotted(doc, dotted, value)

    if "seed" not in doc or doc["seed"] is None:
        raise ValidationError(f"{path}: a run seed is mandatory")
    seed = int(doc["seed"])

    base_dir = path.parent

    def resolve(p: str) -> str:
        candidate = Path(p)
        return str(candidate if candidate.is_absolute() else base_dir / candidate)

    raw_datasets = doc.get("datasets") or []
    if not raw_datasets:
        raise ValidationError(f"{path}: at least one dataset entry is required")
    datasets = []
    for entry in raw_datasets:
        if "name" not in entry or "path" not in entry:
            raise ValidationError(f"{path}: dataset entries need name and path")
        ds_path = resolve(str(entry["path"]))
        if not Path(ds_path).exists():
            raise ValidationError(f"{path}: dataset file not found: {ds_path}")
        datasets.append(
            DatasetSpec(
                name=str(entry["name"]),
                path=ds_path,
                format=str(entry.get("format", "jsonl")),
                domain=str(entry.get("domain", "other")),
                label_map=entry.get("label_map"),
                columns=entry.get("columns"),
            )
        )
    if len({d.name for d in datasets}) != len(datasets):
        raise ValidationError(f"{path}: duplicate dataset names")

    catalog = doc.get("catalog")
    if catalog is not None:
        catalog = resolve(str(catalog))
        if not Path(catalog).exists():
            raise ValidationError(f"{path}: catalog file not found: {catalog}")

    backend_doc = dict(doc.get("backend") or {})
    kind = str(backend_doc.pop("kind", "mock"))
    if kind not in _BACKEND_KINDS:
        raise ValidationError(f"{path}: backend.kind must be one of {_BACKEND_KINDS}")
    mock_seed = int(backend_doc.pop("mock_seed", seed))
    mock_accuracy = float(backend_doc.pop("mock_accuracy", 0.75))
    mock_abstain = float(backend_doc.pop("mock_abstain_rate", 0.05))
    profiles_doc = backend_doc.pop("mock_profiles", {}) or {}
    mock_profiles = {
        str(sid): MockProfile(
            accuracy=float(p.get("accuracy", mock_accuracy)),
            abstain_rate=float(p.get("abstain_rate", mock_abstain)),
        )
        for sid, p in profiles_doc.items()
    }
    try:
        backend = BackendConfig(**backend_doc)
    except TypeError as exc:
        raise ValidationError(f"{path}: bad backend section: {exc}") from exc

    label_model = dict(_LABEL_MODEL_DEFAULTS)
    label_model.update(doc.get("label_model") or {})

    packs = [resolve(str(p)) for p in (doc.get("packs") or [])]
    for pack in packs:
        if not Path(pack).exists():
            raise ValidationError(f"{path}: fixture pack not found: {pack}")

    cfg = RunConfig(
        seed=seed,
        datasets=datasets,
        out_dir=resolve(str(doc.get("out_dir", "out"))),
        cache_dir=resolve(str(doc.get("cache_dir", "cache"))),
        folds=int(doc.get("folds", 10)),
        token_budget=int(doc.get("token_budget", 4096)),
        catalog=catalog,
        backend_kind=kind,
        backend=backend,
        mock_seed=mock_seed,
        mock_accuracy=mock_accuracy,
        mock_abstain_rate=mock_abstain,
        mock_profiles=mock_profiles,
        label_model=label_model,
        packs=packs,
        raw=doc,
    )
    if cfg.folds < 2:
        raise ValidationError(f"{path}: folds must be >= 2")
    cfg.label_model_config()  # validate the label-model section eagerly
    return cfg


# ---------------------------------------------------------------------------
# Run manifest.
# ---------------------------------------------------------------------------

def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: str | Path, config_snapshot: dict, files: list[Path]) -> Path:
    """Record digests of emitted artifacts. The manifest is the only output
    that carries a timestamp, keeping the scientific files byte-reproducible."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": TOOL_VERSION,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": config_snapshot,
        "digests": {p.name: file_digest(p) for p in sorted(files)},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def verify_manifest(out_dir: str | Path) -> bool:
    """Re-hash the files named in the manifest and compare digests."""
    out_dir = Path(out_dir)
    path = out_dir / "manifest.json"
    if not path.exists():
        raise ValidationError(f"manifest not found: {path}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    for name, digest in manifest["digests"].items():
        target = out_dir / name
        if not target.exists() or file_digest(target) != digest:
            return False
    return True
