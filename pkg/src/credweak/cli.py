"""Command-line pipeline orchestrator.

Subcommands: extract, evaluate, crossdomain, analyze, ablate, report.
All knobs live in one YAML config; any field can be overridden with
``--set dotted.name=value``. Exit codes: 0 success, 1 user/config error,
2 backend/transport error. Scientific outputs are byte-reproducible; only
the manifest carries timestamps.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import analysis as ana
from . import config as cfgmod
from . import corpus, evaluation, extraction, label_model
from .errors import CredweakError, ExtractionAborted, TransportError, ValidationError
from .signals import load_catalog


def _load_config(ctx) -> cfgmod.RunConfig:
    params = ctx.obj
    overrides = dict(params["overrides"])
    return cfgmod.load_run_config(params["config_path"], overrides)


def _make_backend(cfg: cfgmod.RunConfig):
    if cfg.backend_kind == "mock":
        return extraction.MockBackend(
            seed=cfg.mock_seed,
            profiles=cfg.mock_profiles,
            default_profile=extraction.MockProfile(
                accuracy=cfg.mock_accuracy, abstain_rate=cfg.mock_abstain_rate
            ),
        )
    if cfg.backend_kind == "replay":
        return extraction.ReplayBackend()
    return extraction.HTTPBackend(cfg.backend)


def _open_cache(cfg: cfgmod.RunConfig) -> extraction.CompletionCache:
    cache = extraction.CompletionCache(cfg.cache_dir)
    for pack in cfg.packs:
        cache.import_pack(pack)
    return cache


def _selected_datasets(cfg: cfgmod.RunConfig, name: str | None) -> list[cfgmod.DatasetSpec]:
    if name is None:
        return list(cfg.datasets)
    return [cfg.dataset(name)]


def _load_corpus(spec: cfgmod.DatasetSpec) -> corpus.Dataset:
    return corpus.load_dataset(
        spec.path,
        format=spec.format,
        name=spec.name,
        domain_tag=spec.domain,
        label_map=spec.label_map,
        columns=spec.columns,
    )


def _out(cfg: cfgmod.RunConfig, name: str) -> Path:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / name

def _matrix_path(cfg, name): return _out(cfg, f"{name}.matrix.csv")
def _zeroshot_path(cfg, name): return _out(cfg, f"{name}.zeroshot.csv")


def _votes_for(cfg: cfgmod.RunConfig, spec: cfgmod.DatasetSpec) -> label_model.VoteMatrix:
    path = _matrix_path(cfg, spec.name)
    if not path.exists():
        raise ValidationError(f"answer matrix missing for {spec.name!r}: run extract first")
    am = extraction.load_matrix_csv(path, dataset=spec.name)
    return label_model.answers_to_votes(am)


def _aligned_labels(d: corpus.Dataset, ids: list[str]) -> np.ndarray:
    by_id = {a.id: a.label for a in d}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ValidationError(f"matrix rows not found in dataset: {missing[:3]}...")
    labels = [by_id[i] for i in ids]
    if any(v is None for v in labels):
        raise ValidationError(f"analysis requires gold labels; dataset {d.name!r} is unlabeled")
    return np.array(labels, dtype=np.int8)


def _correlations(cfg: cfgmod.RunConfig, vm: label_model.VoteMatrix) -> label_model.CorrelationSet:
    if cfg.use_correlations:
        return label_model.select_correlations(vm, cfg.correlation_threshold)
    return label_model.CorrelationSet()


def _write_json(path: Path, payload) -> Path:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def _guard(fn):
    try:
        fn()
    except ExtractionAborted as exc:
        click.echo(f"error: {exc} ({len(exc.completed)} cells completed)", err=True)
        sys.exit(2 if isinstance(exc.cause, TransportError) else 1)
    except TransportError as exc:
        click.echo(f"backend error: {exc}", err=True)
        for line in exc.attempts:
            click.echo(f"  attempt: {line}", err=True)
        sys.exit(2)
    except (ValidationError, CredweakError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


@click.group()
@click.option("--config", "config_path", default="credweak.yaml", show_default=True,
              help="Run configuration file.")
@click.option("--seed", type=int, default=None, help="Override the run seed.")
@click.option("--folds", type=int, default=None, help="Override the fold count.")
@click.option("--cache-dir", default=None, help="Override the completion cache directory.")
@click.option("--out-dir", default=None, help="Override the output directory.")
@click.option("--backend.endpoint", "backend_endpoint", default=None,
              help="Override the backend endpoint URL.")
@click.option("--backend.model", "backend_model", default=None,
              help="Override the backend model identifier.")
@click.option("--set", "assignments", multiple=True, metavar="KEY=VALUE",
              help="Override any config field by dotted name.")
@click.pass_context
def main(ctx, config_path, seed, folds, cache_dir, out_dir,
         backend_endpoint, backend_model, assignments):
    """Credibility-signal weak supervision pipeline."""
    overrides: dict[str, object] = {}
    for text in assignments:
        try:
            key, value = cfgmod.parse_override(text)
        except ValidationError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        overrides[key] = value
    if seed is not None:
        overrides["seed"] = seed
    if folds is not None:
        overrides["folds"] = folds
    if cache_dir is not None:
        overrides["cache_dir"] = cache_dir
    if out_dir is not None:
        overrides["out_dir"] = out_dir
    if backend_endpoint is not None:
        overrides["backend.endpoint"] = backend_endpoint
    if backend_model is not None:
        overrides["backend.model"] = backend_model
    ctx.obj = {"config_path": config_path, "overrides": overrides}


@main.command()
@click.option("--dataset", default=None, help="Extract a single dataset by name.")
@click.option("--zeroshot", is_flag=True, help="Extract direct veracity predictions instead of signals.")
@click.pass_context
def extract(ctx, dataset, zeroshot):
    """Run prompts against the backend and write answer matrices."""

    def body():
        cfg = _load_config(ctx)
        cache = _open_cache(cfg)
        backend = _make_backend(cfg)
        catalog = load_catalog(cfg.catalog)
        emitted: list[Path] = []
        for spec in _selected_datasets(cfg, dataset):
            d = _load_corpus(spec)
            if zeroshot:
                zs = extraction.extract_zeroshot(
                    d, cfg.backend, cache, backend, cfg.token_budget
                )
                path = _zeroshot_path(cfg, spec.name)
                extraction.save_zeroshot_csv(zs, path)
                emitted.append(path)
                pack = _out(cfg, f"{spec.name}.zeroshot.pack.jsonl")
                extraction.export_dataset_pack(
                    d, None, cfg.backend, cache, pack, cfg.token_budget, zeroshot=True
                )
                emitted.append(pack)
                click.echo(f"{spec.name}: {len(d)} zero-shot predictions")
            else:
                am = extraction.extract_signals(
                    d, catalog, cfg.backend, cache, backend, cfg.token_budget
                )
                path = _matrix_path(cfg, spec.name)
                extraction.save_matrix_csv(am, path)
                emitted.append(path)
                pack = _out(cfg, f"{spec.name}.pack.jsonl")
                extraction.export_dataset_pack(
                    d, catalog, cfg.backend, cache, pack, cfg.token_budget
                )
                emitted.append(pack)
                warn_count = int(am.warnings.sum())
                click.echo(
                    f"{spec.name}: {am.m}x{am.n} answers ({warn_count} parse warnings)"
                )
        cfgmod.write_manifest(cfg.out_dir, cfg.snapshot(), emitted)

    _guard(body)


@main.command()
@click.option("--dataset", default=None, help="Evaluate a single dataset by name.")
@click.option("--method", type=click.Choice(["pastel", "majority", "zeroshot"]),
              default="pastel", show_default=True)
@click.pass_context
def evaluate(ctx, dataset, method):
    """Cross-validated evaluation of signal aggregation or zero-shot predictions."""

    def body():
        cfg = _load_config(ctx)
        emitted: list[Path] = []
        for spec in _selected_datasets(cfg, dataset):
            d = _load_corpus(spec)
            folds = corpus.make_folds(d, cfg.folds, cfg.seed)
            if method == "zeroshot":
                zs_path = _zeroshot_path(cfg, spec.name)
                if not zs_path.exists():
                    raise ValidationError(
                        f"zero-shot predictions missing for {spec.name!r}: run extract first"
                    )
                zs = extraction.load_zeroshot_csv(zs_path, dataset=spec.name)
                if zs.article_ids != d.ids:
                    raise ValidationError(
                        f"zero-shot rows do not align with dataset {spec.name!r}"
                    )
                report = evaluation.evaluate_zeroshot(
                    zs.predictions, d.labels(), folds, dataset=spec.name
                )
            else:
                vm = _votes_for(cfg, spec)
                labels = _aligned_labels(d, vm.article_ids)
                corr = _correlations(cfg, vm)
                report = evaluation.run_cv(
                    vm, labels, folds, method=method,
                    cfg=cfg.label_model_config(), corr=corr,
                )
                if method == "pastel":
                    params = label_model.fit(vm, corr, cfg.label_model_config())
                    params_path = _out(cfg, f"{spec.name}.pastel.params.json")
                    params_path.write_text(params.to_json() + "\n", encoding="utf-8")
                    emitted.append(params_path)
            report_path = _out(cfg, f"{spec.name}.{method}.report.json")
            report_path.write_text(report.to_json(), encoding="utf-8")
            emitted.append(report_path)
            click.echo(report.render_row())
        cfgmod.write_manifest(cfg.out_dir, cfg.snapshot(), emitted)

    _guard(body)


@main.command()
@click.option("--train", "train_name", default=None, help="Training dataset name.")
@click.option("--test", "test_name", default=None, help="Test dataset name.")
@click.option("--all", "do_all", is_flag=True, help="Evaluate every ordered dataset pair.")
@click.pass_context
def crossdomain(ctx, train_name, test_name, do_all):
    """Fit on one dataset's signals, evaluate on another's."""

    def body():
        cfg = _load_config(ctx)
        if do_all:
            names = [spec.name for spec in cfg.datasets]
            pairs = [(a, b) for a in names for b in names if a != b]
        else:
            if not train_name or not test_name:
                raise ValidationError("provide --train and --test, or --all")
            pairs = [(train_name, test_name)]
        emitted: list[Path] = []
        for tr, te in pairs:
            train_vm = _votes_for(cfg, cfg.dataset(tr))
            test_spec = cfg.dataset(te)
            test_vm = _votes_for(cfg, test_spec)
            test_labels = _aligned_labels(_load_corpus(test_spec), test_vm.article_ids)
            corr = _correlations(cfg, train_vm)
            report = evaluation.run_cross_domain(
                train_vm, test_vm, test_labels, cfg.label_model_config(), corr
            )
            report_path = _out(cfg, f"{tr}__{te}.crossdomain.report.json")
            report_path.write_text(report.to_json(), encoding="utf-8")
            emitted.append(report_path)
            click.echo(f"train={tr} test={te}  F1-macro {report.f1_mean:.4f}")
        cfgmod.write_manifest(cfg.out_dir, cfg.snapshot(), emitted)

    _guard(body)


@main.command()
@click.option("--dataset", default=None, help="Analyze a single dataset by name.")
@click.pass_context
def analyze(ctx, dataset):
    """Association, answer-distribution, and trigger-frequency tables."""

    def body():
        cfg = _load_config(ctx)
        emitted: list[Path] = []
        per_dataset: dict[str, list[ana.SignalAssociation]] = {}
        domains: dict[str, str] = {}
        for spec in _selected_datasets(cfg, dataset):
            d = _load_corpus(spec)
            path = _matrix_path(cfg, spec.name)
            if not path.exists():
                raise ValidationError(
                    f"answer matrix missing for {spec.name!r}: run extract first"
                )
            am = extraction.load_matrix_csv(path, dataset=spec.name)
            labels = _aligned_labels(d, am.article_ids)

            assoc = ana.associations(am, labels)
            per_dataset[spec.name] = assoc
            domains[spec.name] = spec.domain
            emitted.append(_write_assoc_csv(_out(cfg, f"{spec.name}.associations.csv"), assoc))
            emitted.append(_write_json(
                _out(cfg, f"{spec.name}.associations.json"),
                [
                    {"signal_id": r.signal_id, "chi2": r.chi2, "p": r.p,
                     "normalized": r.normalized, "reject": r.reject}
                    for r in assoc
                ],
            ))

            dist = ana.answer_distribution(am, labels)
            emitted.append(_write_json(
                _out(cfg, f"{spec.name}.answer_distribution.json"),
                {sid: {str(cls): dist[sid][cls] for cls in dist[sid]} for sid in dist},
            ))

            vm = label_model.answers_to_votes(am)
            corr = _correlations(cfg, vm)
            folds = corpus.make_folds(d, cfg.folds, cfg.seed)
            report = evaluation.run_cv(
                vm, labels, folds, method="pastel", cfg=cfg.label_model_config(), corr=corr
            )
            wl = label_model.WeakLabels(
                article_ids=list(vm.article_ids),
                probabilities=report.oof_probabilities,
                predictions=report.oof_predictions,
                all_abstain=np.all(vm.votes == label_model.VOTE_ABSTAIN, axis=1),
            )
            pred_path = _out(cfg, f"{spec.name}.predictions.csv")
            label_model.save_weak_labels_csv(wl, pred_path)
            emitted.append(pred_path)

            freqs = ana.tp_fn_frequencies(am, report.oof_predictions, labels)
            emitted.append(_write_freq_csv(_out(cfg, f"{spec.name}.frequencies.csv"), freqs))
            click.echo(
                f"{spec.name}: {sum(r.reject for r in assoc)}/{len(assoc)} signals associated "
                f"(p < {ana.SIGNIFICANCE_LEVEL}); TP total "
                f"{_fmt(freqs.tp_total)}, FN total {_fmt(freqs.fn_total)}"
            )

        if len(per_dataset) > 1:
            aggregates = {}
            for group in ana.GROUPS:
                try:
                    rows = ana.aggregate_associations(per_dataset, domains, group)
                except ValidationError:
                    continue
                aggregates[group] = [
                    {"signal_id": r.signal_id, "normalized": r.normalized, "reject": r.reject}
                    for r in rows
                ]
            emitted.append(_write_json(_out(cfg, "associations_aggregate.json"), aggregates))
        cfgmod.write_manifest(cfg.out_dir, cfg.snapshot(), emitted)

    _guard(body)


@main.command()
@click.option("--dataset", default=None, help="Ablate a single dataset by name.")
@click.pass_context
def ablate(ctx, dataset):
    """Leave-one-signal-out retraining; reuses the baseline when config allows."""

    def body():
        cfg = _load_config(ctx)
        emitted: list[Path] = []
        for spec in _selected_datasets(cfg, dataset):
            d = _load_corpus(spec)
            vm = _votes_for(cfg, spec)
            labels = _aligned_labels(d, vm.article_ids)
            corr = _correlations(cfg, vm)
            folds = corpus.make_folds(d, cfg.folds, cfg.seed)

            digest = _ablation_digest(cfg, spec)
            baseline_path = _out(cfg, f"{spec.name}.ablation_baseline.json")
            baseline_f1 = None
            if baseline_path.exists():
                stored = json.loads(baseline_path.read_text(encoding="utf-8"))
                if stored.get("digest") == digest:
                    baseline_f1 = stored["baseline_f1"]
            if baseline_f1 is None:
                baseline_f1 = evaluation.run_cv(
                    vm, labels, folds, method="pastel", cfg=cfg.label_model_config(), corr=corr
                ).f1_mean
                _write_json(baseline_path, {"digest": digest, "baseline_f1": baseline_f1})
            emitted.append(baseline_path)

            entries = ana.ablation(
                vm, labels, folds, cfg.label_model_config(), corr, baseline_f1=baseline_f1
            )
            csv_path = _out(cfg, f"{spec.name}.ablation.csv")
            with open(csv_path, "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["signal_id", "baseline_f1", "ablated_f1", "percent_change"])
                for e in entries:
                    writer.writerow([
                        e.signal_id, repr(e.baseline_f1), repr(e.ablated_f1),
                        repr(e.percent_change),
                    ])
            emitted.append(csv_path)
            emitted.append(_write_json(
                _out(cfg, f"{spec.name}.ablation.json"),
                {
                    "baseline_f1": baseline_f1,
                    "rows": [
                        {"signal_id": e.signal_id, "ablated_f1": e.ablated_f1,
                         "percent_change": e.percent_change}
                        for e in entries
                    ],
                },
            ))
            worst = min(entries, key=lambda e: e.percent_change)
            click.echo(
                f"{spec.name}: baseline F1 {baseline_f1:.4f}; "
                f"largest drop {worst.signal_id} ({worst.percent_change:+.2f}%)"
            )
        cfgmod.write_manifest(cfg.out_dir, cfg.snapshot(), emitted)

    _guard(body)


@main.command()
@click.pass_context
def report(ctx):
    """Print an aligned summary of every evaluation report in the output directory."""

    def body():
        cfg = _load_config(ctx)
        out_dir = Path(cfg.out_dir)
        paths = sorted(out_dir.glob("*.report.json"))
        if not paths:
            raise ValidationError(f"no reports found under {out_dir}")
        click.echo(f"{'dataset':<24} {'method':<10} {'F1':>8} {'±std':>8} {'sem':>8} {'FNR':>6} {'FPR':>6}")
        for path in paths:
            rep = evaluation.EvaluationReport.from_json(path.read_text(encoding="utf-8"))
            click.echo(
                f"{rep.dataset:<24} {rep.method:<10} {rep.f1_mean:>8.4f} "
                f"{rep.f1_std:>8.4f} {rep.f1_sem:>8.4f} "
                f"{_fmt(rep.fnr):>6} {_fmt(rep.fpr):>6}"
            )

    _guard(body)


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.2f}"


def _ablation_digest(cfg: cfgmod.RunConfig, spec: cfgmod.DatasetSpec) -> str:
    matrix_digest = cfgmod.file_digest(_matrix_path(cfg, spec.name))
    relevant = {
        "matrix": matrix_digest,
        "seed": cfg.seed,
        "folds": cfg.folds,
        "label_model": cfg.label_model,
    }
    return hashlib.sha256(
        json.dumps(relevant, sort_keys=True).encode("utf-8")
    ).hexdigest()


def _write_assoc_csv(path: Path, assoc: list[ana.SignalAssociation]) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["signal_id", "chi2", "p", "normalized", "reject"])
        for row in assoc:
            writer.writerow([row.signal_id, repr(row.chi2), repr(row.p),
                             repr(row.normalized), int(row.reject)])
    return path


def _write_freq_csv(path: Path, freqs: ana.TriggerFrequencies) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["signal_id", "tp_frequency", "fn_frequency", "percent_decrease"])
        for i, sid in enumerate(freqs.signal_ids):
            writer.writerow([
                sid,
                _csv_opt(freqs.tp_freq[i]),
                _csv_opt(freqs.fn_freq[i]),
                _csv_opt(freqs.percent_decrease(i)),
            ])
        writer.writerow(["TOTAL", _csv_opt(freqs.tp_total), _csv_opt(freqs.fn_total), ""])
    return path


def _csv_opt(value: float | None) -> str:
    return "" if value is None else repr(value)


if __name__ == "__main__":
    main()
