import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from credweak.cli import main
from credweak.config import load_run_config, verify_manifest, write_manifest
from credweak.corpus import save_dataset, Dataset
from credweak.errors import ValidationError

from conftest import make_articles


def write_project(tmp_path, n_articles=12, datasets=("alpha", "beta"), **config_extra):
    """A tiny runnable project: labeled datasets + a mock-backend config."""
    labels = [1, 0] * (n_articles // 2)
    paths = {}
    for i, name in enumerate(datasets):
        d = Dataset(name=name, articles=make_articles(labels, prefix=f"{name}-"),
                    domain_tag="politics" if i % 2 == 0 else "entertainment")
        path = tmp_path / f"{name}.jsonl"
        save_dataset(d, path)
        paths[name] = path
    config = {
        "seed": 7,
        "folds": 3,
        "out_dir": "out",
        "cache_dir": "cache",
        "datasets": [
            {"name": name, "path": str(paths[name]),
             "domain": "politics" if i % 2 == 0 else "entertainment"}
            for i, name in enumerate(datasets)
        ],
        "backend": {"kind": "mock", "model": "mock", "mock_seed": 5,
                    "mock_accuracy": 0.9, "mock_abstain_rate": 0.05},
        "label_model": {"epochs": 120},
    }
    config.update(config_extra)
    cfg_path = tmp_path / "credweak.yaml"
    cfg_path.write_text(yaml.safe_dump(config, sort_keys=False))
    return cfg_path


def run_cli(cfg_path, *args):
    runner = CliRunner()
    return runner.invoke(main, ["--config", str(cfg_path), *args], catch_exceptions=False)


class TestRunConfig:
    def test_seed_mandatory(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("datasets: [{name: a, path: missing.jsonl}]\n")
        with pytest.raises(ValidationError, match="seed"):
            load_run_config(path)

    def test_dataset_paths_resolved_and_checked(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("seed: 1\ndatasets: [{name: a, path: nowhere.jsonl}]\n")
        with pytest.raises(ValidationError, match="not found"):
            load_run_config(path)

    def test_overrides_by_dotted_name(self, tmp_path):
        cfg_path = write_project(tmp_path)
        cfg = load_run_config(cfg_path, {"label_model.epochs": 7, "backend.model": "x"})
        assert cfg.label_model["epochs"] == 7
        assert cfg.backend.model == "x"

    def test_label_model_section_validated(self, tmp_path):
        cfg_path = write_project(tmp_path, label_model={"prior": 1.5})
        with pytest.raises(ValidationError, match="prior"):
            load_run_config(cfg_path)

    def test_manifest_round_trip(self, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        f = out / "artifact.txt"
        f.write_text("payload")
        write_manifest(out, {"seed": 1}, [f])
        assert verify_manifest(out)
        f.write_text("tampered")
        assert not verify_manifest(out)


class TestExtractCommand:
    def test_writes_matrix_and_pack(self, tmp_path):
        cfg_path = write_project(tmp_path, datasets=("alpha",))
        result = run_cli(cfg_path, "extract")
        assert result.exit_code == 0, result.output
        matrix = tmp_path / "out" / "alpha.matrix.csv"
        assert matrix.exists()
        lines = matrix.read_text().splitlines()
        assert len(lines) == 13  # header + 12 articles
        assert len(lines[0].split(",")) == 20  # id column + 19 signals
        assert (tmp_path / "out" / "alpha.pack.jsonl").exists()
        assert (tmp_path / "out" / "manifest.json").exists()

    def test_rerun_is_byte_identical_with_zero_new_completions(self, tmp_path):
        cfg_path = write_project(tmp_path, datasets=("alpha",))
        run_cli(cfg_path, "extract")
        matrix = tmp_path / "out" / "alpha.matrix.csv"
        first = matrix.read_bytes()
        cache_files = set(p.name for p in (tmp_path / "cache").glob("*.json"))
        result = run_cli(cfg_path, "extract")
        assert result.exit_code == 0
        assert matrix.read_bytes() == first
        assert set(p.name for p in (tmp_path / "cache").glob("*.json")) == cache_files

    def test_zeroshot_mode(self, tmp_path):
        cfg_path = write_project(tmp_path, datasets=("alpha",))
        result = run_cli(cfg_path, "extract", "--zeroshot")
        assert result.exit_code == 0
        zs = tmp_path / "out" / "alpha.zeroshot.csv"
        assert zs.exists()
        assert len(zs.read_text().splitlines()) == 13

    def test_invalid_catalog_is_user_error(self, tmp_path):
        bad_catalog = tmp_path / "cat.yaml"
        bad_catalog.write_text(
            "signals:\n- {id: dup, name: A, definition: d, question: 'q?'}\n"
            "- {id: dup, name: B, definition: d, question: 'q?'}\n"
        )
        cfg_path = write_project(tmp_path, datasets=("alpha",), catalog=str(bad_catalog))
        result = run_cli(cfg_path, "extract")
        assert result.exit_code == 1
        assert "dup" in result.output

    def test_replay_without_pack_is_transport_error(self, tmp_path):
        cfg_path = write_project(tmp_path, datasets=("alpha",),
                                 backend={"kind": "replay", "retries": 0})
        result = run_cli(cfg_path, "extract")
        assert result.exit_code == 2


class TestEvaluateCommand:
    def test_pastel_and_majority(self, tmp_path):
        cfg_path = write_project(tmp_path, datasets=("alpha",))
        run_cli(cfg_path, "extract")
        for method in ("pastel", "majority"):
            result = run_cli(cfg_path, "evaluate", "--method", method)
            assert result.exit_code == 0, result.output
            report = tmp_path / "out" / f"alpha.{method}.report.json"
            doc = json.loads(report.read_text())
            assert len(doc["fold_f1"]) == 3
            assert doc["method"] == method
        assert (tmp_path / "out" / "alpha.pastel.params.json").exists()

    def test_zeroshot_requires_extraction(self, tmp_path):
        cfg_path = write_project(tmp_path, datasets=("alpha",))
        result = run_cli(cfg_path, "evaluate", "--method", "zeroshot")
        assert result.exit_code == 1
        assert "extract" in result.output

    def test_zeroshot_report(self, tmp_path):
        cfg_path = write_project(tmp_path, datasets=("alpha",))
        run_cli(cfg_path, "extract", "--zeroshot")
        result = run_cli(cfg_path, "evaluate", "--method", "zeroshot")
        assert result.exit_code == 0
        doc = json.loads((tmp_path / "out" / "alpha.zeroshot.report.json").read_text())
        assert doc["method"] == "zeroshot"

    def test_missing_matrix_is_user_error(self, tmp_path):
        cfg_path = write_project(tmp_path, datasets=("alpha",))
        result = run_cli(cfg_path, "evaluate", "--method", "pastel")
        assert result.exit_code == 1
        assert "run extract first" in result.output


class TestCrossdomainCommand:
    def test_single_pair(self, tmp_path):
        cfg_path = write_project(tmp_path)
        run_cli(cfg_path, "extract")
        result = run_cli(cfg_path, "crossdomain", "--train", "alpha", "--test", "beta")
        assert result.exit_code == 0, result.output
        assert (tmp_path / "out" / "alpha__beta.crossdomain.report.json").exists()

    def test_all_pairs(self, tmp_path):
        cfg_path = write_project(tmp_path)
        run_cli(cfg_path, "extract")
        result = run_cli(cfg_path, "crossdomain", "--all")
        assert result.exit_code == 0
        reports = list((tmp_path / "out").glob("*.crossdomain.report.json"))
        assert len(reports) == 2  # 2 datasets -> 2 ordered pairs

    def test_requires_pair_or_all(self, tmp_path):
        cfg_path = write_project(tmp_path)
        result = run_cli(cfg_path, "crossdomain")
        assert result.exit_code == 1


class TestAnalyzeAndAblate:
    def test_analyze_outputs(self, tmp_path):
        cfg_path = write_project(tmp_path)
        run_cli(cfg_path, "extract")
        result = run_cli(cfg_path, "analyze")
        assert result.exit_code == 0, result.output
        out = tmp_path / "out"
        assoc = (out / "alpha.associations.csv").read_text().splitlines()
        assert len(assoc) == 20  # header + 19 signals
        assert (out / "alpha.answer_distribution.json").exists()
        assert (out / "alpha.frequencies.csv").exists()
        assert (out / "alpha.predictions.csv").exists()
        agg = json.loads((out / "associations_aggregate.json").read_text())
        assert set(agg) == {"politics", "entertainment", "all"}
        assert len(agg["all"]) == 19

    def test_analyze_unlabeled_fails(self, tmp_path):
        cfg_path = write_project(tmp_path, datasets=("alpha",))
        run_cli(cfg_path, "extract")
        # strip the labels
        ds_path = tmp_path / "alpha.jsonl"
        lines = [json.loads(l) for l in ds_path.read_text().splitlines()]
        for rec in lines:
            rec.pop("label", None)
        ds_path.write_text("\n".join(json.dumps(r) for r in lines) + "\n")
        result = run_cli(cfg_path, "analyze")
        assert result.exit_code == 1
        assert "gold labels" in result.output

    def test_ablate_outputs_and_baseline_reuse(self, tmp_path):
        cfg_path = write_project(tmp_path, datasets=("alpha",))
        run_cli(cfg_path, "extract")
        result = run_cli(cfg_path, "ablate")
        assert result.exit_code == 0, result.output
        out = tmp_path / "out"
        rows = (out / "alpha.ablation.csv").read_text().splitlines()
        assert len(rows) == 20  # header + 19 signals
        baseline = json.loads((out / "alpha.ablation_baseline.json").read_text())
        first_digest = baseline["digest"]
        result = run_cli(cfg_path, "ablate")
        assert result.exit_code == 0
        again = json.loads((out / "alpha.ablation_baseline.json").read_text())
        assert again["digest"] == first_digest


class TestReportCommand:
    def test_summarises_reports(self, tmp_path):
        cfg_path = write_project(tmp_path, datasets=("alpha",))
        run_cli(cfg_path, "extract")
        run_cli(cfg_path, "evaluate", "--method", "majority")
        result = run_cli(cfg_path, "report")
        assert result.exit_code == 0
        assert "alpha" in result.output and "majority" in result.output

    def test_no_reports_is_error(self, tmp_path):
        cfg_path = write_project(tmp_path, datasets=("alpha",))
        result = run_cli(cfg_path, "report")
        assert result.exit_code == 1


class TestDeterminism:
    def test_pipeline_outputs_byte_identical_across_runs(self, tmp_path):
        cfg_path = write_project(tmp_path, datasets=("alpha",))
        for out_name in ("out1", "out2"):
            run_cli(cfg_path, "--out-dir", str(tmp_path / out_name),
                    "--cache-dir", str(tmp_path / f"cache_{out_name}"), "extract")
            run_cli(cfg_path, "--out-dir", str(tmp_path / out_name),
                    "--cache-dir", str(tmp_path / f"cache_{out_name}"),
                    "evaluate", "--method", "pastel")
        files1 = sorted((tmp_path / "out1").iterdir())
        files2 = sorted((tmp_path / "out2").iterdir())
        assert [p.name for p in files1] == [p.name for p in files2]
        for a, b in zip(files1, files2):
            if a.name == "manifest.json":
                continue
            assert a.read_bytes() == b.read_bytes(), a.name

    def test_seed_flag_changes_results(self, tmp_path):
        cfg_path = write_project(tmp_path, datasets=("alpha",))
        run_cli(cfg_path, "extract")
        run_cli(cfg_path, "evaluate", "--method", "pastel")
        rep1 = json.loads((tmp_path / "out" / "alpha.pastel.report.json").read_text())
        run_cli(cfg_path, "--seed", "99", "evaluate", "--method", "pastel")
        rep2 = json.loads((tmp_path / "out" / "alpha.pastel.report.json").read_text())
        assert rep1["seed"] != rep2["seed"]
