import json

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from moveintent import pipeline
from moveintent.cli import main
from moveintent.errors import ConfigError
from moveintent.events import read_events_jsonl
from moveintent.seeds import derive_seed

TINY = {
    "seed": 3,
    "synth": {"spec": {"n_channels": 6, "grid_rows": 2, "grid_cols": 3, "n_events": 14},
              "sessions": [{"day": 2}, {"day": 3}, {"day": 6}]},
    "train_days": [2, 3],
    "test_day": 6,
    "variants": ["late_fusion", "early_fusion", "naive_average"],
    "conditions": ["det", "pred", "pred-b"],
    "train": {"max_epochs": 1, "runs": 1},
    "model": {"ecog_filters": [4, 4, 4], "video_filters": [2, 2, 2, 2], "fc_units": 8},
    "viz": {"steps": 4},
}


def write_config(path, out, **changes):
    cfg = {**TINY, "out_dir": str(out), **changes}
    path.write_text(yaml.safe_dump(cfg))
    return path


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = write_config(base / "cfg.yaml", base / "run")
    res = invoke("all", "--config", cfg)
    assert res.exit_code == 0, res.output
    return base


class TestPipeline:
    def test_events_match_truth(self, run_dir):
        out = run_dir / "run"
        rep = json.loads((out / "events" / "agreement.json").read_text())
        for sid, r in rep["sessions"].items():
            assert r["recall"] == 1.0 and r["false_alarms"] == 0, sid
        evs = read_events_jsonl(out / "events" / "day2_s0.jsonl")
        assert any(e.kind == "rest" for e in evs)

    def test_report_table(self, run_dir):
        lines = (run_dir / "run" / "report" / "report.csv").read_text().splitlines()
        assert lines[0] == "model,Pred-b,Pred,Det,Average"
        assert [line.split(",")[0] for line in lines[1:]] == [
            "late_fusion", "early_fusion", "naive_average", "Average"]

    def test_artifacts_stamped(self, run_dir):
        out = run_dir / "run"
        cfg = pipeline.load_config(run_dir / "cfg.yaml")
        m = json.loads((out / "models" / "late_fusion" / "det" / "metrics.json").read_text())
        assert m["config_hash"] == cfg.config_hash() and m["seed"] == 3
        meta = json.loads((out / "ablation" / "late_fusion" / "det" / "ablation.meta.json").read_text())
        assert meta["config_hash"] == cfg.config_hash()
        assert json.loads((out / "report" / "report.meta.json").read_text())["seed"] == 3

    def test_rerun_byte_identical(self, run_dir, tmp_path):
        cfg = write_config(tmp_path / "cfg.yaml", tmp_path / "again")
        assert invoke("all", "--config", cfg).exit_code == 0
        for rel in ("models/late_fusion/det/metrics.json", "models/late_fusion/det/weights.bin",
                    "ablation/late_fusion/det/ablation.csv", "events/day6_s2.jsonl",
                    "datasets/det_test.bin", "report/report.csv"):
            assert (tmp_path / "again" / rel).read_bytes() == (run_dir / "run" / rel).read_bytes(), rel

    def test_report_stage_matches(self, run_dir):
        res = invoke("report", "--config", run_dir / "cfg.yaml")
        assert res.exit_code == 0
        assert res.output == (run_dir / "run" / "report" / "report.txt").read_text()

    def test_evaluate_matches_train(self, run_dir):
        res = invoke("evaluate", "--config", run_dir / "cfg.yaml", "--variant", "early_fusion",
                     "--condition", "pred")
        assert res.exit_code == 0
        ev = json.loads((run_dir / "run" / "models" / "early_fusion" / "pred" / "evaluation.json").read_text())
        m = json.loads((run_dir / "run" / "models" / "early_fusion" / "pred" / "metrics.json").read_text())
        assert ev["accuracy"] == m["test_acc"]


class TestExitCodes:
    def test_bad_schema(self, tmp_path):
        cfg = write_config(tmp_path / "c.yaml", tmp_path / "o", bogus=1)
        assert invoke("synth", "--config", cfg).exit_code == 2

    def test_bad_variant(self, tmp_path):
        cfg = write_config(tmp_path / "c.yaml", tmp_path / "o")
        assert invoke("train", "--config", cfg, "--variant", "resnet").exit_code == 2

    def test_missing_config_file(self, tmp_path):
        assert invoke("synth", "--config", tmp_path / "nope.yaml").exit_code == 2

    def test_missing_data(self, tmp_path):
        cfg = write_config(tmp_path / "c.yaml", tmp_path / "o")
        assert invoke("train", "--config", cfg).exit_code == 3

    def test_partial_write(self, run_dir, tmp_path):
        import shutil

        out = tmp_path / "copy"
        shutil.copytree(run_dir / "run", out)
        (out / "models" / "late_fusion" / "det" / "model.json").unlink()
        cfg = write_config(tmp_path / "c.yaml", out)
        res = invoke("evaluate", "--config", cfg, "--variant", "late_fusion", "--condition", "det")
        assert res.exit_code == 5

    def test_stale_cache(self, run_dir, tmp_path):
        import shutil

        out = tmp_path / "copy"
        shutil.copytree(run_dir / "run", out)
        cfg = write_config(tmp_path / "c.yaml", out, rest_ratio=2.0)
        assert invoke("train", "--config", cfg).exit_code == 3

    def test_divergence(self, run_dir, tmp_path):
        import shutil

        from moveintent.dataset import load_sampleset, save_sampleset

        out = tmp_path / "copy"
        shutil.copytree(run_dir / "run", out)
        path = out / "datasets" / "det_train"
        meta = json.loads(path.with_suffix(".json").read_text())["meta"]
        s = load_sampleset(path)
        s.ecog[:] = np.nan
        save_sampleset(s, path, meta)
        cfg = write_config(tmp_path / "c.yaml", out)
        res = invoke("train", "--config", cfg, "--variant", "late_fusion", "--condition", "det")
        assert res.exit_code == 4


class TestConfig:
    def test_overrides(self, tmp_path):
        cfg = write_config(tmp_path / "c.yaml", tmp_path / "o")
        c = pipeline.load_config(cfg, seed=9, conditions=["pred-b"])
        assert c.seed == 9 and c.conditions == ["pred_b"]

    def test_hash_ignores_out_dir(self, tmp_path):
        a = pipeline.load_config(write_config(tmp_path / "a.yaml", tmp_path / "x"))
        b = pipeline.load_config(write_config(tmp_path / "b.yaml", tmp_path / "y"))
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != pipeline.load_config(tmp_path / "a.yaml", seed=4).config_hash()

    def test_json_config(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"seed": 1, "variants": ["svm_spectral"]}))
        assert pipeline.load_config(p).variants == ["svm_spectral"]

    def test_synth_spec_validated(self):
        with pytest.raises(ConfigError):
            pipeline.load_config(None, synth={"spec": {"n_channels": -1}})
        with pytest.raises(ConfigError):
            pipeline.load_config(None, synth={"spec": {"seed": 4}})


class TestSeeds:
    def test_stable(self):
        assert derive_seed(0, "run", 1) == derive_seed(0, "run", 1)
        assert derive_seed(0, "run", 1) != derive_seed(0, "run", 2)
        assert 0 <= derive_seed(123, "x") < 2 ** 63
