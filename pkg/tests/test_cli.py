import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import SMALL_CHANNELS, SMALL_GRID
from emgctl.bundle import bundle_save
from emgctl.cli import main
from emgctl.cues import schedule_read
from emgctl.recording import recording_read, recording_write


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, small_session, small_bundle):
    tmp = tmp_path_factory.mktemp("cli")
    schedule, recording = small_session
    from emgctl.cues import schedule_write
    schedule_write(schedule, tmp / "cues.json")
    recording_write(recording, tmp / "session.emgr")
    bundle_save(small_bundle, tmp / "model.emgb")
    return tmp


def run(*args):
    runner = CliRunner()
    result = runner.invoke(main, [str(a) for a in args], catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


class TestCues:
    def test_generate_and_read_back(self, tmp_path):
        out = tmp_path / "c.json"
        result = run("cues", "--seed", 3, "--preset", "recalibration", "--out", out)
        assert "50 cues" in result.output
        assert schedule_read(out).n_cues == 50


class TestSynth:
    def test_generate_recording(self, tmp_path):
        cues_path = tmp_path / "c.json"
        run("cues", "--seed", 1, "--preset", "recalibration", "--out", cues_path)
        config = {"channels": SMALL_CHANNELS, "grid_rows": SMALL_GRID[0],
                  "grid_cols": SMALL_GRID[1], "seed": 7}
        cfg_path = tmp_path / "synth.json"
        cfg_path.write_text(json.dumps(config))
        out = tmp_path / "r.emgr"
        run("synth", "--config", cfg_path, "--cues", cues_path, "--out", out)
        rec = recording_read(out)
        assert rec.channel_count == SMALL_CHANNELS
        assert rec.sample_rate_hz == 4000.0


class TestTrainEval:
    def test_train_small(self, workdir, tmp_path):
        out = tmp_path / "m.emgb"
        result = run("train", "--recording", workdir / "session.emgr",
                     "--cues", workdir / "cues.json", "--out", out,
                     "--epochs", 8, "--k", 8, "--hidden", "32,32", "--seed", 2)
        assert "test accuracy" in result.output
        assert out.exists()

    def test_eval_model_report(self, workdir, tmp_path):
        report = tmp_path / "report.json"
        run("eval", "--bundle", workdir / "model.emgb",
            "--recording", workdir / "session.emgr",
            "--cues", workdir / "cues.json", "--report", report)
        data = json.loads(report.read_text())
        assert data["confusion_matrix"]["accuracy"] >= 0.95
        assert len(data["confusion_matrix"]["counts"]) == 10

    def test_eval_snr(self, workdir, tmp_path):
        report = tmp_path / "snr.json"
        run("eval", "snr", "--recording", workdir / "session.emgr",
            "--cues", workdir / "cues.json", "--report", report)
        value = json.loads(report.read_text())["snr"]
        assert 5.0 < value < 6.4

    def test_eval_heatmaps_csv(self, workdir, tmp_path):
        report = tmp_path / "hm.json"
        run("eval", "heatmaps", "--recording", workdir / "session.emgr",
            "--cues", workdir / "cues.json", "--bundle", workdir / "model.emgb",
            "--grid", "4x4", "--csv", tmp_path / "hm", "--report", report)
        files = json.loads(report.read_text())["heatmaps"]
        assert len(files) == 10
        with open(files[1]) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["row", "col0", "col1", "col2", "col3"]
        assert len(rows) == 5

    def test_eval_matrix(self, workdir, tmp_path):
        report = tmp_path / "mat.json"
        csv_path = tmp_path / "mat.csv"
        run("eval", "matrix", "--recording-a", workdir / "session.emgr",
            "--cues-a", workdir / "cues.json",
            "--recording-b", workdir / "session.emgr",
            "--cues-b", workdir / "cues.json",
            "--metric", "cosine", "--csv", csv_path, "--report", report)
        data = json.loads(report.read_text())
        values = np.array(data["values"])
        assert values.shape == (20, 20)
        assert np.allclose(np.diag(values), 1.0)
        assert csv_path.exists()

    def test_eval_stats(self, tmp_path):
        pairs = tmp_path / "pairs.csv"
        rng = np.random.default_rng(0)
        before = rng.normal(300, 30, size=40)
        after = before * 1.05
        with open(pairs, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["before", "after"])
            writer.writerows(zip(before, after))
        groups = tmp_path / "groups.csv"
        with open(groups, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["a", "b", "c"])
            for i in range(12):
                writer.writerow([i, i + 5, i + 10])
        report = tmp_path / "stats.json"
        run("eval", "stats", "--pairs", pairs, "--groups", groups,
            "--tail", "one", "--report", report)
        data = json.loads(report.read_text())
        assert data["wilcoxon"]["p_value"] < 0.001
        assert data["kruskal_wallis"]["df"] == 2

    def test_rt_accuracy(self, workdir, tmp_path):
        report = tmp_path / "rt.json"
        run("eval", "rt-accuracy", "--bundle", workdir / "model.emgb",
            "--recording", workdir / "session.emgr",
            "--cues", workdir / "cues.json", "--speed", 50, "--report", report)
        data = json.loads(report.read_text())
        assert data["mean_accuracy"] >= 0.9
        assert len(data["cues"]) == 20


class TestPipelineInfo:
    def test_prints_mask_filter_k_variance(self, workdir):
        result = run("pipeline-info", workdir / "model.emgb")
        info = json.loads(result.output)
        assert info["accepted_channels"] == SMALL_CHANNELS
        assert info["filter"]["order"] == 4
        assert info["filter"]["cutoff_hz"] == 120.0
        assert info["pca_components"] == 8
        assert len(info["explained_variance_ratio"]) == 8


class TestDecode:
    def test_decode_recording_to_jsonl(self, workdir, tmp_path):
        out = tmp_path / "events.jsonl"
        run("decode", "--bundle", workdir / "model.emgb",
            "--source", str(workdir / "session.emgr"),
            "--out", out, "--speed", 50, "--max-ticks", 40)
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(lines) == 40
        assert {"tick", "decoded", "confidence", "mode"} <= set(lines[0])
        ticks = [l["tick"] for l in lines]
        assert ticks == sorted(ticks)
