import csv
import json

import numpy as np
import pytest

from orbitpcqa import synth
from orbitpcqa.cli import main
from orbitpcqa.cloud_io import parse_ply, write_ply
from orbitpcqa.config import RunConfig
from orbitpcqa.renderer import load_sequence
from test_harness import micro_config, write_micro_dataset


@pytest.fixture
def micro_config_file(tmp_path):
    path = tmp_path / "micro.json"
    path.write_text(micro_config().to_json())
    return str(path)


@pytest.fixture
def sample_ply(tmp_path):
    cloud = synth.make_shape("sphere", 80, seed=1)
    path = tmp_path / "cloud.ply"
    path.write_bytes(write_ply(cloud, "binary_le"))
    return str(path)


class TestDistortCommand:
    def test_noise_round_trip(self, tmp_path, sample_ply):
        out = tmp_path / "noisy.ply"
        rc = main(["distort", "--in", sample_ply, "--out", str(out),
                   "--kind", "noise", "--level", "0.01", "--seed", "7"])
        assert rc == 0
        cloud = parse_ply(out.read_bytes())
        assert cloud.count == 80

    def test_downsample(self, tmp_path, sample_ply):
        out = tmp_path / "down.ply"
        main(["distort", "--in", sample_ply, "--out", str(out),
              "--kind", "downsample", "--level", "0.5"])
        assert parse_ply(out.read_bytes()).count == 40


class TestCaptureCommand:
    def test_writes_three_sequences(self, tmp_path, sample_ply, micro_config_file):
        out = tmp_path / "seqs"
        rc = main(["capture", "--in", sample_ply, "--out", str(out),
                   "--config", micro_config_file])
        assert rc == 0
        for name in ("A", "B", "C"):
            seq = load_sequence(out / f"{name}.pcv")
            assert seq.frame_count == 4
            assert seq.width == seq.height == 16


class TestSynthDatasetCommand:
    def test_generates_manifest(self, tmp_path):
        out = tmp_path / "data"
        rc = main(["synth-dataset", "--out", str(out), "--contents", "2",
                   "--points", "50", "--levels", "0,0.2", "--seed", "3"])
        assert rc == 0
        rows = list(csv.DictReader(open(out / "manifest.csv")))
        assert len(rows) == 4


class TestTrainPredictEvaluate:
    def test_full_cycle(self, tmp_path, micro_config_file, capsys):
        manifest = write_micro_dataset(tmp_path)
        cache = tmp_path / "cache"
        params = tmp_path / "net.pcnn"
        rc = main(["train", "--manifest", str(manifest), "--cache", str(cache),
                   "--out", str(params), "--config", micro_config_file, "--seed", "1"])
        assert rc == 0
        assert params.exists()

        preds_csv = tmp_path / "preds.csv"
        rc = main(["predict", "--manifest", str(manifest), "--cache", str(cache),
                   "--params", str(params), "--out", str(preds_csv),
                   "--config", micro_config_file])
        assert rc == 0
        rows = list(csv.DictReader(open(preds_csv)))
        assert len(rows) == 4
        for row in rows:
            float(row["prediction"])

    def test_evaluate_and_compare(self, tmp_path, micro_config_file):
        manifest = write_micro_dataset(tmp_path, groups=3, levels=3)
        cache = tmp_path / "cache"
        reports = []
        for predictor in ("oracle", "constant"):
            out = tmp_path / f"{predictor}.json"
            rc = main(["evaluate", "--manifest", str(manifest), "--cache", str(cache),
                       "--split", "loco", "--seed", "0", "--out", str(out),
                       "--predictor", predictor, "--label", predictor,
                       "--config", micro_config_file, "--deterministic"])
            assert rc == 0
            reports.append(out)
            report = json.loads(out.read_text())
            assert len(report["folds"]) == 3
            assert out.with_suffix(".csv").exists()

        matrix_csv = tmp_path / "matrix.csv"
        rc = main(["compare", "--reports"] + [str(r) for r in reports]
                  + ["--out", str(matrix_csv)])
        assert rc == 0
        rows = list(csv.DictReader(open(matrix_csv)))
        assert len(rows) == 4
        verdicts = {(r["row"], r["column"]): r["verdict"] for r in rows}
        assert verdicts[("oracle", "constant")] == "better"
        assert verdicts[("constant", "oracle")] == "worse"

    def test_cache_env_var(self, tmp_path, micro_config_file, monkeypatch):
        manifest = write_micro_dataset(tmp_path)
        env_cache = tmp_path / "env_cache"
        monkeypatch.setenv("ORBITPCQA_CACHE", str(env_cache))
        params = tmp_path / "net.pcnn"
        main(["train", "--manifest", str(manifest), "--out", str(params),
              "--config", micro_config_file])
        assert env_cache.exists()
        assert list(env_cache.rglob("*.pcv"))


class TestSelftest:
    def test_selftest_passes(self, capsys):
        assert main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out


class TestConfigRoundTrip:
    def test_profiles_and_json(self, tmp_path):
        for profile in ("desk", "paper"):
            cfg = RunConfig.profile(profile)
            again = RunConfig.from_json(cfg.to_json())
            assert again == cfg

    def test_unknown_profile(self):
        with pytest.raises(ValueError):
            RunConfig.profile("gpu")
