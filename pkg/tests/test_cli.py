import json
import subprocess
import sys

import pytest

from actar.cli import main


def flags(manifest, root):
    return ["--manifest", str(manifest), "--output_dir", str(root / "out"), "--model_dir", str(root / "models"),
            "--filter.epochs", "5", "--cluster.epochs", "3", "--classifier.epochs", "3",
            "--classifier.hidden", "8"]


def test_staged_commands(small_manifest, tmp_path, capsys):
    f = flags(small_manifest, tmp_path)
    for cmd in ("validate", "identify-actor", "encode", "train-filter", "filter", "cluster", "build-grids",
                "train-classifier", "predict", "eval"):
        assert main([cmd, *f]) == 0, cmd
    out = tmp_path / "out"
    assert (tmp_path / "models" / "classifier.json").exists()
    assert len(list((out / "grids").glob("*.pgm"))) == 12
    assert "mean" in capsys.readouterr().out


def test_run_and_predict_from_bundle(small_manifest, tmp_path):
    f = flags(small_manifest, tmp_path)
    assert main(["run", *f]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert set(report) >= {"accuracy", "mean_precision", "per_class"}
    assert main(["predict", *f, "--bundle", str(tmp_path / "models" / "bundle.json")]) == 0


def test_config_file(small_manifest, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"manifest": str(small_manifest), "output_dir": str(tmp_path / "o")}))
    assert main(["identify-actor", "--config", str(cfg)]) == 0
    assert (tmp_path / "o" / "actors").exists()


@pytest.mark.parametrize("argv, code", [
    (["run", "--manifest", "/nonexistent/manifest.json"], 1),
    (["run", "--cluster.K", "0"], 2),
    (["run", "--config", "/nonexistent.json"], 2),
    (["cluster", "--sweep", "5..2"], 2),
    (["synth", "--out", "x", "--frames", "3"], 2),
])
def test_exit_codes(argv, code, tmp_path):
    assert main(argv + ["--output_dir", str(tmp_path)]) == code


def test_predict_without_classifier_is_data_error(small_manifest, tmp_path):
    assert main(["predict", *flags(small_manifest, tmp_path)]) == 1


def test_synth_and_module_entry(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "d"), "--per-class", "1", "--frames", "16",
                 "--classes", "wave,jump"]) == 0
    doc = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert len(doc["sequences"]) == 2
    res = subprocess.run([sys.executable, "-m", "actar.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "ablate" in res.stdout
