import json

import numpy as np
import pytest

from reskws import cli
from reskws.dataset import AugmentationConfig
from reskws.frontend import write_wav
from reskws.synthetic import colored_noise
from reskws.training import TrainConfig

from conftest import TRAINED_EPOCHS

# reference training recipe; a change here is a behaviour change
FROZEN = {
    "lr": 0.1,
    "momentum": 0.9,
    "batch_size": 64,
    "epochs": 26,
    "noise_prob": 0.8,
    "shift_ms": 100.0,
    "evict_frac": 0.3,
}


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_defaults_match_frozen_table():
    args = cli.build_parser().parse_args(["train"])
    for name, value in FROZEN.items():
        assert getattr(args, name) == value, name
    assert cli.train_config(args) == TrainConfig()
    assert cli.aug_config(args) == AugmentationConfig()


def test_footprint_text(capsys):
    code, out, _ = run(capsys, "footprint", "--arch", "res15")
    assert code == 0
    assert "237,870" in out and "res15" in out


def test_footprint_json(capsys):
    code, out, _ = run(capsys, "footprint", "--format", "json")
    rows = json.loads(out)
    assert code == 0 and [r["arch"] for r in rows] == ["res15", "res15-narrow", "res26", "res26-narrow", "res8", "res8-narrow"]
    assert rows[-1]["n_params"] == 19_893


def test_bogus_arch_lists_valid_names(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--arch", "bogus"])
    assert exc.value.code == 2
    err = capsys.readouterr().err
    for name in ("res15", "res15-narrow", "res26", "res26-narrow", "res8", "res8-narrow"):
        assert name in err


def test_missing_dataset_is_data_error(capsys, tmp_path):
    code, out, err = run(capsys, "train", "--data", tmp_path / "absent", "--epochs", 1)
    assert code == 3 and out == "" and "does not exist" in err


def test_no_dataset_root_is_usage_error(capsys, monkeypatch):
    monkeypatch.delenv(cli.DATA_ENV, raising=False)
    code, _, err = run(capsys, "train", "--epochs", 1)
    assert code == 2 and cli.DATA_ENV in err


def test_train_writes_artifacts(trained_run):
    for name in ("best.ckpt", "last.ckpt", "metrics.json", "run.json", "manifest.jsonl"):
        assert (trained_run / name).is_file(), name
    metrics = json.loads((trained_run / "metrics.json").read_text())
    assert len(metrics["epochs"]) == TRAINED_EPOCHS


def test_train_smoke_with_limit(capsys, synth_root, tmp_path):
    code, out, _ = run(capsys, "train", "--data", synth_root, "--limit", 100, "--epochs", 1, "--out", tmp_path)
    assert code == 0 and json.loads(out)["epochs"] == 1


def test_eval_is_deterministic(capsys, synth_root, trained_run, tmp_path):
    ckpt = trained_run / "best.ckpt"
    code, first, _ = run(capsys, "eval", "--checkpoint", ckpt, "--data", synth_root, "--out", tmp_path)
    _, second, _ = run(capsys, "eval", "--checkpoint", ckpt, "--data", synth_root)
    assert code == 0 and first == second
    report = json.loads(first)
    assert report["accuracy"] > 0.5
    assert (tmp_path / "roc.csv").is_file() and (tmp_path / "report.json").is_file()


def test_eval_untrained_is_near_chance(capsys, synth_root):
    code, out, _ = run(capsys, "eval", "--arch", "res8-narrow", "--data", synth_root)
    assert code == 0 and json.loads(out)["accuracy"] < 0.3


def test_eval_arch_mismatch(capsys, synth_root, trained_run):
    code, _, err = run(capsys, "eval", "--checkpoint", trained_run / "best.ckpt", "--arch", "res15", "--data", synth_root)
    assert code == 3 and "CheckpointMismatchError" in err


def test_eval_needs_checkpoint_or_arch(capsys, synth_root):
    code, _, _ = run(capsys, "eval", "--data", synth_root)
    assert code == 2


def test_predict(capsys, synth_root, trained_run):
    wav = next((synth_root / "yes").glob("*.wav"))
    code, first, _ = run(capsys, "predict", "--checkpoint", trained_run / "best.ckpt", wav)
    _, second, _ = run(capsys, "predict", "--checkpoint", trained_run / "best.ckpt", wav)
    out = json.loads(first)
    assert code == 0 and first == second
    assert sum(out["probabilities"].values()) == pytest.approx(1.0, abs=1e-9)
    assert len(out["probabilities"]) == 12


def test_predict_silence(capsys, trained_run, tmp_path):
    noise = colored_noise("pink", 16_000, np.random.default_rng(123)) * 0.2
    write_wav(tmp_path / "quiet.wav", noise)
    code, out, _ = run(capsys, "predict", "--checkpoint", trained_run / "best.ckpt", tmp_path / "quiet.wav")
    assert code == 0 and json.loads(out)["label"] == "silence"


def test_predict_rejects_stereo(capsys, trained_run, tmp_path):
    write_wav(tmp_path / "st.wav", np.zeros(4000), channels=2)
    code, out, err = run(capsys, "predict", "--checkpoint", trained_run / "best.ckpt", tmp_path / "st.wav")
    assert code == 3 and out == "" and "mono" in err


def test_plot_data(capsys, synth_root, trained_run):
    code, out, _ = run(capsys, "plot-data", "--checkpoint", f"trained={trained_run / 'best.ckpt'}", "--data", synth_root)
    lines = out.strip().splitlines()
    assert code == 0 and lines[0] == "model,far,frr" and len(lines) == 202
    assert all(line.startswith("trained,") for line in lines[1:])
