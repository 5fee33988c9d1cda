import json
import shutil

import pytest

from synids import cli
from synids.classifier import load_model
from synids.config import derive_seed, get_floats, parse_config
from synids.errors import ConfigError
from synids.experiment import ExperimentConfig


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.cfg"
    spec.write_text(
        "duration_s = 80\nseed = 21\nbackground.profiles = http, https, ssh, bittorrent\n"
        "attack.enabled = true\nattack.start_s = 40\nattack.end_s = 80\n"
        "attack.rate_pps = 31.20\nattack.clients = 20\n"
    )
    cap, truth, frames = root / "cap.pcap", root / "truth.json", root / "frames"
    assert cli.main(["gen", "--spec", str(spec), "--out", str(cap), "--truth", str(truth)]) == 0
    assert cli.main(["render", "--input", str(cap), "--truth", str(truth), "--out", str(frames),
                     "--size", "300", "--window", "2"]) == 0
    model = root / "model.bin"
    assert cli.main(["train", "--frames", str(frames), "--model", str(model),
                     "--clusters", "30", "--rounds", "5"]) == 0
    return root, frames, model


def test_gen_truth_and_render_outputs(workspace):
    root, frames, _ = workspace
    truth = json.loads((root / "truth.json").read_text())
    assert truth["seed"] == 21 and len(truth["attacks"]) == 1
    rows = [json.loads(line) for line in (frames / "frames.jsonl").read_text().splitlines()]
    assert len(rows) == 40
    assert {r["label"] for r in rows} == {"ddos", "legitimate"}
    info = json.loads((frames / "render.json").read_text())
    assert info["window_s"] == 2 and info["calibration"]["width"] == 300


def test_train_writes_model_and_log(workspace):
    _, _, model = workspace
    m = load_model(str(model))
    assert m.vocabulary.k == 30 and 1 <= m.ensemble.rounds <= 5
    log = json.loads(model.with_name(model.name + ".log.json").read_text())
    assert log


def test_eval_and_predict(workspace, capsys):
    root, frames, model = workspace
    report = root / "report.json"
    assert cli.main(["eval", "--model", str(model), "--frames", str(frames), "--out", str(report)]) == 0
    data = json.loads(report.read_text())
    rows = [json.loads(line) for line in (frames / "frames.jsonl").read_text().splitlines()]
    assert data["tp"] + data["fn"] == sum(r["label"] == "ddos" for r in rows)
    assert data["total"] == len(rows) == 40
    assert data["cr"] == (data["dr"] + 1 - data["fpr"]) / 2
    capsys.readouterr()
    assert cli.main(["predict", "--model", str(model), "--frames", str(frames)]) == 0
    lines = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert len(lines) == 40
    assert all(set(x) == {"frame", "label", "score", "confidence"} for x in lines)
    legit = [x for x in lines if x["frame"].startswith("frame_000000_")]
    assert legit[0]["label"] == "legitimate"


def test_train_from_class_directories(workspace, tmp_path):
    _, frames, _ = workspace
    rows = [json.loads(line) for line in (frames / "frames.jsonl").read_text().splitlines()]
    for label in ("legitimate", "ddos"):
        (tmp_path / label).mkdir()
        for r in rows:
            if r["label"] == label:
                shutil.copy(frames / r["file"], tmp_path / label / r["file"])
    model = tmp_path / "m.bin"
    dump = tmp_path / "desc"
    assert cli.main(["train", "--legit", str(tmp_path / "legitimate"), "--ddos", str(tmp_path / "ddos"),
                     "--model", str(model), "--clusters", "10", "--rounds", "3",
                     "--dump-descriptors", str(dump)]) == 0
    assert model.exists() and any(dump.iterdir())


def test_too_many_clusters_exit_3(workspace, tmp_path):
    _, frames, _ = workspace
    code = cli.main(["train", "--frames", str(frames), "--model", str(tmp_path / "m.bin"),
                     "--clusters", "10000000"])
    assert code == 3 and not (tmp_path / "m.bin").exists()


def test_predict_empty_directory_exit_2(workspace, tmp_path):
    _, _, model = workspace
    (tmp_path / "empty").mkdir()
    out = tmp_path / "pred.jsonl"
    assert cli.main(["predict", "--model", str(model), "--frames", str(tmp_path / "empty"),
                     "--out", str(out)]) == 2
    assert not out.exists()


def test_render_garbage_capture_exit_4(tmp_path):
    bad = tmp_path / "bad.pcap"
    bad.write_bytes(b"\xd4\xc3\xb2\xa1" + b"\x00" * 10)
    assert cli.main(["render", "--input", str(bad), "--out", str(tmp_path / "f")]) == 4


def test_render_diff_and_jsonl_input(tmp_path):
    meta = tmp_path / "m.jsonl"
    assert cli.main(["gen", "--out", str(meta), "--format", "jsonl", "--seed", "3"]) == 0
    out = tmp_path / "frames"
    assert cli.main(["render", "--input", str(meta), "--out", str(out), "--size", "64", "--diff"]) == 0
    assert json.loads((out / "render.json").read_text())["diff"] is True
    rows = [json.loads(line) for line in (out / "frames.jsonl").read_text().splitlines()]
    assert len(rows) == len(list(out.glob("*.png"))) in (11, 12)  # 60 s from the first packet


def test_experiment_command(tmp_path):
    out = tmp_path / "exp.json"
    assert cli.main(["experiment", "--scale", "0.01", "--size", "160", "--clusters", "15",
                     "--rounds", "3", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert set(data["results"]) == {"train_small", "train_large"}
    assert out.with_suffix(".txt").read_text().strip()


def test_config_parsing():
    cfg = parse_config("# comment\nbasis.a = 1, 0, 1\n attack.rates = 15.90, 31.20  # inline\n")
    assert cfg["basis.a"] == "1, 0, 1" and get_floats(cfg, "attack.rates") == [15.90, 31.20]
    with pytest.raises(ConfigError):
        parse_config("no equals sign")
    assert derive_seed(0, "a") == derive_seed(0, "a") != derive_seed(0, "b")


def test_experiment_config_overrides():
    cfg = ExperimentConfig.from_config({"experiment.scale": "0.2", "experiment.size": "400"},
                                       clusters=50, rounds=None)
    assert cfg.scale == 0.2 and cfg.size == 400 and cfg.clusters == 50 and cfg.rounds == 10
    assert cfg.sizes()["train_small"] == (300, 100)


def test_usage_errors_exit_1(capsys):
    assert cli.main(["train"]) == 1
    assert cli.main(["no-such-command"]) == 1
    assert cli.main(["--version"]) == 0
    capsys.readouterr()
