import json

import numpy as np
import pytest

from posegraphnet import compute as C
from posegraphnet.cli import load_model, main, manifest_path
from posegraphnet.config import RunConfig
from posegraphnet.data import make_batch, read_jsonl
from posegraphnet.train import evaluate


def json_lines(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "train.jsonl"
    assert main(["synth", "--n", "8", "--seed", "1", "--out", str(path)]) == 0
    return path


def write_config(tmp_path, dataset, name="run.json", **over):
    cfg = {"model": {"channels": 8, "blocks": 1, "squeeze_ratio": 2}, "epochs": 2, "batch_size": 4,
           "lr": 1e-3, "train_path": str(dataset), "val_path": str(dataset),
           "checkpoint_out": str(tmp_path / "model.ckpt")}
    cfg.update(over)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_synth_manifest(dataset, tmp_path):
    manifest = json.loads((tmp_path / "train.jsonl.manifest.json").read_text())
    assert manifest["n"] == 8 and manifest["seed"] == 1 and len(manifest["config_hash"]) == 64
    assert len(read_jsonl(dataset)) == 8
    other = tmp_path / "again.jsonl"
    main(["synth", "--n", "8", "--seed", "1", "--out", str(other)])
    assert other.read_bytes() == dataset.read_bytes()
    again = json.loads((tmp_path / "again.jsonl.manifest.json").read_text())
    assert again["config_hash"] == manifest["config_hash"]


def test_train_smoke_and_manifest(dataset, tmp_path, capsys):
    cfg = write_config(tmp_path, dataset)
    assert main(["train", "--config", str(cfg)]) == 0
    lines = json_lines(capsys.readouterr().out)
    assert [r["epoch"] for r in lines] == [0, 1]
    for key in ("train_mpjpe_p1_mm", "train_mpjae_rad", "val_mpjpe_p1_mm", "val_mpjae_rad"):
        assert all(np.isfinite(r[key]) for r in lines)
    manifest = json.loads(open(manifest_path(str(tmp_path / "model.ckpt"))).read())
    assert manifest["lambda_angle"] == 20 and manifest["squeeze_ratio"] == 2
    assert manifest["history"] == lines


def test_manifest_echoes_default_lambda_and_ratio(dataset, tmp_path):
    cfg = write_config(tmp_path, dataset, epochs=1, model={"channels": 16, "blocks": 1})
    assert main(["train", "--config", str(cfg)]) == 0
    manifest = json.loads(open(manifest_path(str(tmp_path / "model.ckpt"))).read())
    assert manifest["lambda_angle"] == 20.0 and manifest["squeeze_ratio"] == 8


def test_train_deterministic(dataset, tmp_path, capsys):
    results = []
    for run in ("a", "b"):
        cfg = write_config(tmp_path, dataset, name=f"{run}.json",
                           checkpoint_out=str(tmp_path / f"{run}.ckpt"),
                           model={"channels": 8, "blocks": 1, "squeeze_ratio": 2, "dropout": 0.2})
        assert main(["train", "--config", str(cfg)]) == 0
        results.append(json_lines(capsys.readouterr().out)[-1]["train_loss"])
    assert results[0] == results[1]
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_eval_after_reload_matches(dataset, tmp_path, capsys):
    cfg = write_config(tmp_path, dataset)
    main(["train", "--config", str(cfg)])
    capsys.readouterr()
    ckpt = str(tmp_path / "model.ckpt")
    assert main(["eval", "--checkpoint", ckpt, "--data", str(dataset)]) == 0
    metrics = json_lines(capsys.readouterr().out)[0]
    direct = evaluate(load_model(ckpt), make_batch(read_jsonl(dataset)))
    assert metrics == direct
    assert main(["eval", "--checkpoint", ckpt, "--data", str(dataset), "--no-scale"]) == 0
    rigid = json_lines(capsys.readouterr().out)[0]
    assert rigid["mpjpe_p1_mm"] == metrics["mpjpe_p1_mm"]
    assert rigid["mpjpe_p2_mm"] >= metrics["mpjpe_p2_mm"] - 1e-9


def test_predict(dataset, tmp_path):
    main(["train", "--config", str(write_config(tmp_path, dataset, epochs=1))])
    two_d = tmp_path / "2d.jsonl"
    with open(two_d, "w") as fh:
        for s in read_jsonl(dataset):
            rec = s.to_json()
            del rec["joints3d"], rec["rotations"]
            fh.write(json.dumps(rec) + "\n")
    out = tmp_path / "pred.jsonl"
    assert main(["predict", "--checkpoint", str(tmp_path / "model.ckpt"), "--in", str(two_d),
                 "--out", str(out)]) == 0
    preds = json_lines(out.read_text())
    assert len(preds) == 8
    R = np.array(preds[0]["rotations"])
    assert np.array(preds[0]["pos3d"]).shape == (17, 3) and R.shape == (16, 3, 3)
    np.testing.assert_allclose(R @ np.swapaxes(R, -1, -2), np.broadcast_to(np.eye(3), R.shape), atol=1e-12)


def test_invalid_config_exits_2_without_output(dataset, tmp_path):
    for bad in ({"epochs": 0}, {"lr_decay": 1.5}, {"bogus": 1}, {"model": {"channels": 10}}):
        cfg = write_config(tmp_path, dataset, **bad)
        assert main(["train", "--config", str(cfg)]) == 2
        assert not (tmp_path / "model.ckpt").exists()
    missing = tmp_path / "nope.json"
    assert main(["train", "--config", str(missing)]) == 2
    assert main(["synth", "--n", "0", "--out", str(tmp_path / "x.jsonl")]) == 2
    assert not (tmp_path / "x.jsonl").exists()


def test_bad_data_exits_3(dataset, tmp_path):
    broken = tmp_path / "broken.jsonl"
    broken.write_text(dataset.read_text().splitlines()[0] + "\n{not json\n")
    cfg = write_config(tmp_path, broken)
    assert main(["train", "--config", str(cfg)]) == 3
    assert not (tmp_path / "model.ckpt").exists()
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(dataset)]) == 3


def test_corrupt_checkpoint_exits_3(dataset, tmp_path):
    main(["train", "--config", str(write_config(tmp_path, dataset, epochs=1))])
    ckpt = tmp_path / "model.ckpt"
    ckpt.write_bytes(ckpt.read_bytes()[:-3])
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(dataset)]) == 3


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == 0
    recs = json_lines(capsys.readouterr().out)
    assert all(r["ok"] for r in recs)
    assert {"matmul", "batchnorm", "from_6d", "combined_loss[idev]"} <= {r["op"] for r in recs}


def test_lr_schedule_exact():
    run = RunConfig(lr=1e-4)
    assert [run.lr_at(e) for e in range(5)] == [1e-4] * 5
    assert run.lr_at(5) == 1e-4 * 0.92
    assert run.lr_at(19) == 1e-4 * 0.92 ** 3
    assert all(run.lr_at(e) == 1e-4 * 0.92 ** (e // 5) for e in range(40))


def test_checkpoint_written_each_epoch(dataset, tmp_path, monkeypatch):
    writes = []
    real = C.encode_checkpoint
    monkeypatch.setattr(C, "encode_checkpoint", lambda t: writes.append(1) or real(t))
    main(["train", "--config", str(write_config(tmp_path, dataset, epochs=3))])
    assert len(writes) == 3
