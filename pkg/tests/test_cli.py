import csv
import json

import numpy as np
import pytest

from s2bnet.cli import load_run_config, main, CliError
from s2bnet.container import load_tensor, save_tensor
from s2bnet.data import load_dataset

TINY = {"model": {"base_channels": 8}, "train": {"batch": 2, "max_steps": 2, "seed": 0}, "seed": 3}


def manifest(path):
    return json.loads(path.read_text())


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["synth", "--out", str(d), "--count", "4", "--size", "32", "--seed", "1"]) == 0
    return d


@pytest.fixture(scope="module")
def run(tmp_path_factory, dataset):
    base = tmp_path_factory.mktemp("run")
    cfg = base / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    out = base / "out"
    assert main(["train", "--data", str(dataset), "--out", str(out), "--config", str(cfg)]) == 0
    return out


def test_synth_layout(dataset):
    m = json.loads((dataset / "manifest.json").read_text())
    assert m["count"] == 4 and len(m["items"]) == 4
    assert len(load_dataset(dataset)) == 4
    run = manifest(dataset / "run_manifest_synth.json")
    assert run["status"] == "ok" and run["seed"] == 1 and run["schema_version"] == 1


def test_synth_count_eight(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--count", "8", "--size", "32", "--seed", "0"]) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["count"] == 8


def test_synth_byte_identical(tmp_path):
    for name in ("a", "b"):
        main(["synth", "--out", str(tmp_path / name), "--count", "2", "--size", "32", "--seed", "7"])
    for f in sorted((tmp_path / "a").glob("*.s2bt")) + [tmp_path / "a" / "manifest.json"]:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_synth_rejects_indivisible(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--count", "2", "--size", "30", "--seed", "0"]) == 1
    assert "divisible" in capsys.readouterr().err
    assert manifest(tmp_path / "run_manifest_synth.json")["status"] == "error"


def test_synth_unwritable(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", "--out", str(blocker / "sub"), "--count", "1", "--size", "32"]) == 1
    assert "error" in capsys.readouterr().err


def test_train_run_directory(run):
    for name in ("config.json", "loss.jsonl", "final_metrics.json"):
        assert (run / name).exists()
    assert (run / "checkpoints" / "step_0000002" / "manifest.json").exists()
    m = manifest(run / "run_manifest_train.json")
    assert m["status"] == "ok" and m["config"]["ablation"] == "ours" and m["seed"] == 3


@pytest.mark.parametrize("flags, expected", [(["--no-gsfa"], "I"), (["--no-srm"], "II")])
def test_train_ablation_flags(tmp_path, dataset, flags, expected):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    out = tmp_path / "out"
    assert main(["train", "--data", str(dataset), "--out", str(out), "--config", str(cfg)] + flags) == 0
    assert manifest(out / "run_manifest_train.json")["config"]["ablation"] == expected


def test_config_parse_error_reports_line(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{\n  "model": {\n    "base_channels": 8,\n  }\n}\n')
    with pytest.raises(CliError, match="line 4"):
        load_run_config(cfg)


def test_config_field_errors(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train": {"batch": "four"}}))
    with pytest.raises(CliError, match="train.batch"):
        load_run_config(cfg)
    cfg.write_text(json.dumps({"model": {"depth": 3}}))
    with pytest.raises(CliError, match="model.depth"):
        load_run_config(cfg)
    cfg.write_text(json.dumps({"optimizer": {}}))
    with pytest.raises(CliError, match="optimizer"):
        load_run_config(cfg)


def test_train_bad_config_exit_code(tmp_path, dataset, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{ nope")
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 1
    assert "line 1" in capsys.readouterr().err


def test_eval_checkpoint(run, dataset, tmp_path):
    out, table = tmp_path / "m.json", tmp_path / "m.csv"
    ckpt = run / "checkpoints" / "step_0000002"
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(dataset), "--out", str(out), "--csv", str(table)]) == 0
    doc = json.loads(out.read_text())
    assert doc["schema_version"] == 1 and {"psnr", "qnr"} <= set(doc["metrics"])
    rows = list(csv.DictReader(table.open()))
    assert len(rows) == 4 and "ssim" in rows[0]
    assert (tmp_path / "m.json.manifest.json").exists()


def test_eval_identity_predictions(dataset, tmp_path):
    gt = np.stack([p.gt for p in load_dataset(dataset)])
    save_tensor(tmp_path / "pred.s2bt", gt)
    out = tmp_path / "m.json"
    assert main(["eval", "--pred", str(tmp_path / "pred.s2bt"), "--data", str(dataset), "--out", str(out)]) == 0
    m = json.loads(out.read_text())["metrics"]
    assert m["psnr"] == 100.0 and m["sam"] == 0.0 and m["ergas"] == 0.0


def test_eval_missing_checkpoint(dataset, tmp_path, capsys):
    code = main(["eval", "--ckpt", str(tmp_path / "none"), "--data", str(dataset), "--out", str(tmp_path / "m.json")])
    assert code == 1 and "missing checkpoint" in capsys.readouterr().err


def test_eval_reproducible(run, dataset, tmp_path):
    ckpt = str(run / "checkpoints" / "step_0000002")
    for name in ("a.json", "b.json"):
        main(["eval", "--ckpt", ckpt, "--data", str(dataset), "--out", str(tmp_path / name)])
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_infer_writes_tensor_and_preview(run, dataset, tmp_path):
    pair = load_dataset(dataset)[0]
    save_tensor(tmp_path / "pan.s2bt", pair.pan)
    save_tensor(tmp_path / "lrms.s2bt", pair.lrms)
    ckpt = str(run / "checkpoints" / "step_0000002")
    out = tmp_path / "fused"
    assert main(["infer", "--ckpt", ckpt, "--pan", str(tmp_path / "pan.s2bt"),
                 "--lrms", str(tmp_path / "lrms.s2bt"), "--out", str(out)]) == 0
    fused = load_tensor(tmp_path / "fused.s2bt")
    assert fused.shape == (4, 32, 32)
    ppm = (tmp_path / "fused.ppm").read_bytes()
    header = b"P6\n32 32\n255\n"
    assert ppm.startswith(header) and len(ppm) == len(header) + 32 * 32 * 3
    pix = np.frombuffer(ppm[len(header):], np.uint8).reshape(32, 32, 3)
    expected = np.rint(np.clip(fused[2, 0, 0], 0, 1) * 255)
    assert pix[0, 0, 0] == expected


def test_infer_missing_checkpoint(tmp_path, capsys):
    code = main(["infer", "--ckpt", str(tmp_path / "x"), "--pan", "p", "--lrms", "l", "--out", str(tmp_path / "o")])
    assert code == 1 and "missing checkpoint" in capsys.readouterr().err


def test_bench_account(tmp_path, capsys):
    assert main(["bench", "--account", "--size", "32", "--out", str(tmp_path)]) == 0
    printed = capsys.readouterr().out
    assert "Flops^t" in printed
    doc = json.loads((tmp_path / "ledger.json").read_text())
    rows = doc["rows"]
    assert doc["totals"]["flops_total"] == pytest.approx(sum(r["flops_f"] + r["flops_b"] for r in rows))
    assert doc["totals"]["params_total"] == pytest.approx(sum(r["params_f"] + r["params_b"] for r in rows))


def test_bench_kernels_speedup(tmp_path, capsys):
    assert main(["bench", "--kernels", "--repeats", "2", "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "kernels.json").read_text())
    assert res["bit_exact"] and res["speedup"] > 1


def test_threads_env(monkeypatch, tmp_path):
    import torch

    before = torch.get_num_threads()
    monkeypatch.setenv("S2B_THREADS", "1")
    try:
        assert main(["synth", "--out", str(tmp_path), "--count", "1", "--size", "32"]) == 0
        assert torch.get_num_threads() == 1
    finally:
        torch.set_num_threads(before)
    monkeypatch.setenv("S2B_THREADS", "many")
    assert main(["synth", "--out", str(tmp_path), "--count", "1", "--size", "32"]) == 1
