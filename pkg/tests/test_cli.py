import json
import os
import subprocess
import sys

import numpy as np
import pytest

from impeval import autograd as ag
from impeval.cli import main
from impeval.config import dump_config_text
from impeval.corpus import GenConfig, generate_corpus, read_dataset, write_dataset
from impeval.pgm import read_pgm, read_pgm_raw, write_pgm

from conftest import tiny_cfg


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    samples = generate_corpus(12, 4, GenConfig(size_range=(12, 24), heat_resolution=8, local_side=(1, 2)))
    write_dataset(samples, data)
    conf = root / "tiny.conf"
    conf.write_text(dump_config_text(tiny_cfg(steps=6)))
    ckpt = root / "model.ckpt"
    assert main(["train", "--data", str(data), "--config", str(conf), "--out", str(ckpt)]) == 0
    return root, data, conf, ckpt


def test_gen_data_writes_dataset(tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["gen-data", "--out", str(out), "--n", "5", "--seed", "3", "--mix", "0,0,1,0"]) == 0
    samples = read_dataset(out)
    assert len(samples) == 5 and all(s.defects[0].kind == "global" for s in samples)
    assert "wrote 5 samples" in capsys.readouterr().out


def test_bad_mix_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["gen-data", "--out", str(tmp_path), "--n", "2", "--seed", "1", "--mix", "1,0"])
    assert e.value.code != 0


def test_train_writes_checkpoint_and_log(workspace):
    root, _, _, ckpt = workspace
    assert ckpt.stat().st_size > 0
    recs = [json.loads(line) for line in open(str(ckpt) + ".log.jsonl")]
    assert [r["step"] for r in recs] == [1, 6]


def test_eval_reports_are_byte_identical(workspace, tmp_path):
    _, data, _, ckpt = workspace
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--report", str(a)]) == 0
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--report", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    m = doc["metrics"]
    assert m["count_gt0"] + m["count_gt_pos"] == m["count_all"] == 12
    assert len(doc["config_hash"]) == len(doc["checkpoint_hash"]) == 64


def test_oracle_eval_is_perfect(workspace, tmp_path):
    _, data, _, ckpt = workspace
    out = tmp_path / "o.json"
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--report", str(out), "--oracle"]) == 0
    m = json.loads(out.read_text())["metrics"]
    assert m["mse_all"] == 0.0 and m["kld"] <= 1e-6
    assert m["cc"] == pytest.approx(1.0) and m["sim"] == pytest.approx(1.0)
    assert m["plcc"] == pytest.approx(1.0) and m["srcc"] == pytest.approx(1.0)


@pytest.mark.parametrize("heat,score", [("local", "S_token"), ("global", "S_map"), ("fixed", "S")])
def test_eval_sources(workspace, tmp_path, heat, score):
    _, data, _, ckpt = workspace
    out = tmp_path / "r.json"
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--report", str(out),
                 "--heat", heat, "--score", score]) == 0
    doc = json.loads(out.read_text())
    assert (doc["heat_source"], doc["score_source"]) == (heat, score)


def test_eval_resolution_mismatch_names_both(workspace, tmp_path, capsys):
    _, _, _, ckpt = workspace
    other = tmp_path / "big"
    write_dataset(generate_corpus(2, 1, GenConfig(size_range=(12, 24), heat_resolution=16, local_side=(1, 2))), other)
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(other), "--report", str(tmp_path / "x.json")]) == 1
    err = capsys.readouterr().err
    assert "(16, 16)" in err and "(8, 8)" in err


def test_infer_outputs(workspace, tmp_path):
    root, data, _, ckpt = workspace
    image = data / "images" / "00001.pgm"
    out = tmp_path / "inf"
    assert main(["infer", "--ckpt", str(ckpt), "--image", str(image), "--out-dir", str(out)]) == 0
    doc = json.loads((out / "00001_output.json").read_text())
    for key in ("S", "S_token", "S_map", "alpha", "sigma_mean_local", "sigma_mean_global"):
        assert isinstance(doc[key], float)
    assert list(doc["report"]) == ["step1_description", "step2_regions", "step3_map_note",
                                   "step4_analysis", "step5_score"]
    heat_path = out / doc["heatmap"]
    heat = read_pgm(heat_path)
    assert heat.shape == (8, 8)
    assert read_pgm(out / doc["overlay"]).shape == read_pgm(image).shape
    raw, _ = read_pgm_raw(heat_path)
    again = tmp_path / "again.pgm"
    write_pgm(again, heat)
    assert again.read_bytes() == heat_path.read_bytes()
    assert np.array_equal(read_pgm_raw(again)[0], raw)


def test_infer_is_deterministic(workspace, tmp_path):
    _, data, _, ckpt = workspace
    image = data / "images" / "00002.pgm"
    for k in ("a", "b"):
        assert main(["infer", "--ckpt", str(ckpt), "--image", str(image), "--out-dir", str(tmp_path / k)]) == 0
    for name in ("00002_output.json", "00002_heatmap.pgm", "00002_overlay.pgm"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_infer_unreadable_image_fails(workspace, tmp_path):
    _, _, _, ckpt = workspace
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"not an image")
    assert main(["infer", "--ckpt", str(ckpt), "--image", str(bad), "--out-dir", str(tmp_path)]) == 1


def test_train_same_seed_gives_identical_checkpoint(workspace, tmp_path):
    _, data, conf, ckpt = workspace
    again = tmp_path / "again.ckpt"
    assert main(["train", "--data", str(data), "--config", str(conf), "--out", str(again)]) == 0
    assert again.read_bytes() == ckpt.read_bytes()


def test_missing_inputs_fail_cleanly(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "m.ckpt")]) == 1
    assert main(["eval", "--ckpt", str(tmp_path / "none.ckpt"), "--data", str(tmp_path),
                 "--report", str(tmp_path / "r.json")]) == 1


def test_report_compare(workspace, tmp_path, capsys):
    _, data, _, ckpt = workspace
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--report", str(a)])
    main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--report", str(b), "--heat", "global"])
    capsys.readouterr()
    assert main(["report", "--compare", str(a), str(b)]) == 0
    out = capsys.readouterr().out
    assert "metrics.mse_all" in out and "heat_source" in out


def test_gradcheck_corrupted_rule_exits_nonzero(monkeypatch, capsys):
    monkeypatch.setitem(ag._CORRUPT, "gelu", 1.01)
    assert main(["gradcheck"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_module_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "impeval", "--help"], capture_output=True, text=True,
                         env={**os.environ, "PYTHONPATH": os.pathsep.join(sys.path)})
    assert res.returncode == 0
    for cmd in ("gen-data", "train", "eval", "infer", "gradcheck", "report"):
        assert cmd in res.stdout
