import csv
import json

import numpy as np
import pytest

from raybundle import io
from raybundle.cli import main
from raybundle.metrics import pairwise_rotation_errors


def run(*args) -> int:
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """A scene, its bundles and a tiny trained model shared by the CLI tests."""
    d = tmp_path_factory.mktemp("cli")
    assert run("gen", "--seed", 7, "--out", d / "scene.json") == 0
    assert run("convert", "--cameras", d / "scene.json", "--p", 4, "--out", d / "bundles.json") == 0
    assert run("train", "--seed", 0, "--scenes", 6, "--steps", 4, "--batch-size", 2, "--p", 4,
               "--width", 16, "--blocks", 1, "--out", d / "w.bin", "--log", d / "train.jsonl") == 0
    return d


def test_gen_twice_identical(tmp_path):
    assert run("gen", "--seed", 7, "--out", tmp_path / "a.json") == 0
    assert run("gen", "--seed", 7, "--out", tmp_path / "b.json") == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert run("gen", "--seed", 8, "--out", tmp_path / "c.json") == 0
    assert (tmp_path / "a.json").read_bytes() != (tmp_path / "c.json").read_bytes()


def test_gen_normalized(tmp_path):
    assert run("gen", "--seed", 1, "--n-cameras", 5, "--normalize", "--out", tmp_path / "s.json") == 0
    scene = io.read_scene(tmp_path / "s.json")
    assert len(scene.cameras) == 5
    assert np.array_equal(scene.cameras[0].rotation, np.eye(3))
    assert np.linalg.norm(scene.cameras[0].translation) == pytest.approx(1.0, abs=1e-15)


def test_convert_then_recover(work, tmp_path):
    assert run("recover", "--bundles", work / "bundles.json", "--out", tmp_path / "rec.json") == 0
    cams, _ = io.read_cameras(work / "scene.json")
    rec, _ = io.read_cameras(tmp_path / "rec.json")
    for a, b in zip(cams, rec):
        np.testing.assert_allclose(b.rotation, a.rotation, atol=1e-9)
        np.testing.assert_allclose(b.center, a.center, atol=1e-8)
        np.testing.assert_allclose(b.intrinsics / b.intrinsics[2, 2], a.intrinsics, rtol=1e-6, atol=1e-9)


def test_eval_self(work, tmp_path):
    out = tmp_path / "report.json"
    assert run("eval", "--pred", work / "scene.json", "--gt", work / "scene.json", "--out", out) == 0
    report = json.loads(out.read_text())
    assert report["rotation_accuracy"]["15"] == 1.0
    assert report["center_accuracy"]["0.1"] == 1.0
    assert report["auc_rotation"] == 1.0 and report["auc_center"] == 1.0


def test_eval_stdout(work, capsys):
    assert run("eval", "--pred", work / "scene.json", "--gt", work / "scene.json") == 0
    assert json.loads(capsys.readouterr().out)["n_views"] == 3


def test_curves(work, tmp_path):
    out = tmp_path / "curves.csv"
    assert run("curves", "--pred", work / "scene.json", "--gt", work / "scene.json", "--out", out) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 181 + 21
    assert {r["metric"] for r in rows} == {"rotation_deg", "center_frac"}
    assert all(float(r["accuracy"]) == 1.0 for r in rows)


def test_noise(work, tmp_path):
    args = ("noise", "--bundles", work / "bundles.json", "--t", 30, "--seed", 3)
    assert run(*args, "--out", tmp_path / "a.json") == 0
    assert run(*args, "--out", tmp_path / "b.json") == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    clean = io.read_bundles(work / "bundles.json")
    noisy = io.read_bundles(tmp_path / "a.json")
    assert len(noisy) == 3 and not np.allclose(noisy[0].rays, clean[0].rays)


def test_train_log(work):
    rows = [json.loads(line) for line in (work / "train.jsonl").read_text().splitlines()]
    assert [r["step"] for r in rows] == [0, 1, 2, 3]
    assert all(np.isfinite(r["loss"]) for r in rows)
    _, meta = io.read_weights(work / "w.bin")
    assert meta["model"]["width"] == 16 and meta["train"]["seed"] == 0


def test_sample_dump_steps(work, tmp_path):
    assert run("sample", "--weights", work / "w.bin", "--scene", work / "scene.json", "--p", 4,
               "--seed", 0, "--stop-t", 90, "--out", tmp_path / "pred.json",
               "--dump-steps", tmp_path / "traj.json") == 0
    traj = json.loads((tmp_path / "traj.json").read_text())
    assert [s["t"] for s in traj["steps"]] == list(range(100, 90, -1))
    pred = io.read_bundles(tmp_path / "pred.json")
    assert np.array_equal(np.stack([b.rays for b in pred]), np.array(traj["steps"][-1]["x0_pred"]))


def test_sample_many_views(work, tmp_path):
    assert run("gen", "--seed", 2, "--n-cameras", 6, "--out", tmp_path / "s6.json") == 0
    assert run("sample", "--weights", work / "w.bin", "--scene", tmp_path / "s6.json", "--p", 4,
               "--seed", 0, "--stop-t", 95, "--batch-max", 3, "--out", tmp_path / "pred.json") == 0
    assert len(io.read_bundles(tmp_path / "pred.json")) == 6


def test_exit_codes(work, tmp_path, capsys):
    text = (work / "bundles.json").read_text()
    (tmp_path / "cut.json").write_text(text[:100])
    assert run("recover", "--bundles", tmp_path / "cut.json", "--out", tmp_path / "x.json") == 1
    assert "line" in capsys.readouterr().err
    assert run("recover", "--bundles", tmp_path / "missing.json", "--out", tmp_path / "x.json") == 1
    with pytest.raises(SystemExit) as info:
        run("gen", "--out", tmp_path / "x.json")  # --seed is required
    assert info.value.code == 1
    # every ray through one point along one direction: no unique camera
    doc = json.loads(text)
    bundle = doc["bundles"][0]
    bundle["rays"] = [[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]] * 16
    (tmp_path / "flat.json").write_text(json.dumps(bundle))
    assert run("recover", "--bundles", tmp_path / "flat.json", "--out", tmp_path / "x.json") == 2


def test_lenient_flag(work, tmp_path):
    doc = json.loads((work / "scene.json").read_text())
    doc["note"] = 1
    (tmp_path / "s.json").write_text(json.dumps(doc))
    assert run("eval", "--pred", tmp_path / "s.json", "--gt", work / "scene.json") == 1
    assert run("--lenient", "eval", "--pred", tmp_path / "s.json", "--gt", work / "scene.json") == 0


def test_json_logs(tmp_path, capsys):
    assert run("--json-logs", "gen", "--seed", 1, "--out", tmp_path / "s.json") == 0
    line = capsys.readouterr().err.strip().splitlines()[-1]
    assert json.loads(line)["msg"] == "wrote scene"


def test_regress_cameras_out(work, tmp_path):
    assert run("regress", "--weights", work / "w.bin", "--scene", work / "scene.json", "--p", 4,
               "--out", tmp_path / "r.json", "--cameras-out", tmp_path / "rc.json") in (0, 2)
    assert len(io.read_bundles(tmp_path / "r.json")) == 3


def test_rotation_metric_of_recovered_cameras(work, tmp_path):
    run("recover", "--bundles", work / "bundles.json", "--out", tmp_path / "rec.json")
    rec, _ = io.read_cameras(tmp_path / "rec.json")
    gt, _ = io.read_cameras(work / "scene.json")
    assert pairwise_rotation_errors(rec, gt).max() < 1e-6
