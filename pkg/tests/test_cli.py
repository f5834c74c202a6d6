import json
from pathlib import Path

import numpy as np
import pytest

from handrift.cli import main
from handrift.motionfile import MotionData, read_motion, write_motion

TINY_CONFIG = {
    "frames": 14,
    "train": {"epochs": 1, "batch_size": 2, "eval_subset": 0},
    "schedule": {"steps": 2, "eta1": 0.01, "kappa": 0.3, "power": 1.0},
    "denoiser": {"layers": 1, "heads": 2, "width": 16, "mesh_widths": [4, 6],
                 "step_features": 8, "ffn_multiplier": 2},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "gen.json"
    spec.write_text(json.dumps({"frames": 14}))
    cfg = root / "config.json"
    cfg.write_text(json.dumps(TINY_CONFIG))
    corpus = root / "corpus"
    assert main(["generate", "--spec", str(spec), "--out", str(corpus), "--count", "6",
                 "--seed", "3"]) == 0
    ckpt = root / "model.ckpt"
    assert main(["train", "--corpus", str(corpus), "--config", str(cfg), "--out", str(ckpt),
                 "--log", str(root / "train.log")]) == 0
    return {"root": root, "spec": spec, "cfg": cfg, "corpus": corpus, "ckpt": ckpt}


def test_generate_writes_files_and_manifest(workspace):
    corpus = workspace["corpus"]
    files = sorted(corpus.glob("*.hmf"))
    assert len(files) == 6
    manifest = json.loads((corpus / "manifest.json").read_text())
    assert manifest["count"] == 6
    assert len(manifest["files"]) == 6
    data = read_motion(files[0])
    assert data.frames.shape == (14, 61)
    assert data.states is not None and data.object_center is not None


def test_generate_zero_count_empty_manifest(tmp_path, workspace):
    out = tmp_path / "empty"
    assert main(["generate", "--spec", str(workspace["spec"]), "--out", str(out),
                 "--count", "0", "--seed", "1"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["count"] == 0 and manifest["files"] == []
    assert list(out.glob("*.hmf")) == []


def test_generate_deterministic_bytes(tmp_path, workspace):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["generate", "--spec", str(workspace["spec"]), "--out", str(out),
                     "--count", "3", "--seed", "11"]) == 0
    for f in sorted(a.glob("*")):
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_generate_missing_spec_exits_one(tmp_path):
    assert main(["generate", "--spec", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o"),
                 "--count", "1", "--seed", "0"]) == 1


def test_train_missing_config_exits_one(tmp_path, workspace, capsys):
    missing = tmp_path / "missing.json"
    code = main(["train", "--corpus", str(workspace["corpus"]), "--config", str(missing),
                 "--out", str(tmp_path / "x.ckpt")])
    assert code == 1
    assert f"config not found: {missing}" in capsys.readouterr().err


def test_train_checkpoint_reloads(workspace):
    from handrift.pipeline import load_bundle

    bundle = load_bundle(workspace["ckpt"])
    assert bundle.frames == 14
    assert bundle.denoiser.parameter_count() > 0


def test_train_ablation_flag_recorded(tmp_path, workspace):
    ckpt = tmp_path / "abl.ckpt"
    assert main(["train", "--corpus", str(workspace["corpus"]), "--config", str(workspace["cfg"]),
                 "--out", str(ckpt), "--ablation", "no-physics"]) == 0
    from handrift.checkpoint import load_checkpoint

    manifest, _ = load_checkpoint(ckpt)
    tr = manifest["extra"]["config"]["train"]
    assert tr["use_state"] is False and tr["use_kin"] is False and tr["use_sta"] is False


def test_refine_deterministic_and_repeatable(tmp_path, workspace):
    src = sorted(workspace["corpus"].glob("*.hmf"))[0]
    out1, out2 = tmp_path / "r1.hmf", tmp_path / "r2.hmf"
    for out in (out1, out2):
        assert main(["refine", "--ckpt", str(workspace["ckpt"]), "--in", str(src),
                     "--out", str(out)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    refined = read_motion(out1)
    assert refined.frames.shape == (14, 61)
    assert refined.states is not None


def test_refine_stochastic_seeded(tmp_path, workspace):
    src = sorted(workspace["corpus"].glob("*.hmf"))[0]
    outs = []
    for name, seed in (("s1.hmf", 5), ("s2.hmf", 5), ("s3.hmf", 6)):
        out = tmp_path / name
        assert main(["refine", "--ckpt", str(workspace["ckpt"]), "--in", str(src),
                     "--out", str(out), "--stochastic", "--seed", str(seed)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0] != outs[2]


def test_refine_longer_sequence_sliding_window(tmp_path, workspace):
    src = read_motion(sorted(workspace["corpus"].glob("*.hmf"))[0])
    long_frames = np.concatenate([src.frames, src.frames[::-1], src.frames])
    long_path = tmp_path / "long.hmf"
    write_motion(long_path, MotionData(frames=long_frames))
    out = tmp_path / "long_refined.hmf"
    assert main(["refine", "--ckpt", str(workspace["ckpt"]), "--in", str(long_path),
                 "--out", str(out)]) == 0
    refined = read_motion(out)
    assert refined.frames.shape == (42, 61)
    assert np.all(np.isfinite(refined.frames))


def test_refine_steps_override(tmp_path, workspace):
    src = sorted(workspace["corpus"].glob("*.hmf"))[0]
    out = tmp_path / "steps.hmf"
    assert main(["refine", "--ckpt", str(workspace["ckpt"]), "--in", str(src),
                 "--out", str(out), "--steps", "4"]) == 0
    assert read_motion(out).frames.shape == (14, 61)


def test_refine_normalization_mismatch_exits_three(tmp_path, workspace):
    src = read_motion(sorted(workspace["corpus"].glob("*.hmf"))[0])
    bad = tmp_path / "bad.hmf"
    write_motion(bad, MotionData(frames=src.frames, normalization_id="zscore-v2"))
    assert main(["refine", "--ckpt", str(workspace["ckpt"]), "--in", str(bad),
                 "--out", str(tmp_path / "x.hmf")]) == 3


def test_motionfile_roundtrip_byte_identical(tmp_path, workspace):
    src = sorted(workspace["corpus"].glob("*.hmf"))[0]
    data = read_motion(src)
    copy = tmp_path / "copy.hmf"
    write_motion(copy, data)
    assert copy.read_bytes() == src.read_bytes()


def test_evaluate_self_is_perfect(tmp_path, workspace):
    report = tmp_path / "self.json"
    assert main(["evaluate", "--pred", str(workspace["corpus"]), "--gt", str(workspace["corpus"]),
                 "--report", str(report)]) == 0
    rep = json.loads(report.read_text())
    agg = rep["aggregate"]
    assert agg["mje"] == pytest.approx(0.0, abs=1e-9)
    assert agg["p_mje"] == pytest.approx(0.0, abs=1e-9)
    assert agg["accl"] == pytest.approx(0.0, abs=1e-9)
    assert agg["f5"] == 1.0 and agg["f15"] == 1.0
    assert agg["kin"] == 0.0 and agg["sta"] == 0.0


def test_evaluate_report_schema_and_aggregate_consistency(tmp_path, workspace):
    report = tmp_path / "rep.json"
    csv = tmp_path / "rows.csv"
    assert main(["evaluate", "--pred", str(workspace["corpus"]), "--gt", str(workspace["corpus"]),
                 "--report", str(report), "--csv", str(csv)]) == 0
    rep = json.loads(report.read_text())
    assert set(rep) == {"aggregate", "sequences"}
    keys = {"mje", "p_mje", "p_mve", "accl", "kin", "sta", "f5", "f15"}
    assert keys <= set(rep["aggregate"])
    for row in rep["sequences"]:
        assert keys <= set(row) and "name" in row
    for k in keys:
        mean = np.mean([row[k] for row in rep["sequences"]])
        assert rep["aggregate"][k] == pytest.approx(mean, abs=1e-12)
    lines = csv.read_text().splitlines()
    assert len(lines) == 1 + len(rep["sequences"])


def test_evaluate_unmatched_files_exit_one(tmp_path, workspace, capsys):
    lonely = tmp_path / "pred"
    lonely.mkdir()
    src = sorted(workspace["corpus"].glob("*.hmf"))[0]
    (lonely / "other_name.hmf").write_bytes(src.read_bytes())
    code = main(["evaluate", "--pred", str(lonely), "--gt", str(workspace["corpus"]),
                 "--report", str(tmp_path / "r.json")])
    assert code == 1
    assert "other_name.hmf" in capsys.readouterr().err


def test_evaluate_plots_written(tmp_path, workspace):
    plots = tmp_path / "plots"
    assert main(["evaluate", "--pred", str(workspace["corpus"]), "--gt", str(workspace["corpus"]),
                 "--report", str(tmp_path / "r.json"), "--plots", str(plots)]) == 0
    svgs = list(plots.glob("*.svg"))
    assert any("error" in f.name for f in svgs)
    assert any("states" in f.name for f in svgs)
    assert any("distance" in f.name for f in svgs)
    for f in svgs:
        text = f.read_text()
        assert text.startswith("<svg") and text.rstrip().endswith("</svg>")


def test_evaluate_single_pair_mode(tmp_path, workspace):
    src = sorted(workspace["corpus"].glob("*.hmf"))[0]
    report = tmp_path / "single.json"
    assert main(["evaluate", "--pred", str(src), "--gt", str(src), "--report", str(report)]) == 0
    assert len(json.loads(report.read_text())["sequences"]) == 1


def test_usage_error_exit_code():
    assert main(["refine", "--ckpt"]) == 1
    assert main([]) == 1


def test_evaluate_threaded_matches_serial(tmp_path, workspace, monkeypatch):
    serial = tmp_path / "serial.json"
    threaded = tmp_path / "threaded.json"
    assert main(["evaluate", "--pred", str(workspace["corpus"]), "--gt", str(workspace["corpus"]),
                 "--report", str(serial)]) == 0
    monkeypatch.setenv("HANDRIFT_THREADS", "2")
    assert main(["evaluate", "--pred", str(workspace["corpus"]), "--gt", str(workspace["corpus"]),
                 "--report", str(threaded)]) == 0
    assert serial.read_bytes() == threaded.read_bytes()


def test_evaluate_accl_plot_written(tmp_path, workspace):
    plots = tmp_path / "plots2"
    assert main(["evaluate", "--pred", str(workspace["corpus"]), "--gt", str(workspace["corpus"]),
                 "--report", str(tmp_path / "r2.json"), "--plots", str(plots)]) == 0
    assert any("accl" in f.name for f in plots.glob("*.svg"))
