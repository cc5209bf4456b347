import json
import subprocess
import sys

import numpy as np
import pytest

from pointdet.cli import build_parser, main
from pointdet.config import PipelineConfig, load_config
from pointdet.errors import ConfigError
from pointdet.geometry import Box3D, points_in_box
from pointdet.io import load_boxes, load_manifest, load_pointcloud, save_boxes
from pointdet.pointcloud import PointCloud
from pointdet.render import render_bev_svg


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "ds"
    assert main(["synth", "--frames", "4", "--seed", "11", "--sweeps", "3", "-o", str(root)]) == 0
    return root


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_synth_empty(tmp_path, capsys):
    code, _, _ = run(["synth", "--frames", "0", "-o", tmp_path / "e"], capsys)
    assert code == 0
    assert load_manifest(tmp_path / "e").frames == []


def test_synth_boxes_contain_points(dataset):
    m = load_manifest(dataset)
    assert len(m.frames) == 4
    for fr in m.frames:
        pc = m.load_points(fr)
        for b in m.load_boxes(fr):
            assert points_in_box(pc.xyz, b).any()


def test_voxelize_reports_default_dims(dataset, capsys):
    code, out, _ = run(["voxelize", dataset / "points" / "000000.bin"], capsys)
    assert code == 0
    assert json.loads(out)["grid_dims"] == [1008, 1024, 40]


def test_eval_preds_equal_gts(dataset, tmp_path, capsys):
    gts = load_boxes(dataset / "gts.json")
    save_boxes(tmp_path / "p.json", [g.with_(score=1.0) for g in gts], with_frame=True)
    code, out, _ = run(["eval", tmp_path / "p.json", dataset / "gts.json", "-o", tmp_path / "r.json"], capsys)
    assert code == 0
    assert json.loads((tmp_path / "r.json").read_text())["NDS"] == 1.0
    assert "NDS: 1.0000" in out


def test_eval_requires_scores(dataset, capsys):
    code, _, err = run(["eval", dataset / "gts.json", dataset / "gts.json"], capsys)
    assert code == 2
    rec = json.loads(err.strip().splitlines()[-1])
    assert rec["command"] == "eval" and "score" in rec["message"]


def test_missing_input_is_bad_input(tmp_path, capsys):
    code, _, err = run(["voxelize", tmp_path / "nope.bin"], capsys)
    assert code == 2
    assert json.loads(err)["error"] == "FileNotFoundError"


def test_bad_config_exit_code(dataset, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"nms": {"iou": 0.5}}')
    code, _, err = run(["nms", dataset / "preds.json", "--config", cfg], capsys)
    assert code == 3
    assert json.loads(err)["error"] == "config"
    code, _, _ = run(["nms", dataset / "preds.json", "--iou-in-group", "2"], capsys)
    assert code == 3


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as e:
        main(["nms"])
    assert e.value.code == 2
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "usage"


def test_nms_defaults_in_help_and_output(dataset, capsys):
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices["nms"]
    text = sub.format_help()
    for flag, default in (("--score-thresh", "0.1"), ("--iou-in-group", "0.2"),
                          ("--iou-cross-group", "0.3"), ("--top-k", "1000"), ("--max-per-group", "80")):
        assert flag in text and f"(default: {default})" in text
    code, out, _ = run(["nms", dataset / "preds.json"], capsys)
    assert json.loads(out)["config"] == {"score_thresh": 0.1, "iou_in_group": 0.2, "iou_cross_group": 0.3,
                                         "pre_nms_top_k": 1000, "max_per_group": 80}


def test_every_command_has_help():
    parser = build_parser()
    choices = parser._subparsers._group_actions[0].choices
    assert {"synth", "voxelize", "sample-plan", "gtaug", "augment", "aux-targets", "interp",
            "nms", "eval", "render"} <= set(choices)
    for name, sub in choices.items():
        text = sub.format_help()
        for flag in ("--config", "--seed", "--threads", "--output"):
            assert flag in text, (name, flag)


def test_stage_commands(dataset, tmp_path, capsys):
    pts = dataset / "points" / "000001.bin"
    ann = dataset / "annotations" / "000001.json"
    assert run(["aggregate", dataset, "--frame", "000001", "-o", tmp_path / "agg.bin"], capsys)[0] == 0
    assert load_pointcloud(tmp_path / "agg.bin").count > load_pointcloud(pts).count

    code, out, _ = run(["sample-plan", dataset, "-o", tmp_path / "plan.json"], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "plan.json").read_text())
    assert set(doc) >= {"plan", "histogram_before", "histogram_after", "kl_to_uniform_before",
                        "kl_to_uniform_after"}
    assert min(doc["plan"]["copies"].values()) >= 1

    code, out, _ = run(["gtaug", dataset, "--frame", "000001", "--db", tmp_path / "db",
                        "-o", tmp_path / "aug"], capsys)
    assert code == 0 and (tmp_path / "db" / "summary.json").exists()

    assert run(["augment", pts, ann, "--seed", "3", "-o", tmp_path / "tr"], capsys)[0] == 0
    assert len(load_boxes(tmp_path / "tr" / "boxes.json")) == len(load_boxes(ann))

    assert run(["aux-targets", pts, ann, "-o", tmp_path / "aux.npy"], capsys)[0] == 0
    aux = np.load(tmp_path / "aux.npy")
    assert aux.dtype.names == ("s", "dp", "owner") and len(aux) == load_pointcloud(pts).count

    code, out, _ = run(["interp", pts, "-o", tmp_path / "interp"], capsys)
    assert code == 0 and json.loads(out)["feature_dim"] == 15
    assert np.load(tmp_path / "interp" / "covered.npy").shape[1] == 3

    code, _, _ = run(["render", pts, "--gt", ann, "-o", tmp_path / "f.svg"], capsys)
    assert code == 0 and (tmp_path / "f.svg").read_text().startswith("<svg")


def test_seed_changes_output(dataset, tmp_path, capsys):
    pts = dataset / "points" / "000000.bin"
    ann = dataset / "annotations" / "000000.json"
    run(["augment", pts, ann, "--seed", "1", "-o", tmp_path / "a"], capsys)
    run(["augment", pts, ann, "--seed", "1", "-o", tmp_path / "b"], capsys)
    run(["augment", pts, ann, "--seed", "2", "-o", tmp_path / "c"], capsys)
    a, b, c = ((tmp_path / d / "points.bin").read_bytes() for d in "abc")
    assert a == b and a != c


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "pointdet", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "synth" in r.stdout


def test_config_roundtrip_and_rejection(tmp_path):
    cfg = PipelineConfig()
    doc = cfg.to_dict()
    assert PipelineConfig.from_dict(json.loads(json.dumps(doc))).to_dict() == doc
    assert doc["voxel"]["voxel_size"] == [0.1, 0.1, 0.2]
    assert (doc["loss"]["mu"], doc["loss"]["lam"]) == (2.0, 4.0)
    for bad in ({"extra": 1}, {"voxel": {"size": 1}}, {"seed": -1}, {"groups": [["car"]]},
                {"nms": {"iou_in_group": 3}}):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(bad)
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_render_empty_and_single_box():
    svg = render_bev_svg(None)
    assert 'id="axes"' in svg and "<polygon" not in svg
    svg = render_bev_svg(PointCloud.empty(), [Box3D(0, 0, 0, 4, 2, 2)])
    line = [s for s in svg.splitlines() if 'class="heading"' in s][0]
    # extent (-55, 55) at 8 px/m plus a 20 px margin: origin at 460, front edge (+2 m in x) at 476
    assert 'x1="460.00" y1="460.00" x2="476.00" y2="460.00"' in line
    assert render_bev_svg(None, [Box3D(1, 2, 0, 4, 2, 2, 0.3)]) == render_bev_svg(None, [Box3D(1, 2, 0, 4, 2, 2, 0.3)])
