"""CLI contracts: files written, exit codes, determinism, figures."""

import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from segedit.cli import main
from segedit.dataset import ShapeSpec, render_scene
from segedit.editnet import EditNetConfig, GeneratorWeights
from segedit.imagecore import load_image, load_segmap, save_image, save_segmap


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = ShapeSpec("circle", "green", 26, 26, 9)
    image, seg = render_scene((spec,), 1, 56)
    save_image(image, root / "scene.png")
    save_segmap(seg, root / "scene_seg.png")
    GeneratorWeights(EditNetConfig(), seed=0).save(root / "weights.ckpt")
    return root


@pytest.fixture()
def runner():
    return CliRunner()


def test_run_writes_artifacts(workdir, runner, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(
        main,
        [
            "run", "--image", str(workdir / "scene.png"),
            "--text", "the circle is red",
            "--weights", str(workdir / "weights.ckpt"),
            "--out", str(out), "--working-size", "64",
        ],
    )
    assert result.exit_code == 0, result.output
    for name in ("result.png", "seg_in.png", "seg_out.png", "report.json"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    assert report["action"] == "attribute"
    assert report["target"] == "circle"
    assert "score" in report


def test_run_remove_semantics(workdir, runner, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(
        main,
        [
            "run", "--image", str(workdir / "scene.png"),
            "--text", "remove",
            "--weights", str(workdir / "weights.ckpt"),
            "--out", str(out), "--working-size", "64",
        ],
    )
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    assert report["action"] == "remove"
    seg_out = load_segmap(out / "seg_out.png")
    assert report["target_class"] not in seg_out.present_ids()


def test_run_seg_override(workdir, runner, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(
        main,
        [
            "run", "--image", str(workdir / "scene.png"),
            "--text", "the circle is red",
            "--seg", str(workdir / "scene_seg.png"),
            "--weights", str(workdir / "weights.ckpt"),
            "--out", str(out), "--working-size", "64",
        ],
    )
    assert result.exit_code == 0, result.output


def test_run_missing_weights_usage_error(workdir, runner, tmp_path):
    result = runner.invoke(
        main,
        ["run", "--image", str(workdir / "scene.png"), "--text", "x",
         "--out", str(tmp_path / "o")],
    )
    assert result.exit_code == 2
    result = runner.invoke(
        main,
        ["run", "--image", str(workdir / "scene.png"), "--text", "x",
         "--weights", str(workdir / "nope.ckpt"), "--out", str(tmp_path / "o")],
    )
    assert result.exit_code == 2


def test_run_stage_error_nonzero_exit(workdir, runner, tmp_path):
    blank = tmp_path / "blank.png"
    from segedit.imagecore import ImageBuffer

    save_image(ImageBuffer(np.full((40, 40, 3), 0.5, np.float32)), blank)
    result = runner.invoke(
        main,
        ["run", "--image", str(blank), "--text", "the circle is red",
         "--weights", str(workdir / "weights.ckpt"), "--out", str(tmp_path / "o")],
    )
    assert result.exit_code == 1
    assert "detection" in result.output


def test_train_zero_epochs(runner, tmp_path):
    config = tmp_path / "t.json"
    config.write_text(json.dumps({"epochs_main": 0, "epochs_detail": 0}))
    out = tmp_path / "run0"
    result = runner.invoke(
        main, ["train", "--config", str(config), "--out", str(out), "--samples", "4"]
    )
    assert result.exit_code == 0, result.output
    lines = (out / "history.csv").read_text().strip().splitlines()
    assert lines == ["epoch,l_adv,l_per,l_cor,l_damsm,l_reg,l_g,l_d"]


def test_train_bad_config_exit_2(runner, tmp_path):
    config = tmp_path / "bad.json"
    config.write_text('{"learning_rate": -1}')
    result = runner.invoke(
        main, ["train", "--config", str(config), "--out", str(tmp_path / "o")]
    )
    assert result.exit_code == 2


def test_train_deterministic_csv(runner, tmp_path):
    config = tmp_path / "t.json"
    config.write_text(
        json.dumps(
            {
                "seed": 5, "epochs_main": 1, "epochs_detail": 1, "pretrain_epochs": 1,
                "batch_size": 6, "working_size": 32,
            }
        )
    )
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        result = runner.invoke(
            main,
            ["train", "--config", str(config), "--out", str(out),
             "--samples", "10", "--data-seed", "3"],
        )
        assert result.exit_code == 0, result.output
        outputs.append((out / "history.csv").read_text())
        assert (out / "training_curves.png").exists()
        assert (out / "generator.ckpt").exists()
    assert outputs[0] == outputs[1]


def test_eval_report_schema_and_self_fid(workdir, runner, tmp_path):
    out = tmp_path / "report.json"
    args = [
        "eval", "--weights", str(workdir / "weights.ckpt"),
        "--n", "6", "--seed", "1", "--out", str(out), "--working-size", "48",
    ]
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text())
    assert set(report) >= {"is", "fid", "n", "seed"}
    assert report["n"] == 6 and report["seed"] == 1
    assert report["fid_self"] <= 1e-6  # identical-set path
    assert report["is"] >= 1.0 and report["fid"] >= 0.0
    assert out.with_suffix(".png").exists()


def test_synth_writes_dataset(runner, tmp_path):
    out = tmp_path / "data"
    result = runner.invoke(
        main, ["synth", "--n", "5", "--seed", "2", "--size", "48", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert len(list((out / "images").glob("*.png"))) == 5
    assert len(list((out / "segmaps").glob("*.palette.json"))) == 5
    rows = (out / "captions.csv").read_text().strip().splitlines()
    assert rows[0] == "index,caption,target,color"
    assert len(rows) == 6
    assert (out / "contact_sheet.png").exists()
    # round trip one sample
    img = load_image(out / "images" / "00000.png")
    seg = load_segmap(out / "segmaps" / "00000.png")
    assert (img.height, img.width) == (48, 48)
    assert seg.present_ids()
