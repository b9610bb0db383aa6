import json
import os
import subprocess

import numpy as np
import pytest

import refdet


def test_iou_and_box():
    a = refdet.Box(0, 0, 10, 10)
    b = refdet.Box(5, 0, 15, 10)
    assert refdet.iou(a, b) == pytest.approx(50.0 / 150.0)
    assert a.area() == 100.0
    assert a.width() == 10.0
    # 4-sequences convert implicitly.
    assert refdet.iou([0, 0, 10, 10], (0, 0, 10, 10)) == 1.0


def test_nms_keeps_highest_and_suppresses_overlap():
    boxes = [[0, 0, 10, 10], [1, 1, 11, 11], [50, 50, 60, 60]]
    kept = refdet.nms(boxes, [0.8, 0.9, 0.5], 0.5)
    assert kept == [1, 2]


def test_delta_round_trip():
    anchor = refdet.Box(10, 10, 30, 40)
    target = refdet.Box(12, 8, 36, 44)
    d = refdet.encode_deltas(anchor, target)
    back = refdet.decode_deltas(anchor, d)
    for got, want in [(back.x1, 12), (back.y1, 8), (back.x2, 36), (back.y2, 44)]:
        assert got == pytest.approx(want, abs=1e-4)


def test_context_box_scales_about_center():
    c = refdet.context_box(refdet.Box(10, 10, 20, 20), 1.5, 100, 100)
    assert (c.x1, c.y1, c.x2, c.y2) == (7.5, 7.5, 22.5, 22.5)


def test_map_level_clamps():
    assert refdet.map_level(10, 10) == 2
    assert refdet.map_level(56, 56) == 2
    assert refdet.map_level(448, 448) == 3
    assert refdet.map_level(10000, 10000) == 5
    with pytest.raises(Exception):
        refdet.map_level(0, 10)


def test_normalization_ops():
    img = np.full((8, 8), 127.0, dtype=np.float32)
    out = refdet.mean_pre(img, 127.0, 50.0)
    assert out.shape == (8, 8)
    assert np.allclose(out, 0.0)

    tmpl = np.full((8, 8), 107.0, dtype=np.float32)
    diff = refdet.tr_pre(img, tmpl, 50.0)
    assert np.allclose(diff, 20.0 / 100.0)


def test_map50_perfect_and_miss():
    gts = [refdet.GtBox(0, refdet.Box(0, 0, 10, 10), 1)]
    hit = [refdet.Detection(0, refdet.Box(0, 0, 10, 10), 1, 0.9)]
    report = refdet.map50(hit, gts, ["scratch"])
    assert report.map == pytest.approx(1.0)
    assert report.per_category_ap[0] == pytest.approx(1.0)
    assert "scratch" in report.pretty()
    parsed = json.loads(report.to_json())
    assert parsed["map"] == pytest.approx(1.0)

    off = [refdet.Detection(0, refdet.Box(40, 40, 50, 50), 1, 0.9)]
    assert refdet.map50(off, gts, ["scratch"]).map == pytest.approx(0.0)

    ap = refdet.average_precision(hit, gts, 0.5, False)
    assert ap == pytest.approx(1.0)


def test_png_round_trip(tmp_path):
    img = np.arange(64, dtype=np.float32).reshape(8, 8) * 3.0
    path = str(tmp_path / "x.png")
    refdet.write_png(path, img)
    back = refdet.read_png(path)
    assert back.shape == (8, 8)
    assert np.array_equal(back, img)


def test_generate_dataset(tmp_path):
    gen_cfg = {
        "image_size": 64,
        "count_train": 6,
        "count_test": 3,
        "normal_fraction": 0.34,
        "noise_sigma": 1.0,
        "seed": 77,
    }
    gen_path = tmp_path / "gen.json"
    gen_path.write_text(json.dumps(gen_cfg))
    info = refdet.synth_generate(str(gen_path), str(tmp_path / "data"))
    assert info["num_train"] == 6
    assert info["num_test"] == 3
    assert info["categories"] == ["scratch", "blob", "stain"]
    assert info["pixel_std"] > 0.0

    # Deterministic for a fixed config.
    info2 = refdet.synth_generate(str(gen_path), str(tmp_path / "data2"))
    assert info2["config_hash"] == info["config_hash"]
    assert info2["pixel_mean"] == info["pixel_mean"]


@pytest.mark.skipif("REFDET_CLI" not in os.environ, reason="CLI binary not available")
def test_train_then_predict_round_trip(tmp_path):
    gen_cfg = {
        "image_size": 64,
        "count_train": 6,
        "count_test": 2,
        "normal_fraction": 0.34,
        "noise_sigma": 1.0,
        "seed": 5,
    }
    gen_path = tmp_path / "gen.json"
    gen_path.write_text(json.dumps(gen_cfg))
    data_root = tmp_path / "data"
    refdet.synth_generate(str(gen_path), str(data_root))

    run_dir = tmp_path / "run"
    cfg = {
        "data": {
            "root": str(data_root),
            "train_min_size_lo": 64,
            "train_min_size_hi": 64,
            "test_min_size": 64,
            "max_size": 128,
        },
        "model": {
            "stage_channels": [4, 8, 12, 16],
            "blocks_per_stage": 1,
            "fpn_channels": 8,
            "num_classes": 3,
            "fc_dim": 16,
            "ptg_hidden": 8,
        },
        "train": {"epochs": 1, "images_per_step": 2, "log_every": 1, "seed": 3},
        "eval": {"score_thresh": 0.01},
        "out_dir": str(run_dir),
    }
    cfg_path = tmp_path / "train.json"
    cfg_path.write_text(json.dumps(cfg))
    subprocess.run(
        [os.environ["REFDET_CLI"], "train", "--config", str(cfg_path)],
        check=True,
        capture_output=True,
    )

    ckpt = run_dir / "checkpoints" / "final.ckpt"
    assert ckpt.is_file()
    p = refdet.Predictor(str(run_dir / "config.resolved"), str(ckpt))
    assert p.tr_mode == "none"
    assert len(p.fingerprint) > 0

    image_path = next((data_root / "images").glob("*.png"))
    dets = p.predict_path(str(image_path))
    arr = refdet.read_png(str(image_path))
    again = p.predict(arr)
    assert len(dets) == len(again)
    for a, b in zip(dets, again):
        assert a.score == b.score
        assert a.category == b.category
        assert (a.box.x1, a.box.y1, a.box.x2, a.box.y2) == (b.box.x1, b.box.y1, b.box.x2, b.box.y2)
    for d in dets:
        assert 1 <= d.category <= 3
        assert 0.0 <= d.score <= 1.0
        assert d.box.x2 >= d.box.x1 and d.box.y2 >= d.box.y1
