import json

import numpy as np
import pytest

from maskpipe import (
    BinaryMask,
    FeatureMap,
    PoolSpec,
    Roi,
    ScoreMap,
    build_annotations,
    read_annotation_doc,
    read_mask_pgm,
    roi_align,
    roi_pool,
    write_annotation_doc,
    write_mask_pgm,
    write_tensor,
)
from maskpipe.cli import main


def make_score_map(h=16, w=16, object_box=(1, 13, 2, 13), class_id=1, channels=3):
    scores = np.full((h, w, channels), 0.05, dtype=np.float32)
    scores[:, :, 0] = 0.9
    r0, r1, c0, c1 = object_box
    scores[r0:r1, c0:c1, 0] = 0.05
    scores[r0:r1, c0:c1, class_id] = 0.9
    return ScoreMap(scores)


def object_mask(h=16, w=16, object_box=(1, 13, 2, 13)):
    data = np.zeros((h, w), dtype=bool)
    r0, r1, c0, c1 = object_box
    data[r0:r1, c0:c1] = True
    return BinaryMask(data)


# --- postprocess -------------------------------------------------------------


def test_postprocess_single_map(tmp_path):
    write_tensor(make_score_map(), tmp_path / "img0.mft")
    out = tmp_path / "masks"
    code = main([
        "postprocess", "--scores", str(tmp_path / "img0.mft"),
        "--out-masks", str(out), "--min-area", "10",
    ])
    assert code == 0
    produced = sorted(p.name for p in out.glob("*.pgm"))
    assert produced == ["img0_c1.pgm"]
    assert read_mask_pgm(out / "img0_c1.pgm") == object_mask()


def test_postprocess_filters_small_blobs(tmp_path):
    scores = make_score_map().data.copy()
    scores[14, 14, 0] = 0.05
    scores[14, 14, 2] = 0.9  # single-pixel speckle of another class
    write_tensor(ScoreMap(scores), tmp_path / "img0.mft")
    out = tmp_path / "masks"
    assert main(["postprocess", "--scores", str(tmp_path / "img0.mft"), "--out-masks", str(out)]) == 0
    assert sorted(p.name for p in out.glob("*.pgm")) == ["img0_c1.pgm"]


def test_postprocess_missing_scores_flag(tmp_path, capsys):
    code = main(["postprocess", "--out-masks", str(tmp_path / "m")])
    assert code == 3
    err = capsys.readouterr().err
    assert "usage" in err and "--scores" in err


def test_postprocess_corrupt_input(tmp_path, capsys):
    bad = tmp_path / "broken.mft"
    bad.write_bytes(b"XFT1" + b"\x00" * 16)
    code = main(["postprocess", "--scores", str(bad), "--out-masks", str(tmp_path / "m")])
    assert code == 2
    assert "broken.mft" in capsys.readouterr().err


def test_postprocess_directory_input_sorted(tmp_path):
    for name in ("b.mft", "a.mft"):
        write_tensor(make_score_map(), tmp_path / name)
    out = tmp_path / "masks"
    assert main(["postprocess", "--scores", str(tmp_path), "--out-masks", str(out)]) == 0
    assert sorted(p.name for p in out.glob("*.pgm")) == ["a_c1.pgm", "b_c1.pgm"]


# --- annotate -----------------------------------------------------------------


def _write_annotate_inputs(tmp_path, dims_h=16):
    masks = tmp_path / "masks"
    masks.mkdir()
    write_mask_pgm(object_mask(), masks / "img0_c1.pgm")
    write_mask_pgm(object_mask(object_box=(11, 14, 1, 6)), masks / "img0_c2.pgm")
    (tmp_path / "meta.csv").write_text(f"img0,img0.png,{dims_h},16\n")
    (tmp_path / "cats.csv").write_text("1,cup\n2,bottle\n")
    return masks


def test_annotate_two_masks(tmp_path):
    masks = _write_annotate_inputs(tmp_path)
    out = tmp_path / "ann.json"
    code = main([
        "annotate", "--masks", str(masks), "--image-meta", str(tmp_path / "meta.csv"),
        "--categories", str(tmp_path / "cats.csv"), "--out", str(out),
    ])
    assert code == 0
    doc = read_annotation_doc(out)  # full validation happens here
    assert len(doc.annotations) == 2
    assert [a.category_id for a in doc.annotations] == [1, 2]
    assert {c.name for c in doc.categories} == {"cup", "bottle"}


def test_annotate_dims_mismatch(tmp_path, capsys):
    masks = _write_annotate_inputs(tmp_path, dims_h=20)
    code = main([
        "annotate", "--masks", str(masks), "--image-meta", str(tmp_path / "meta.csv"),
        "--categories", str(tmp_path / "cats.csv"), "--out", str(tmp_path / "ann.json"),
    ])
    assert code == 2


def test_annotate_empty_dir_gives_empty_doc(tmp_path):
    masks = tmp_path / "masks"
    masks.mkdir()
    (tmp_path / "meta.csv").write_text("img0,img0.png,16,16\n")
    (tmp_path / "cats.csv").write_text("1,cup\n")
    out = tmp_path / "ann.json"
    code = main([
        "annotate", "--masks", str(masks), "--image-meta", str(tmp_path / "meta.csv"),
        "--categories", str(tmp_path / "cats.csv"), "--out", str(out),
    ])
    assert code == 0
    doc = read_annotation_doc(out)
    assert doc.annotations == [] and doc.images == []
    assert [c.name for c in doc.categories] == ["cup"]


def test_annotate_bad_meta_file(tmp_path):
    masks = _write_annotate_inputs(tmp_path)
    (tmp_path / "meta.csv").write_text("img0;img0.png;16;16\n")
    code = main([
        "annotate", "--masks", str(masks), "--image-meta", str(tmp_path / "meta.csv"),
        "--categories", str(tmp_path / "cats.csv"), "--out", str(tmp_path / "ann.json"),
    ])
    assert code == 3


def test_annotate_polygons_mode(tmp_path):
    masks = _write_annotate_inputs(tmp_path)
    out = tmp_path / "ann.json"
    code = main([
        "annotate", "--masks", str(masks), "--image-meta", str(tmp_path / "meta.csv"),
        "--categories", str(tmp_path / "cats.csv"), "--out", str(out), "--polygons",
    ])
    assert code == 0
    doc = read_annotation_doc(out)
    assert all(isinstance(a.segmentation, list) for a in doc.annotations)


# --- eval ----------------------------------------------------------------------


def _write_eval_docs(tmp_path):
    from dataclasses import replace

    mask_a = object_mask()
    mask_b = object_mask(object_box=(11, 14, 1, 6))
    gt = build_annotations(
        [(("img0.png", 16, 16), 1, mask_a), (("img0.png", 16, 16), 1, mask_b)],
        categories={1: "cup"},
    )
    write_annotation_doc(gt, tmp_path / "gt.json")
    pred = build_annotations(
        [(("img0.png", 16, 16), 1, mask_a), (("img0.png", 16, 16), 1, mask_b)],
        categories={1: "cup"},
    )
    pred.annotations = [replace(a, score=1.0) for a in pred.annotations]
    write_annotation_doc(pred, tmp_path / "pred.json")


def test_eval_perfect(tmp_path, capsys):
    _write_eval_docs(tmp_path)
    code = main(["eval", "--pred", str(tmp_path / "pred.json"), "--gt", str(tmp_path / "gt.json")])
    assert code == 0
    out = capsys.readouterr().out
    assert "mAP = 1.0000" in out
    assert "cup" in out


def test_eval_empty_predictions(tmp_path, capsys):
    _write_eval_docs(tmp_path)
    doc = read_annotation_doc(tmp_path / "pred.json", require_scores=True)
    doc.annotations = []
    write_annotation_doc(doc, tmp_path / "pred_empty.json")
    code = main(["eval", "--pred", str(tmp_path / "pred_empty.json"), "--gt", str(tmp_path / "gt.json")])
    assert code == 0
    assert "mAP = 0.0000" in capsys.readouterr().out


def test_eval_hand_computed_scenario(tmp_path, capsys):
    from dataclasses import replace

    mask_a = object_mask(object_box=(0, 4, 0, 4))
    mask_b = object_mask(object_box=(8, 12, 8, 12))
    mask_miss = object_mask(object_box=(0, 4, 10, 14))
    gt = build_annotations(
        [(("img0.png", 16, 16), 1, mask_a), (("img0.png", 16, 16), 1, mask_b)],
        categories={1: "cup"},
    )
    write_annotation_doc(gt, tmp_path / "gt.json")
    pred = build_annotations(
        [
            (("img0.png", 16, 16), 1, mask_a),     # TP at score 0.9
            (("img0.png", 16, 16), 1, mask_miss),  # FP at score 0.8
            (("img0.png", 16, 16), 1, mask_b),     # TP at score 0.7
        ],
        categories={1: "cup"},
    )
    pred.annotations = [replace(a, score=s) for a, s in zip(pred.annotations, (0.9, 0.8, 0.7))]
    write_annotation_doc(pred, tmp_path / "pred.json")
    json_out = tmp_path / "result.json"
    code = main([
        "eval", "--pred", str(tmp_path / "pred.json"), "--gt", str(tmp_path / "gt.json"),
        "--json-out", str(json_out),
    ])
    assert code == 0
    assert "mAP = 0.8333" in capsys.readouterr().out
    payload = json.loads(json_out.read_text())
    assert payload["mAP"] == pytest.approx(0.8333, abs=5e-5)
    assert payload["per_class_ap"]["1"] == pytest.approx(0.8333, abs=5e-5)


def test_eval_unparseable_doc(tmp_path, capsys):
    _write_eval_docs(tmp_path)
    (tmp_path / "bad.json").write_text("{")
    code = main(["eval", "--pred", str(tmp_path / "bad.json"), "--gt", str(tmp_path / "gt.json")])
    assert code == 2


# --- roialign ---------------------------------------------------------------------


def test_roialign_constant_map(tmp_path):
    const = ScoreMap(np.full((8, 8, 2), 4.5, dtype=np.float32))
    write_tensor(const, tmp_path / "features.mft")
    (tmp_path / "rois.csv").write_text("1,1.0,1.0,6.5,6.5\n")
    out = tmp_path / "out"
    code = main([
        "roialign", "--features", str(tmp_path / "features.mft"),
        "--rois", str(tmp_path / "rois.csv"), "--output-size", "3x3", "--out", str(out),
    ])
    assert code == 0
    from maskpipe import read_tensor

    pooled = read_tensor(out / "roi0.mft")
    assert np.all(pooled.data == np.float32(4.5))


def test_roialign_reversed_roi_cites_line(tmp_path, capsys):
    write_tensor(ScoreMap(np.ones((8, 8, 1), dtype=np.float32)), tmp_path / "f.mft")
    (tmp_path / "rois.csv").write_text("1,3.0,1.0,1.0,4.0\n")
    code = main([
        "roialign", "--features", str(tmp_path / "f.mft"),
        "--rois", str(tmp_path / "rois.csv"), "--output-size", "2x2",
        "--out", str(tmp_path / "out"),
    ])
    assert code == 2
    assert "line 1" in capsys.readouterr().err


def test_roialign_bad_output_size(tmp_path, capsys):
    write_tensor(ScoreMap(np.ones((8, 8, 1), dtype=np.float32)), tmp_path / "f.mft")
    (tmp_path / "rois.csv").write_text("1,0.0,0.0,4.0,4.0\n")
    code = main([
        "roialign", "--features", str(tmp_path / "f.mft"),
        "--rois", str(tmp_path / "rois.csv"), "--output-size", "7by7",
        "--out", str(tmp_path / "out"),
    ])
    assert code == 3


def test_roialign_matches_kernel_bytes(tmp_path):
    rng = np.random.default_rng(51)
    features = ScoreMap(rng.random((10, 12, 3), dtype=np.float32))
    write_tensor(features, tmp_path / "f.mft")
    rois = [Roi(1.2, 0.8, 8.9, 7.3), Roi(0.0, 0.0, 11.5, 9.5)]
    (tmp_path / "rois.csv").write_text(
        "".join(f"7,{r.x1},{r.y1},{r.x2},{r.y2}\n" for r in rois)
    )
    out = tmp_path / "out"
    code = main([
        "roialign", "--features", str(tmp_path / "f.mft"), "--rois", str(tmp_path / "rois.csv"),
        "--output-size", "4x5", "--pool", "avg", "--samples", "3",
        "--out", str(out), "--compare-roipool",
    ])
    assert code == 0
    spec = PoolSpec(4, 5, 3, "avg")
    fmap = FeatureMap.from_score_map(features)
    for k, roi in enumerate(rois):
        expected = tmp_path / f"expected{k}.mft"
        write_tensor(roi_align(fmap, roi, spec).to_score_map(), expected)
        assert (out / f"roi{k}.mft").read_bytes() == expected.read_bytes()
        expected_pool = tmp_path / f"expected{k}p.mft"
        write_tensor(roi_pool(fmap, roi, spec).to_score_map(), expected_pool)
        assert (out / f"roi{k}_pool.mft").read_bytes() == expected_pool.read_bytes()


def test_roialign_bad_samples_value(tmp_path):
    write_tensor(ScoreMap(np.ones((8, 8, 1), dtype=np.float32)), tmp_path / "f.mft")
    (tmp_path / "rois.csv").write_text("1,0.0,0.0,4.0,4.0\n")
    code = main([
        "roialign", "--features", str(tmp_path / "f.mft"),
        "--rois", str(tmp_path / "rois.csv"), "--output-size", "2x2",
        "--samples", "0", "--out", str(tmp_path / "out"),
    ])
    assert code == 3


def test_roialign_wrong_field_count(tmp_path, capsys):
    write_tensor(ScoreMap(np.ones((8, 8, 1), dtype=np.float32)), tmp_path / "f.mft")
    (tmp_path / "rois.csv").write_text("1,0.0,0.0,4.0\n")
    code = main([
        "roialign", "--features", str(tmp_path / "f.mft"),
        "--rois", str(tmp_path / "rois.csv"), "--output-size", "2x2",
        "--out", str(tmp_path / "out"),
    ])
    assert code == 2
    assert "line 1" in capsys.readouterr().err


def test_postprocess_keep_largest(tmp_path):
    scores = np.full((32, 32, 2), 0.05, dtype=np.float32)
    scores[:, :, 0] = 0.9
    for r0, r1 in ((0, 12), (20, 26)):  # two class-1 blobs, 12x32 and 6x32
        scores[r0:r1, :, 0] = 0.05
        scores[r0:r1, :, 1] = 0.9
    write_tensor(ScoreMap(scores), tmp_path / "img0.mft")
    out = tmp_path / "masks"
    code = main([
        "postprocess", "--scores", str(tmp_path / "img0.mft"), "--out-masks", str(out),
        "--min-area", "0", "--keep-largest", "1",
    ])
    assert code == 0
    mask = read_mask_pgm(out / "img0_c1.pgm")
    assert mask.area == 12 * 32
    assert mask.data[0].all() and not mask.data[20].any()


def test_eval_bbox_mode(tmp_path, capsys):
    _write_eval_docs(tmp_path)
    code = main([
        "eval", "--pred", str(tmp_path / "pred.json"), "--gt", str(tmp_path / "gt.json"),
        "--mode", "bbox", "--iou", "0.75",
    ])
    assert code == 0
    assert "mAP = 1.0000" in capsys.readouterr().out


# --- config / dry-run / determinism -------------------------------------------------


def test_config_file_with_flag_override(tmp_path):
    write_tensor(make_score_map(), tmp_path / "img0.mft")
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        f"scores={tmp_path / 'img0.mft'}\n"
        f"out-masks={tmp_path / 'masks_cfg'}\n"
        "min-area=10000\n"  # would wipe the object...
    )
    out = tmp_path / "masks_flag"
    code = main(["postprocess", "--config", str(cfg), "--min-area", "10", "--out-masks", str(out)])
    assert code == 0  # ...but the explicit flag wins
    assert sorted(p.name for p in out.glob("*.pgm")) == ["img0_c1.pgm"]
    assert not (tmp_path / "masks_cfg").exists()


def test_dry_run_echo_is_a_valid_config(tmp_path, capsys):
    write_tensor(make_score_map(), tmp_path / "img0.mft")
    out = tmp_path / "masks"
    code = main([
        "postprocess", "--scores", str(tmp_path / "img0.mft"), "--out-masks", str(out),
        "--fill-holes", "--dry-run",
    ])
    assert code == 0
    echoed = capsys.readouterr().out
    assert "fill-holes=true" in echoed
    assert not out.exists()  # dry run does no work
    cfg = tmp_path / "echoed.cfg"
    cfg.write_text(echoed)
    assert main(["postprocess", "--config", str(cfg)]) == 0
    assert sorted(p.name for p in out.glob("*.pgm")) == ["img0_c1.pgm"]


def test_config_unknown_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("scores=x\nwibble=1\n")
    code = main(["postprocess", "--config", str(cfg), "--out-masks", str(tmp_path / "m")])
    assert code == 3
    assert "wibble" in capsys.readouterr().err


def test_bad_flag_value_exits_3(capsys):
    code = main(["postprocess", "--scores", "x", "--out-masks", "y", "--connectivity", "5"])
    assert code == 3


def test_outputs_are_deterministic(tmp_path):
    rng = np.random.default_rng(52)
    scores = ScoreMap(
        np.where(
            rng.random((16, 16, 3)) > 0.5, 0.9, 0.05
        ).astype(np.float32)
    )
    write_tensor(scores, tmp_path / "img0.mft")
    outs = []
    for run in ("one", "two"):
        out = tmp_path / run
        assert main([
            "postprocess", "--scores", str(tmp_path / "img0.mft"),
            "--out-masks", str(out), "--min-area", "0",
        ]) == 0
        outs.append({p.name: p.read_bytes() for p in out.glob("*.pgm")})
    assert outs[0] == outs[1]
