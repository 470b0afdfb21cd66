import json

import numpy as np
import pytest
import torch
from probefuse import read_bank  # the consumer this package feeds

from feature_exporter import (ExportError, ExportSpec, TAP_NAMES, cli,
                              export_bank, list_images, load_backbone,
                              write_fbnk)

from conftest import make_image_folder


def spec_for(root, out, cache, **kw):
    base = dict(image_root=str(root), output_path=str(out),
                weights_cache=str(cache), head_classes=2, seed=0)
    base.update(kw)
    return ExportSpec(**base)


# ---------------------------------------------------------------- export

def test_export_report_and_bank_contents(toy_folder, cache_dir, tmp_path):
    report = export_bank(spec_for(toy_folder, tmp_path / "toy.fbnk", cache_dir))
    assert report["n_images"] == 20
    assert report["n_exported"] == 20
    assert report["n_skipped"] == 0
    assert report["n_classes"] == 2
    assert report["tap_dims"] == [64, 64, 128, 256, 512, 512]
    bank = read_bank(tmp_path / "toy.fbnk")
    assert bank.tap_names == TAP_NAMES
    assert bank.n_samples == 20
    assert [f.shape[1] for f in bank.features] == report["tap_dims"]
    assert np.array_equal(np.sort(np.unique(bank.labels)), [0, 1])
    assert all(np.isfinite(f).all() for f in bank.features)


def test_row_order_is_lexicographic_and_indexed(toy_folder, cache_dir, tmp_path):
    export_bank(spec_for(toy_folder, tmp_path / "toy.fbnk", cache_dir))
    index = json.loads((tmp_path / "index.json").read_text())
    paths = [img["path"] for img in index["images"]]
    assert paths == sorted(paths)
    assert index["classes"] == ["cat", "dog"]
    assert index["skipped"] == []
    bank = read_bank(tmp_path / "toy.fbnk")
    assert [int(v) for v in bank.labels] == [img["label"]
                                             for img in index["images"]]
    for img in index["images"]:
        cls = img["path"].split("/")[0]
        assert index["classes"][img["label"]] == cls


def test_reexport_is_byte_identical(toy_folder, cache_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    export_bank(spec_for(toy_folder, a / "toy.fbnk", cache_dir))
    export_bank(spec_for(toy_folder, b / "toy.fbnk", cache_dir))
    assert (a / "toy.fbnk").read_bytes() == (b / "toy.fbnk").read_bytes()
    assert (a / "index.json").read_bytes() == (b / "index.json").read_bytes()


def test_output_parent_directory_is_created(toy_folder, cache_dir, tmp_path):
    out = tmp_path / "deep" / "nested" / "toy.fbnk"
    export_bank(spec_for(toy_folder, out, cache_dir))
    assert out.exists()
    assert (out.parent / "index.json").exists()
    assert read_bank(out).n_samples == 20


def test_unreadable_image_is_skipped_and_counted(cache_dir, tmp_path):
    root = make_image_folder(tmp_path / "imgs", n_per_class=3)
    (root / "cat" / "zz_broken.png").write_bytes(b"not an image at all")
    with pytest.warns(UserWarning, match="skipping unreadable image"):
        report = export_bank(spec_for(root, tmp_path / "toy.fbnk", cache_dir))
    assert report["n_images"] == 7
    assert report["n_exported"] == 6
    assert report["n_skipped"] == 1
    assert read_bank(tmp_path / "toy.fbnk").n_samples == 6
    index = json.loads((tmp_path / "index.json").read_text())
    assert index["skipped"] == ["cat/zz_broken.png"]
    assert len(index["images"]) == 6


def test_pooled_tap_is_global_average_of_stage4(toy_folder, cache_dir, tmp_path):
    export_bank(spec_for(toy_folder, tmp_path / "toy.fbnk", cache_dir))
    bank = read_bank(tmp_path / "toy.fbnk")
    assert np.allclose(bank.features[5], bank.features[4], atol=1e-5)


def test_head_width_gates_original_predictions(toy_folder, cache_dir, tmp_path):
    report = export_bank(spec_for(toy_folder, tmp_path / "with.fbnk", cache_dir))
    assert report["has_original_preds"]
    bank = read_bank(tmp_path / "with.fbnk")
    assert bank.original_preds.shape == (20, 2)
    assert np.abs(bank.original_preds.sum(axis=1) - 1.0).max() < 1e-5

    report = export_bank(spec_for(toy_folder, tmp_path / "without.fbnk",
                                  cache_dir, head_classes=None))
    assert not report["has_original_preds"]
    assert read_bank(tmp_path / "without.fbnk").original_preds is None


def test_spec_validation(toy_folder, cache_dir, tmp_path):
    with pytest.raises(ExportError, match="only 'global-average'"):
        export_bank(spec_for(toy_folder, tmp_path / "x.fbnk", cache_dir,
                             pool="flatten"))
    with pytest.raises(ExportError, match="exactly 6 slots"):
        export_bank(spec_for(toy_folder, tmp_path / "x.fbnk", cache_dir,
                             tap_names=["a", "b", "c"]))


def test_unusable_image_roots(cache_dir, tmp_path):
    single = tmp_path / "single"
    (single / "only").mkdir(parents=True)
    with pytest.raises(ExportError, match="at least two class folders"):
        export_bank(spec_for(single, tmp_path / "x.fbnk", cache_dir))
    empty = tmp_path / "empty"
    (empty / "cat").mkdir(parents=True)
    (empty / "dog").mkdir()
    with pytest.raises(ExportError, match="no images"):
        export_bank(spec_for(empty, tmp_path / "x.fbnk", cache_dir))


def test_list_images_sorts_across_classes(tmp_path):
    root = make_image_folder(tmp_path / "imgs", n_per_class=2,
                             classes=("b_cls", "a_cls"))
    classes, entries = list_images(root)
    assert classes == ["a_cls", "b_cls"]
    assert [e[0] for e in entries] == sorted(e[0] for e in entries)
    assert [e[1] for e in entries] == [0, 0, 1, 1]


# ---------------------------------------------------------------- backbone

def test_seeded_backbone_is_cached_and_stable(cache_dir):
    m1, origin1 = load_backbone(str(cache_dir), num_classes=2, seed=0)
    m2, origin2 = load_backbone(str(cache_dir), num_classes=2, seed=0)
    assert origin1.startswith(("seeded", "cached"))
    assert origin2.startswith("cached")
    for p1, p2 in zip(m1.parameters(), m2.parameters()):
        assert torch.equal(p1, p2)
    m3, _ = load_backbone(str(cache_dir), num_classes=2, seed=1)
    assert not torch.equal(m3.conv1.weight, m1.conv1.weight)


# ---------------------------------------------------------------- container

def test_fbnk_writer_round_trips_through_the_consumer(tmp_path):
    rng = np.random.default_rng(4)
    feats = [rng.standard_normal((5, 3)).astype(np.float32),
             rng.standard_normal((5, 7)).astype(np.float32)]
    labels = np.array([0, 1, 1, 0, 2], dtype=np.uint16)
    preds = rng.dirichlet(np.ones(3), size=5).astype(np.float32)
    preds /= preds.sum(axis=1, keepdims=True)
    path = tmp_path / "mini.fbnk"
    write_fbnk(path, feats, ["low", "high"], labels, 3, original_preds=preds)
    bank = read_bank(path)
    assert bank.tap_names == ["low", "high"]
    assert all(np.array_equal(a, b) for a, b in zip(bank.features, feats))
    assert np.array_equal(bank.labels, labels)
    assert np.array_equal(bank.original_preds, preds)
    assert bank.n_classes == 3


# ---------------------------------------------------------------- cli

def test_cli_exports_and_reports(toy_folder, cache_dir, tmp_path, capsys):
    rc = cli.main(["--image-root", str(toy_folder),
                   "--out", str(tmp_path / "toy.fbnk"),
                   "--weights-cache", str(cache_dir),
                   "--head-classes", "2", "--batch-size", "8"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n_exported"] == 20
    assert read_bank(tmp_path / "toy.fbnk").n_samples == 20
    assert (tmp_path / "index.json").exists()


def test_cli_rejects_bad_inputs(tmp_path, capsys):
    rc = cli.main(["--image-root", str(tmp_path / "missing"),
                   "--out", str(tmp_path / "x.fbnk")])
    assert rc == 2
    assert "feature-export:" in capsys.readouterr().err
    rc = cli.main(["--image-root", str(tmp_path), "--out",
                   str(tmp_path / "x.fbnk"), "--pool", "max"])
    assert rc == 2
