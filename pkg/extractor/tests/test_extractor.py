import json

import numpy as np
import pytest

from embextract import backends, blur, cli, emb1
from embextract.errors import ManifestError, RegressorError
from embextract.manifest import read_manifest
from embextract.pipeline import KEYPOINT_DIM, extract

# the downstream consumer; used only to check store conformance
from bodymetric.dataset import load_embeddings


def write_manifest(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))


@pytest.fixture()
def sample(tmp_path):
    """10 readable images plus a manifest covering them."""
    rows = []
    rng = np.random.default_rng(42)
    for i in range(10):
        img = tmp_path / f"img{i:02d}.bin"
        img.write_bytes(rng.bytes(64) + bytes([i]))
        rows.append({"id": f"sample-{i:02d}", "prompt": f"a person doing pose {i}",
                     "image": str(img)})
    manifest = tmp_path / "m.jsonl"
    write_manifest(manifest, rows)
    return manifest, rows


class TestManifest:
    def test_reads_valid_rows(self, sample):
        manifest, rows = sample
        entries = read_manifest(manifest)
        assert [e.id for e in entries] == [r["id"] for r in rows]

    def test_duplicate_id_rejected_before_inference(self, tmp_path):
        manifest = tmp_path / "m.jsonl"
        write_manifest(manifest, [
            {"id": "a", "prompt": "x", "image": "p1"},
            {"id": "a", "prompt": "y", "image": "p2"},
        ])
        with pytest.raises(ManifestError, match="duplicate id"):
            read_manifest(manifest)

    @pytest.mark.parametrize("row", [
        {"id": "a", "prompt": "x"},                              # missing field
        {"id": "a", "prompt": "x", "image": "p", "extra": 1},    # unknown field
        {"id": "", "prompt": "x", "image": "p"},                 # empty value
        {"id": "a", "prompt": 3, "image": "p"},                  # wrong type
    ])
    def test_bad_rows_rejected(self, tmp_path, row):
        manifest = tmp_path / "m.jsonl"
        write_manifest(manifest, [row])
        with pytest.raises(ManifestError):
            read_manifest(manifest)

    def test_empty_manifest_rejected(self, tmp_path):
        manifest = tmp_path / "m.jsonl"
        manifest.write_text("")
        with pytest.raises(ManifestError, match="empty"):
            read_manifest(manifest)


class TestStoreFormat:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        table = {f"k{i}": rng.standard_normal(7).astype(np.float32) for i in range(5)}
        path = tmp_path / "t.emb1"
        emb1.write_store(table, path)
        back = emb1.read_store(path)
        assert sorted(back) == sorted(table)
        for key in table:
            np.testing.assert_array_equal(back[key], table[key])

    def test_write_is_order_independent(self, tmp_path):
        rng = np.random.default_rng(1)
        table = {f"k{i}": rng.standard_normal(4).astype(np.float32) for i in range(6)}
        a, b = tmp_path / "a.emb1", tmp_path / "b.emb1"
        emb1.write_store(table, a)
        emb1.write_store(dict(reversed(list(table.items()))), b)
        assert a.read_bytes() == b.read_bytes()

    def test_mixed_dims_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="dim"):
            emb1.write_store({"a": np.zeros(3), "b": np.zeros(4)}, tmp_path / "x.emb1")


class TestBackends:
    def test_encoder_deterministic_and_unit_norm(self):
        enc = backends.make_encoder("reference", 32)
        v1, v2 = enc.encode_text("hello"), enc.encode_text("hello")
        np.testing.assert_array_equal(v1, v2)
        assert v1.dtype == np.float32 and abs(np.linalg.norm(v1) - 1.0) < 1e-5
        assert not np.array_equal(v1, enc.encode_text("other"))

    def test_regressor_shape_and_failure(self):
        reg = backends.make_regressor("reference")
        kp = reg.keypoints(b"some image bytes")
        assert kp.shape == (KEYPOINT_DIM,) and KEYPOINT_DIM == 435
        with pytest.raises(RegressorError):
            reg.keypoints(b"")

    def test_unknown_backend_names(self):
        with pytest.raises(ValueError):
            backends.make_encoder("nope", 8)
        with pytest.raises(ValueError):
            backends.make_regressor("nope")


class TestBlur:
    def test_blurs_only_inside_box(self):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 256, size=(20, 20, 3)).astype(np.uint8)
        out = blur.box_blur_regions(img, [(5, 5, 15, 15)], radius=4)
        np.testing.assert_array_equal(out[:5], img[:5])
        np.testing.assert_array_equal(out[:, :5], img[:, :5])
        region_in = img[5:15, 5:15].astype(float)
        region_out = out[5:15, 5:15].astype(float)
        assert region_out.std() < region_in.std()

    def test_box_clipped_to_image(self):
        img = np.zeros((8, 8), dtype=np.uint8)
        out = blur.box_blur_regions(img, [(-10, -10, 100, 100)], radius=2)
        assert out.shape == img.shape

    def test_input_not_modified(self):
        img = np.full((10, 10), 7, dtype=np.uint8)
        copy = img.copy()
        blur.box_blur_regions(img, [(0, 0, 10, 10)])
        np.testing.assert_array_equal(img, copy)


class TestPipeline:
    def test_counts_and_dims(self, sample, tmp_path):
        manifest, rows = sample
        result, paths = extract(manifest, tmp_path / "out", dim=16, want_overlay=True)
        for name in ("txt", "img", "kp", "overlay"):
            table = emb1.read_store(paths[name])
            assert sorted(table) == [r["id"] for r in rows]
        assert all(v.shape == (435,) for v in result.kp.values())
        assert result.rejects == []

    def test_unreadable_image_skipped_and_listed(self, tmp_path):
        good = tmp_path / "good.bin"
        good.write_bytes(b"pixels")
        manifest = tmp_path / "m.jsonl"
        write_manifest(manifest, [
            {"id": "good", "prompt": "x", "image": str(good)},
            {"id": "gone", "prompt": "y", "image": str(tmp_path / "missing.bin")},
        ])
        result, paths = extract(manifest, tmp_path / "out", dim=8)
        assert sorted(emb1.read_store(paths["txt"])) == ["good"]
        rejects = [json.loads(l) for l in
                   (tmp_path / "out" / "rejects.jsonl").read_text().splitlines()]
        assert len(rejects) == 1 and rejects[0]["id"] == "gone"
        assert "unreadable" in rejects[0]["reason"]

    def test_regressor_failure_zero_row_plus_reject(self, tmp_path):
        empty = tmp_path / "empty.bin"
        empty.write_bytes(b"")
        manifest = tmp_path / "m.jsonl"
        write_manifest(manifest, [{"id": "e", "prompt": "x", "image": str(empty)}])
        result, paths = extract(manifest, tmp_path / "out", dim=8)
        kp = emb1.read_store(paths["kp"])["e"]
        assert kp.shape == (435,) and not kp.any()
        assert sorted(emb1.read_store(paths["txt"])) == ["e"]
        assert result.rejects[0]["reason"].startswith("regressor")

    def test_sidecar_documents_joint_ordering(self, sample, tmp_path):
        manifest, _ = sample
        extract(manifest, tmp_path / "out", dim=8)
        meta = json.loads((tmp_path / "out" / "kp.meta.json").read_text())
        assert meta["keypoint_dim"] == 435
        assert "joint" in meta["joint_ordering"]
        assert meta["encoder"] == "reference" and meta["dim"] == 8


class TestCli:
    def test_extract_command(self, sample, tmp_path, capsys):
        manifest, _ = sample
        out = tmp_path / "feats"
        assert cli.main(["--manifest", str(manifest), "--outdir", str(out),
                         "--dim", "16"]) == 0
        assert (out / "txt.emb1").exists() and (out / "kp.emb1").exists()

    def test_usage_error(self, capsys):
        assert cli.main([]) == 1

    def test_missing_manifest_is_data_error(self, tmp_path, capsys):
        assert cli.main(["--manifest", str(tmp_path / "nope.jsonl"),
                         "--outdir", str(tmp_path / "o")]) == 2

    def test_duplicate_id_is_data_error(self, tmp_path, capsys):
        manifest = tmp_path / "m.jsonl"
        write_manifest(manifest, [
            {"id": "a", "prompt": "x", "image": "p"},
            {"id": "a", "prompt": "x", "image": "p"},
        ])
        assert cli.main(["--manifest", str(manifest),
                         "--outdir", str(tmp_path / "o")]) == 2


def test_acceptance_extractor_conformance(sample, tmp_path):
    """On a 10-image sample: stores load through the consumer's reader,
    keypoint rows have dim 435, and a rerun is bit-identical."""
    manifest, rows = sample
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    _, paths1 = extract(manifest, out1, dim=16, want_overlay=True)
    _, paths2 = extract(manifest, out2, dim=16, want_overlay=True)

    ok = True
    for name, path in paths1.items():
        table = load_embeddings(path)  # consumer-side validation
        ok = ok and sorted(table) == [r["id"] for r in rows]
    kp = load_embeddings(paths1["kp"])
    ok = ok and all(v.shape == (435,) for v in kp.values())
    for name in paths1:
        ok = ok and (out1 / f"{name}.emb1").read_bytes() == \
            (out2 / f"{name}.emb1").read_bytes()
    ok = ok and (out1 / "kp.meta.json").read_bytes() == \
        (out2 / "kp.meta.json").read_bytes()
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] extractor conformance (10-image sample)")
    assert ok
