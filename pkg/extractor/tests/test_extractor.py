"""Extractor contract tests, including the cross-package acceptance check.

The bank roundtrip criterion is verified against the alignment engine's
own reader (`neuralign`), since the NEB1 file format is the interface
between the two packages.
"""

import json

import numpy as np
import pytest
from PIL import Image

from layerbank.backbones import REGISTRY, get_spec
from layerbank.cli import main as cli_main
from layerbank.extract import extract
from layerbank.manifest import build_manifest, scan_layout, write_manifest

from neuralign.data import read_bank, write_bank as primary_write_bank, PairManifest

PUBLISHED_LAYER_COUNTS = {
    "rn50": 4, "rn101": 4, "vit-b-16": 12, "vit-h-14": 32,
    "dinov2": 40, "vit-bigg-14": 48, "eva-02": 64, "internvit": 46,
}
PUBLISHED_PARAMS = {
    "rn50": 38_000_000, "rn101": 56_000_000, "vit-b-16": 86_000_000,
    "vit-h-14": 632_000_000, "dinov2": 1_140_000_000,
    "vit-bigg-14": 1_840_000_000, "eva-02": 4_350_000_000,
    "internvit": 5_540_000_000,
}


def make_images(root, concepts=4, per_concept=2, size=48, constant=None):
    rng = np.random.default_rng(7)
    for c in range(concepts):
        cdir = root / f"concept{c:02d}"
        cdir.mkdir(parents=True)
        for i in range(per_concept):
            if constant is not None:
                pixels = np.full((size, size, 3), constant, dtype=np.uint8)
            else:
                pixels = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
            Image.fromarray(pixels).save(cdir / f"img{i}.png")
    return root


class TestRegistry:
    def test_layer_counts_match_published_table(self):
        for name, layers in PUBLISHED_LAYER_COUNTS.items():
            assert get_spec(name).num_layers == layers

    def test_params_match_published_table(self):
        for name, params in PUBLISHED_PARAMS.items():
            assert get_spec(name).params_count == params

    def test_unknown_backbone(self):
        with pytest.raises(ValueError, match="unknown backbone"):
            get_spec("alexnet")

    def test_default_probes_shallow_vs_deep(self):
        assert get_spec("rn50").default_probes() == [1, 2, 3]
        assert get_spec("vit-b-16").default_probes() == list(range(1, 12))
        deep = get_spec("internvit").default_probes()
        assert len(deep) == 10
        assert all(1 <= l < 46 for l in deep)

    def test_metadata_only_backbones_fail_fast(self, tmp_path):
        images = make_images(tmp_path / "img", concepts=2, per_concept=1)
        _, order = build_manifest(scan_layout(images), 1)
        with pytest.raises(ValueError, match="metadata only"):
            extract(get_spec("internvit"), order, tmp_path / "banks")


class TestManifest:
    def test_splits_disjoint_and_one_test_image_per_concept(self, tmp_path):
        images = make_images(tmp_path / "img", concepts=5, per_concept=3)
        manifest, order = build_manifest(scan_layout(images), 2)
        train_concepts = {im["concept_id"] for im in manifest["images"]
                          if im["split"] == "train"}
        test_images = [im for im in manifest["images"] if im["split"] == "test"]
        assert len(test_images) == 2
        assert len({im["concept_id"] for im in test_images}) == 2
        assert not (train_concepts & {im["concept_id"] for im in test_images})
        assert len(order) == len(manifest["images"])

    def test_manifest_loads_in_primary_engine(self, tmp_path):
        images = make_images(tmp_path / "img", concepts=4, per_concept=2)
        manifest, _ = build_manifest(scan_layout(images), 1)
        path = tmp_path / "manifest.json"
        write_manifest(manifest, path)
        loaded = PairManifest.load(path)  # validates the zero-shot contract
        assert len(loaded.concepts) == 4

    def test_malformed_layout_names_offender(self, tmp_path):
        root = tmp_path / "img"
        (root / "empty_concept").mkdir(parents=True)
        with pytest.raises(ValueError, match="empty_concept"):
            scan_layout(root)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(ValueError, match="not found"):
            scan_layout(tmp_path / "nope")


@pytest.fixture(scope="module")
def rn50_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("rn50")
    images = make_images(tmp / "img", concepts=4, per_concept=2)
    manifest, order = build_manifest(scan_layout(images), 1)
    banks = extract(get_spec("rn50"), order, tmp / "banks", batch_size=4, seed=11)
    return manifest, order, banks


class TestExtractionContract:
    def test_acceptance_banks_roundtrip_through_primary_reader(self, rn50_run, tmp_path):
        _, order, banks = rn50_run
        assert len(banks) == 4  # stages 1..3 + final
        for path in banks:
            bank = read_bank(path)  # primary reader validates all invariants
            rewritten = tmp_path / path.name
            primary_write_bank(bank, rewritten)
            assert rewritten.read_bytes() == path.read_bytes(), (
                f"{path.name}: primary rewrite is not byte-identical"
            )
        print("PASS: extractor banks roundtrip bit-exactly through the primary reader")

    def test_acceptance_item_ids_shared_across_layers(self, rn50_run):
        _, order, banks = rn50_run
        id_lists = [read_bank(p).item_ids for p in banks]
        assert all(ids == id_lists[0] for ids in id_lists[1:])
        assert id_lists[0] == [image_id for image_id, _ in order]
        print("PASS: all layer banks of one backbone share item_ids in manifest order")

    def test_acceptance_declared_layer_counts(self, rn50_run):
        _, _, banks = rn50_run
        for path in banks:
            assert read_bank(path).num_layers == 4
        for name, layers in PUBLISHED_LAYER_COUNTS.items():
            assert get_spec(name).num_layers == layers
        print("PASS: declared L matches the published #Layers for all backbones")

    def test_acceptance_constant_image_deterministic(self, tmp_path):
        embeddings = []
        for run in range(2):
            root = tmp_path / f"run{run}"
            images = make_images(root / "img", concepts=2, per_concept=1,
                                 constant=128)
            _, order = build_manifest(scan_layout(images), 1)
            banks = extract(get_spec("rn50"), order, root / "banks", seed=5)
            embeddings.append([read_bank(p).matrix for p in banks])
        for m1, m2 in zip(*embeddings):
            np.testing.assert_array_equal(m1, m2)
        print("PASS: constant-image extraction is deterministic across runs")

    def test_bank_metadata(self, rn50_run):
        _, _, banks = rn50_run
        mids = [read_bank(p) for p in banks[:-1]]
        final = read_bank(banks[-1])
        assert all(b.pooling_tag == "gap_spatial" for b in mids)
        assert final.pooling_tag == "native_avgpool"
        assert final.layer_index == final.num_layers == 4
        assert [b.layer_index for b in mids] == [1, 2, 3]
        assert final.extra["params_count"] == 38_000_000
        assert final.dim == 2048

    def test_stage_dims(self, rn50_run):
        _, _, banks = rn50_run
        dims = [read_bank(p).dim for p in banks]
        assert dims == [256, 512, 1024, 2048]


class TestViT:
    def test_cls_exclusion_and_dims(self, tmp_path):
        images = make_images(tmp_path / "img", concepts=2, per_concept=1, size=64)
        _, order = build_manifest(scan_layout(images), 1)
        banks = extract(get_spec("vit-b-16"), order, tmp_path / "banks",
                        probes=[3, 6], batch_size=2, seed=3)
        b3, b6, bf = (read_bank(p) for p in banks)
        assert (b3.layer_index, b6.layer_index, bf.layer_index) == (3, 6, 12)
        assert b3.dim == b6.dim == bf.dim == 768
        assert b3.pooling_tag == "mean_patch"
        assert bf.pooling_tag == "cls_final"
        assert b3.relative_depth == pytest.approx(2 / 11)
        # mean over patch tokens differs from mean over all tokens: the
        # class token is genuinely excluded
        assert not np.allclose(b3.matrix, bf.matrix)


class TestCli:
    def test_end_to_end(self, tmp_path, capsys):
        images = make_images(tmp_path / "img", concepts=3, per_concept=2)
        code = cli_main([
            "--backbone", "rn50",
            "--images-dir", str(images),
            "--manifest-out", str(tmp_path / "manifest.json"),
            "--banks-out", str(tmp_path / "banks"),
            "--batch-size", "4", "--test-concepts", "1", "--seed", "2",
        ])
        assert code == 0
        manifest = PairManifest.load(tmp_path / "manifest.json")
        bank = read_bank(tmp_path / "banks" / "bank_layer02.neb")
        assert bank.item_ids == [im.image_id for im in manifest.images]

    def test_layers_flag(self, tmp_path):
        images = make_images(tmp_path / "img", concepts=2, per_concept=1)
        code = cli_main([
            "--backbone", "rn50",
            "--images-dir", str(images),
            "--manifest-out", str(tmp_path / "manifest.json"),
            "--banks-out", str(tmp_path / "banks"),
            "--layers", "2", "--test-concepts", "1",
        ])
        assert code == 0
        names = sorted(p.name for p in (tmp_path / "banks").glob("*.neb"))
        assert names == ["bank_layer02.neb", "bank_layer04.neb"]

    def test_bad_images_dir_exit_code(self, tmp_path, capsys):
        code = cli_main([
            "--backbone", "rn50",
            "--images-dir", str(tmp_path / "missing"),
            "--manifest-out", str(tmp_path / "m.json"),
            "--banks-out", str(tmp_path / "banks"),
        ])
        assert code == 2
        assert "error:" in capsys.readouterr().err
