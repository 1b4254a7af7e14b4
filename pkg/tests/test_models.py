import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import torch

from errors import ChecksumError, RegistryError, WeightsLoadError
from models import (
    REGISTRY,
    BackboneSpec,
    build,
    embedding_width,
    known_backbones,
    load_weights,
    read_manifest,
    save_weights,
    weights_hash,
)
from tests.helpers import IMAGE_SPEC, toy_spec


class TestRegistry(unittest.TestCase):
    def test_toycnn_shapes(self):
        model = build(toy_spec(num_classes=4)).eval()
        z, logits = model.forward_full(torch.rand(4, *IMAGE_SPEC))
        self.assertEqual(tuple(z.shape), (4, embedding_width("toycnn")))
        self.assertEqual(tuple(logits.shape), (4, 4))

    def test_unknown_backbone(self):
        with self.assertRaises(RegistryError):
            build(BackboneSpec("inceptionv3", 10, (3, 32, 32)))

    def test_known_backbones_sorted(self):
        self.assertEqual(known_backbones(), sorted(REGISTRY))

    def test_embedding_widths(self):
        x = torch.rand(2, 3, 32, 32)
        for name in known_backbones():
            with self.subTest(backbone=name):
                model = build(BackboneSpec(name, 10, (3, 32, 32))).eval()
                with torch.no_grad():
                    z, logits = model.forward_full(x)
                self.assertEqual(z.shape[1], embedding_width(name))
                self.assertEqual(tuple(logits.shape), (2, 10))

    def test_build_is_deterministic(self):
        a, b = build(toy_spec(seed=7)), build(toy_spec(seed=7))
        self.assertEqual(weights_hash(a), weights_hash(b))
        self.assertNotEqual(weights_hash(a), weights_hash(build(toy_spec(seed=8))))

    def test_build_leaves_global_rng_alone(self):
        torch.manual_seed(0)
        expected = torch.rand(3)
        torch.manual_seed(0)
        build(toy_spec(seed=99))
        self.assertTrue(torch.equal(torch.rand(3), expected))


class TestWeightFiles(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "model.pt"
        self.model = build(toy_spec(seed=3)).eval()

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        save_weights(self.model, self.path, "cfg")
        loaded = load_weights(self.path).eval()
        x = torch.rand(5, *IMAGE_SPEC)
        with torch.no_grad():
            self.assertTrue(torch.equal(self.model(x), loaded(x)))
        self.assertEqual(weights_hash(loaded), weights_hash(self.model))
        manifest = read_manifest(self.path)
        self.assertEqual(manifest["run_key"], "cfg")
        self.assertEqual(manifest["weights_hash"], weights_hash(self.model))

    def test_class_count_mismatch(self):
        save_weights(self.model, self.path)
        with self.assertRaises(WeightsLoadError):
            load_weights(self.path, replace(self.model.spec, num_classes=7))

    def test_corrupted_file(self):
        save_weights(self.model, self.path)
        raw = bytearray(self.path.read_bytes())
        raw[-1] ^= 0xFF
        self.path.write_bytes(bytes(raw))
        with self.assertRaises(ChecksumError):
            load_weights(self.path)

    def test_missing_sidecar(self):
        save_weights(self.model, self.path)
        self.path.with_suffix(".json").unlink()
        with self.assertRaises(WeightsLoadError):
            load_weights(self.path)


if __name__ == "__main__":
    unittest.main()
