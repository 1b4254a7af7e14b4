import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from config import DatasetConfig
from data_io import (
    BatchPlan,
    iterate_batches,
    load_cifar,
    load_dataset,
    load_tiny_imagenet,
    make_synthetic,
    read_cifar_file,
    subset,
    write_cifar,
)
from errors import ContractViolation, CorruptionError, IngestionError
from tests.helpers import toy_data


def cifar_blob(labels: list[int], pixel: int, label_bytes: int = 1) -> bytes:
    blob = bytearray()
    for label in labels:
        blob += bytes([0] * (label_bytes - 1) + [label]) + bytes([pixel] * 3072)
    return bytes(blob)


class TestCifar(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_two_record_blob(self):
        (self.root / "test_batch.bin").write_bytes(cifar_blob([3, 7], 128))
        handle = load_cifar(self.root, "c10", "test")
        self.assertEqual(handle.length, 2)
        self.assertEqual(handle.labels.tolist(), [3, 7])
        self.assertEqual(handle.image_spec, (3, 32, 32))
        self.assertTrue(torch.all(handle.images() == 128 / 255))

    def test_cifar100_uses_fine_label(self):
        blob = bytearray(cifar_blob([42], 0, label_bytes=2))
        blob[0] = 9  # coarse label
        (self.root / "test.bin").write_bytes(bytes(blob))
        handle = load_cifar(self.root, "c100", "test")
        self.assertEqual(handle.labels.tolist(), [42])
        self.assertEqual(handle.num_classes, 100)

    def test_empty_file(self):
        (self.root / "test_batch.bin").write_bytes(b"")
        with self.assertRaises(IngestionError):
            load_cifar(self.root, "c10", "test")

    def test_missing_file(self):
        with self.assertRaises(IngestionError):
            load_cifar(self.root, "c10", "test")

    def test_truncated_file(self):
        (self.root / "test_batch.bin").write_bytes(cifar_blob([1], 5)[:-10])
        with self.assertRaises(IngestionError):
            read_cifar_file(self.root / "test_batch.bin", "c10")

    def test_label_out_of_range(self):
        (self.root / "test_batch.bin").write_bytes(cifar_blob([12], 5))
        with self.assertRaises(CorruptionError):
            load_cifar(self.root, "c10", "test")

    def test_write_then_load_round_trip(self):
        handle = make_synthetic(20, 10, (3, 32, 32), seed=3, split="test")
        write_cifar(handle, self.root / "test_batch.bin")
        loaded = load_cifar(self.root, "c10", "test")
        self.assertTrue(torch.equal(loaded.pixels, handle.pixels))
        self.assertTrue(torch.equal(loaded.labels, handle.labels))

    def test_train_split_reads_five_files(self):
        for i in range(1, 6):
            (self.root / f"data_batch_{i}.bin").write_bytes(cifar_blob([i], i))
        handle = load_cifar(self.root, "c10", "train")
        self.assertEqual(handle.labels.tolist(), [1, 2, 3, 4, 5])


class TestTinyImageNet(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        wnids = ["n001", "n002"]
        (self.root / "wnids.txt").write_text("\n".join(wnids) + "\n")
        val_lines = []
        for c, wnid in enumerate(wnids):
            images = self.root / "train" / wnid / "images"
            images.mkdir(parents=True)
            for i in range(3):
                self._image(images / f"{wnid}_{i}.png", 40 * c + i)
            name = f"val_{c}.png"
            self._image(self.root / "val" / "images" / name, 200 + c)
            val_lines.append(f"{name}\t{wnid}\t0\t0\t63\t63")
        (self.root / "val" / "val_annotations.txt").write_text("\n".join(val_lines) + "\n")

    def tearDown(self):
        self.tmp.cleanup()

    @staticmethod
    def _image(path: Path, value: int, size: int = 64):
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.full((size, size, 3), value, dtype=np.uint8)).save(path)

    def test_fixture_train(self):
        handle = load_tiny_imagenet(self.root, "train")
        self.assertEqual(handle.length, 6)
        self.assertEqual(handle.num_classes, 2)
        self.assertEqual(handle.image_spec, (3, 64, 64))
        self.assertEqual(sorted(handle.labels.tolist()), [0, 0, 0, 1, 1, 1])

    def test_fixture_test_split(self):
        handle = load_tiny_imagenet(self.root, "test")
        self.assertEqual(handle.labels.tolist(), [0, 1])
        self.assertEqual(int(handle.pixels[1, 0, 0, 0]), 201)

    def test_missing_annotations(self):
        (self.root / "val" / "val_annotations.txt").unlink()
        with self.assertRaises(IngestionError):
            load_tiny_imagenet(self.root, "test")

    def test_wrong_image_size(self):
        self._image(self.root / "train" / "n001" / "images" / "n001_0.png", 1, size=32)
        with self.assertRaises(IngestionError):
            load_tiny_imagenet(self.root, "train")


class TestSynthetic(unittest.TestCase):
    def test_deterministic(self):
        a = make_synthetic(100, 10, (3, 8, 8), seed=0)
        b = make_synthetic(100, 10, (3, 8, 8), seed=0)
        self.assertTrue(torch.equal(a.pixels, b.pixels))
        self.assertTrue(torch.equal(a.labels, b.labels))

    def test_every_class_once(self):
        handle = make_synthetic(10, 10, (3, 8, 8), seed=0)
        self.assertEqual(sorted(handle.labels.tolist()), list(range(10)))

    def test_too_few_samples(self):
        with self.assertRaises(ContractViolation):
            make_synthetic(4, 10, (3, 8, 8), seed=0)

    def test_splits_differ(self):
        train = make_synthetic(40, 4, (3, 8, 8), seed=0, split="train")
        test = make_synthetic(40, 4, (3, 8, 8), seed=0, split="test")
        self.assertFalse(torch.equal(train.pixels, test.pixels))

    def test_pixel_range(self):
        images = make_synthetic(40, 4, (3, 8, 8), seed=1).images()
        self.assertGreaterEqual(float(images.min()), 0.0)
        self.assertLessEqual(float(images.max()), 1.0)


class TestBatching(unittest.TestCase):
    def test_batch_sizes(self):
        handle = toy_data(10, 2)
        sizes = [y.numel() for _, y in iterate_batches(handle, BatchPlan(4))]
        self.assertEqual(sizes, [4, 4, 2])
        sizes = [y.numel() for _, y in iterate_batches(handle, BatchPlan(4, drop_last=True))]
        self.assertEqual(sizes, [4, 4])

    def test_same_seed_same_order(self):
        handle = toy_data(30, 3)
        plan = BatchPlan(8, shuffle_seed=5)
        first = torch.cat([y for _, y in iterate_batches(handle, plan, epoch=2)])
        second = torch.cat([y for _, y in iterate_batches(handle, plan, epoch=2)])
        self.assertTrue(torch.equal(first, second))

    def test_every_sample_once_per_epoch(self):
        handle = toy_data(30, 3)
        seen = torch.cat([x for x, _ in iterate_batches(handle, BatchPlan(7, shuffle_seed=1))])
        self.assertEqual(seen.shape[0], 30)
        original = {tuple(row.tolist()) for row in handle.images().flatten(1)}
        self.assertEqual({tuple(row.tolist()) for row in seen.flatten(1)}, original)

    def test_augmentation_keeps_shape(self):
        handle = toy_data(16, 2)
        x, _ = next(iter(iterate_batches(handle, BatchPlan(16, augment=True))))
        self.assertEqual(tuple(x.shape), (16, 3, 8, 8))


class TestSubsetAndDispatch(unittest.TestCase):
    def test_subset_is_deterministic(self):
        handle = toy_data(50, 5)
        a, b = subset(handle, 20, seed=1), subset(handle, 20, seed=1)
        self.assertEqual(a.length, 20)
        self.assertTrue(torch.equal(a.pixels, b.pixels))

    def test_subset_larger_than_dataset(self):
        handle = toy_data(10, 2)
        self.assertIs(subset(handle, 100, seed=0), handle)

    def test_load_dataset_synthetic(self):
        cfg = DatasetConfig(
            kind="synthetic",
            image_spec=(3, 8, 8),
            num_classes=3,
            synthetic_train=30,
            synthetic_test=12,
            test_size=6,
        )
        self.assertEqual(load_dataset(cfg, "train").length, 30)
        test = load_dataset(cfg, "test")
        self.assertEqual((test.length, test.split), (6, "test"))


if __name__ == "__main__":
    unittest.main()
