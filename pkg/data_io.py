"""Dataset ingestion and deterministic batching.

Every dataset is held as bytes (N x C x H x W uint8) and served as float32
pixels in [0, 1] (byte / 255), which is the unit attack budgets are stated in.
"""

import logging
from collections.abc import Iterator
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import torch
import torch.nn.functional as F  # noqa: N812
from PIL import Image

from constants import (
    CIFAR_FILES,
    CIFAR_IMAGE_SPEC,
    CIFAR_LABEL_BYTES,
    CIFAR_NUM_CLASSES,
    CIFAR_RECORD_PIXELS,
    MSG_DATASET_LOADED,
    SPLITS,
    SYNTHETIC_NOISE_STD,
    TINY_IMAGENET_IMAGE_SPEC,
    TINY_IMAGENET_VAL_ANNOTATIONS,
    TINY_IMAGENET_WNIDS,
)
from core import ImageBatch, LabelBatch
from errors import ContractViolation, CorruptionError, IngestionError
from utils import derive_seed

if TYPE_CHECKING:
    from config import DatasetConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DatasetHandle:
    name: str
    split: str
    num_classes: int
    image_spec: tuple[int, int, int]
    pixels: torch.Tensor  # uint8, N x C x H x W
    labels: torch.Tensor  # int64, N

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            msg = f"split must be one of {SPLITS}, got '{self.split}'"
            raise ContractViolation(msg)
        if self.pixels.shape[0] == 0:
            msg = f"dataset {self.name}/{self.split} is empty"
            raise ContractViolation(msg)
        if tuple(self.pixels.shape[1:]) != tuple(self.image_spec):
            msg = f"pixel shape {tuple(self.pixels.shape[1:])} != image_spec {self.image_spec}"
            raise ContractViolation(msg)
        if self.labels.shape != (self.pixels.shape[0],):
            msg = "labels must be one per image"
            raise ContractViolation(msg)
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            msg = f"labels of {self.name} must lie in [0, {self.num_classes})"
            raise CorruptionError(msg)

    @property
    def length(self) -> int:
        return int(self.pixels.shape[0])

    def __len__(self) -> int:
        return self.length

    def images(self, index: torch.Tensor | slice | None = None) -> ImageBatch:
        """Pixels of the selected samples as float32 in [0, 1]."""
        selected = self.pixels if index is None else self.pixels[index]
        return selected.float().div_(255.0)


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    shuffle_seed: int = 0
    drop_last: bool = False
    shuffle: bool = True
    augment: bool = False

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            msg = f"batch_size must be >= 1, got {self.batch_size}"
            raise ContractViolation(msg)


def _log_loaded(handle: DatasetHandle) -> DatasetHandle:
    logger.info(
        MSG_DATASET_LOADED.format(
            name=handle.name,
            split=handle.split,
            n=handle.length,
            k=handle.num_classes,
            spec=handle.image_spec,
        )
    )
    return handle


# --- CIFAR Binary Layout ---
def _record_length(variant: str) -> int:
    return CIFAR_LABEL_BYTES[variant] + CIFAR_RECORD_PIXELS


def read_cifar_file(path: Path, variant: str) -> tuple[np.ndarray, np.ndarray]:
    """Parses one file of fixed-length records into (pixels N x 3 x 32 x 32, labels)."""
    if variant not in CIFAR_NUM_CLASSES:
        msg = f"variant must be one of {sorted(CIFAR_NUM_CLASSES)}, got '{variant}'"
        raise ContractViolation(msg)
    path = Path(path)
    if not path.is_file():
        msg = f"missing CIFAR file: {path}"
        raise IngestionError(msg)
    raw = np.fromfile(path, dtype=np.uint8)
    record = _record_length(variant)
    if raw.size == 0:
        msg = f"empty CIFAR file: {path}"
        raise IngestionError(msg)
    if raw.size % record:
        msg = f"truncated CIFAR file: {path} ({raw.size} bytes is not a multiple of {record})"
        raise IngestionError(msg)
    records = raw.reshape(-1, record)
    label_bytes = CIFAR_LABEL_BYTES[variant]
    # CIFAR-100 stores coarse then fine; the fine label is the last label byte
    labels = records[:, label_bytes - 1].astype(np.int64)
    num_classes = CIFAR_NUM_CLASSES[variant]
    if labels.max() >= num_classes:
        bad = int(np.argmax(labels >= num_classes))
        msg = f"corrupt CIFAR file: {path} record {bad} has label {labels[bad]} >= {num_classes}"
        raise CorruptionError(msg)
    pixels = records[:, label_bytes:].reshape(-1, *CIFAR_IMAGE_SPEC)
    return pixels, labels


def load_cifar(path: Path, variant: str, split: str) -> DatasetHandle:
    """Loads CIFAR-10 (`c10`) or CIFAR-100 (`c100`) from the standard binary batch files."""
    if split not in SPLITS:
        msg = f"split must be one of {SPLITS}, got '{split}'"
        raise ContractViolation(msg)
    parts = [read_cifar_file(Path(path) / name, variant) for name in CIFAR_FILES[variant, split]]
    pixels = np.concatenate([p for p, _ in parts])
    labels = np.concatenate([lbl for _, lbl in parts])
    handle = DatasetHandle(
        name="cifar10" if variant == "c10" else "cifar100",
        split=split,
        num_classes=CIFAR_NUM_CLASSES[variant],
        image_spec=CIFAR_IMAGE_SPEC,
        pixels=torch.from_numpy(pixels.copy()),
        labels=torch.from_numpy(labels),
    )
    return _log_loaded(handle)


def write_cifar(handle: DatasetHandle, path: Path, variant: str = "c10") -> None:
    """Serializes a byte-valued 3 x 32 x 32 dataset to the CIFAR binary record layout."""
    if tuple(handle.image_spec) != CIFAR_IMAGE_SPEC:
        msg = f"CIFAR layout needs {CIFAR_IMAGE_SPEC} images, got {handle.image_spec}"
        raise ContractViolation(msg)
    if handle.num_classes > CIFAR_NUM_CLASSES[variant]:
        msg = f"{handle.num_classes} classes do not fit the {variant} layout"
        raise ContractViolation(msg)
    n = handle.length
    records = np.zeros((n, _record_length(variant)), dtype=np.uint8)
    label_bytes = CIFAR_LABEL_BYTES[variant]
    records[:, label_bytes - 1] = handle.labels.numpy().astype(np.uint8)
    records[:, label_bytes:] = handle.pixels.numpy().reshape(n, -1)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records.tofile(path)


# --- Tiny ImageNet ---
def _read_image(path: Path) -> np.ndarray:
    with Image.open(path) as image:
        array = np.asarray(image.convert("RGB"), dtype=np.uint8)
    if array.shape[:2] != TINY_IMAGENET_IMAGE_SPEC[1:]:
        msg = f"image {path} is {array.shape[1]}x{array.shape[0]}, expected 64x64"
        raise IngestionError(msg)
    return array.transpose(2, 0, 1)


def _tiny_imagenet_classes(root: Path) -> list[str]:
    wnids_file = root / TINY_IMAGENET_WNIDS
    if wnids_file.is_file():
        return [line.strip() for line in wnids_file.read_text().splitlines() if line.strip()]
    train_dir = root / "train"
    if not train_dir.is_dir():
        msg = f"missing {wnids_file} and {train_dir}"
        raise IngestionError(msg)
    return sorted(p.name for p in train_dir.iterdir() if p.is_dir())


def load_tiny_imagenet(path: Path, split: str) -> DatasetHandle:
    """Loads Tiny ImageNet at native 64x64; the validation split serves as the test set."""
    root = Path(path)
    classes = _tiny_imagenet_classes(root)
    class_index = {wnid: i for i, wnid in enumerate(classes)}
    samples: list[tuple[Path, int]] = []

    if split == "train":
        train_dir = root / "train"
        for class_dir in sorted(p for p in train_dir.iterdir() if p.is_dir()):
            if class_dir.name not in class_index:
                msg = f"unknown class directory: {class_dir}"
                raise IngestionError(msg)
            image_dir = class_dir / "images" if (class_dir / "images").is_dir() else class_dir
            samples.extend(
                (image, class_index[class_dir.name])
                for image in sorted(image_dir.iterdir())
                if image.is_file() and not image.name.endswith(".txt")
            )
    elif split == "test":
        annotations = root / "val" / TINY_IMAGENET_VAL_ANNOTATIONS
        if not annotations.is_file():
            msg = f"missing validation annotation file: {annotations}"
            raise IngestionError(msg)
        for line in annotations.read_text().splitlines():
            fields = line.split("\t")
            if len(fields) < 2:  # noqa: PLR2004
                continue
            filename, wnid = fields[0], fields[1]
            if wnid not in class_index:
                msg = f"unknown class '{wnid}' in {annotations}"
                raise IngestionError(msg)
            samples.append((root / "val" / "images" / filename, class_index[wnid]))
    else:
        msg = f"split must be one of {SPLITS}, got '{split}'"
        raise ContractViolation(msg)

    if not samples:
        msg = f"no images found for Tiny ImageNet {split} under {root}"
        raise IngestionError(msg)
    for image_path, _ in samples:
        if not image_path.is_file():
            msg = f"missing image file: {image_path}"
            raise IngestionError(msg)

    pixels = np.stack([_read_image(p) for p, _ in samples])
    labels = np.array([label for _, label in samples], dtype=np.int64)
    handle = DatasetHandle(
        name="tiny-imagenet",
        split=split,
        num_classes=len(classes),
        image_spec=TINY_IMAGENET_IMAGE_SPEC,
        pixels=torch.from_numpy(pixels),
        labels=torch.from_numpy(labels),
    )
    return _log_loaded(handle)


# --- Synthetic ---
def make_synthetic(
    n: int,
    k: int,
    spec: tuple[int, int, int],
    seed: int,
    split: str = "train",
    name: str = "synthetic",
) -> DatasetHandle:
    """Class-separable images: a per-class mean pattern plus small Gaussian noise.

    Class patterns depend on `seed` only, so train and test splits drawn with the
    same seed share them; the per-sample noise and label order depend on the split.
    """
    if k < 2 or n < k:  # noqa: PLR2004
        msg = f"make_synthetic needs n >= k >= 2, got n={n}, k={k}"
        raise ContractViolation(msg)
    if split not in SPLITS:
        msg = f"split must be one of {SPLITS}, got '{split}'"
        raise ContractViolation(msg)
    pattern_rng = np.random.default_rng(derive_seed(seed, 0))
    sample_rng = np.random.default_rng(derive_seed(seed, 1 + SPLITS.index(split)))
    patterns = pattern_rng.uniform(0.15, 0.85, size=(k, *spec))
    labels = sample_rng.permutation(np.arange(n) % k)
    values = patterns[labels] + sample_rng.normal(0.0, SYNTHETIC_NOISE_STD, size=(n, *spec))
    pixels = np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    handle = DatasetHandle(
        name=name,
        split=split,
        num_classes=k,
        image_spec=tuple(spec),
        pixels=torch.from_numpy(pixels),
        labels=torch.from_numpy(labels.astype(np.int64)),
    )
    return _log_loaded(handle)


def subset(handle: DatasetHandle, n: int, seed: int) -> DatasetHandle:
    """A deterministic random subset of `n` samples (all of them when n >= N)."""
    if n >= handle.length:
        return handle
    if n < 1:
        msg = f"subset size must be >= 1, got {n}"
        raise ContractViolation(msg)
    rng = np.random.default_rng(derive_seed(seed, handle.length))
    index = torch.from_numpy(np.sort(rng.permutation(handle.length)[:n]))
    return DatasetHandle(
        name=handle.name,
        split=handle.split,
        num_classes=handle.num_classes,
        image_spec=handle.image_spec,
        pixels=handle.pixels[index].clone(),
        labels=handle.labels[index].clone(),
    )


def load_dataset(cfg: "DatasetConfig", split: str) -> DatasetHandle:
    """Loads one split of the configured dataset, subsetted when a size is set."""
    if split not in SPLITS:
        msg = f"split must be one of {SPLITS}, got '{split}'"
        raise ContractViolation(msg)
    if cfg.kind == "synthetic":
        n = cfg.synthetic_train if split == "train" else cfg.synthetic_test
        handle = make_synthetic(n, cfg.num_classes, cfg.image_spec, cfg.seed, split)
    elif cfg.kind == "tiny-imagenet":
        handle = load_tiny_imagenet(Path(cfg.path), split)
    else:
        variant = "c10" if cfg.kind == "cifar10" else "c100"
        handle = load_cifar(Path(cfg.path), variant, split)
    size = cfg.train_size if split == "train" else cfg.test_size
    return handle if size is None else subset(handle, size, cfg.seed)


# --- Batching ---
def epoch_order(length: int, plan: BatchPlan, epoch: int = 1) -> np.ndarray:
    """The sample order of one epoch, a function of (shuffle_seed, epoch) only."""
    if not plan.shuffle:
        return np.arange(length)
    return np.random.default_rng(derive_seed(plan.shuffle_seed, epoch)).permutation(length)


def _augment(images: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """Random 4-pixel padded crop and horizontal flip."""
    b, _, h, w = images.shape
    padded = F.pad(images, (4, 4, 4, 4))
    offsets = rng.integers(0, 9, size=(b, 2))
    flips = rng.random(b) < 0.5  # noqa: PLR2004
    out = torch.empty_like(images)
    for i in range(b):
        dy, dx = offsets[i]
        crop = padded[i, :, dy : dy + h, dx : dx + w]
        out[i] = crop.flip(-1) if flips[i] else crop
    return out


def iterate_batches(
    handle: DatasetHandle, plan: BatchPlan, epoch: int = 1
) -> Iterator[tuple[ImageBatch, LabelBatch]]:
    """Yields every sample once per epoch in the plan's deterministic order."""
    order = torch.from_numpy(epoch_order(handle.length, plan, epoch))
    aug_rng = None
    if plan.augment:
        aug_rng = np.random.default_rng(derive_seed(plan.shuffle_seed, epoch, 1))
    for start in range(0, handle.length, plan.batch_size):
        index = order[start : start + plan.batch_size]
        if plan.drop_last and index.numel() < plan.batch_size:
            break
        images = handle.images(index)
        if aug_rng is not None:
            images = _augment(images, aug_rng)
        yield images, handle.labels[index]


def num_batches(handle: DatasetHandle, plan: BatchPlan) -> int:
    full, rest = divmod(handle.length, plan.batch_size)
    return full if plan.drop_last or not rest else full + 1
