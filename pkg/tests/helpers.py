"""Desk-scale fixtures shared by the test suites."""

import torch
from torch import nn

from core import ClassifierModel
from data_io import DatasetHandle, make_synthetic
from models import BackboneSpec, build

IMAGE_SPEC = (3, 8, 8)


def toy_spec(num_classes: int = 4, seed: int = 0, image_spec=IMAGE_SPEC) -> BackboneSpec:
    return BackboneSpec("toycnn", num_classes, image_spec, init_seed=seed, dataset="synthetic")


def toy_model(num_classes: int = 4, seed: int = 0, image_spec=IMAGE_SPEC) -> ClassifierModel:
    return build(toy_spec(num_classes, seed, image_spec)).eval()


def toy_data(n: int = 64, k: int = 4, split: str = "train", seed: int = 0, spec=IMAGE_SPEC):
    return make_synthetic(n, k, spec, seed, split)


def constant_dataset(value: int, labels: list[int], k: int, spec=IMAGE_SPEC) -> DatasetHandle:
    n = len(labels)
    return DatasetHandle(
        name="synthetic",
        split="test",
        num_classes=k,
        image_spec=spec,
        pixels=torch.full((n, *spec), value, dtype=torch.uint8),
        labels=torch.tensor(labels, dtype=torch.int64),
    )


def logistic_model(weight: float) -> ClassifierModel:
    """Two-class model on a single pixel: logits (0, w * (2x - 1))."""
    model = ClassifierModel(nn.Flatten(), embedding_dim=1, num_classes=2, input_spec=(1, 1, 1))
    with torch.no_grad():
        model.head.weight.copy_(torch.tensor([[0.0], [weight]]))
        model.head.bias.zero_()
    return model.eval()


class GradientTrap(nn.Module):
    """Fails whenever a forward pass could build an autograd graph."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if torch.is_grad_enabled():
            msg = "gradient requested from an evaluated target"
            raise AssertionError(msg)
        return x
