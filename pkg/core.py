"""Domain types shared by every module and the classifier abstraction.

Tensors are used directly as the batch types: the aliases below name what a
tensor holds, and the `check_*` helpers enforce the invariants where an
operation needs them.
"""

import logging
from collections.abc import Sequence

import torch
from torch import nn

from errors import ContractViolation

logger = logging.getLogger(__name__)

# B x C x H x W, pixel units in [0, 1]
type ImageBatch = torch.Tensor
# B integer labels in [0, K)
type LabelBatch = torch.Tensor
# B x E penultimate features
type EmbeddingBatch = torch.Tensor
# B x K unnormalized class scores
type LogitBatch = torch.Tensor


# --- Invariant Checks ---
def check_image_batch(x: ImageBatch, image_spec: Sequence[int] | None = None) -> None:
    if x.dim() != 4 or x.shape[0] < 1:  # noqa: PLR2004
        msg = f"expected a B x C x H x W batch with B >= 1, got shape {tuple(x.shape)}"
        raise ContractViolation(msg)
    if image_spec is not None and tuple(x.shape[1:]) != tuple(image_spec):
        msg = f"image shape {tuple(x.shape[1:])} does not match model input {tuple(image_spec)}"
        raise ContractViolation(msg)


def check_label_batch(y: LabelBatch, batch_size: int, num_classes: int | None = None) -> None:
    if y.dim() != 1 or y.shape[0] != batch_size:
        msg = f"expected {batch_size} labels, got shape {tuple(y.shape)}"
        raise ContractViolation(msg)
    if num_classes is not None and y.numel() and (y.min() < 0 or y.max() >= num_classes):
        msg = f"labels must lie in [0, {num_classes})"
        raise ContractViolation(msg)


def check_inference_mode(model: nn.Module) -> None:
    if model.training:
        msg = "model must be in inference mode (call .eval())"
        raise ContractViolation(msg)


# --- Model Abstraction ---
class Normalize(nn.Module):
    """Per-channel standardization kept inside the model so attacks stay in pixel space."""

    def __init__(self, mean: Sequence[float], std: Sequence[float]) -> None:
        super().__init__()
        self.register_buffer("mean", torch.tensor(mean, dtype=torch.float32).view(1, -1, 1, 1))
        self.register_buffer("std", torch.tensor(std, dtype=torch.float32).view(1, -1, 1, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.mean) / self.std


class ClassifierModel(nn.Module):
    """A classifier that exposes the embedding fed to its final linear layer.

    `body` maps normalized images to a flat B x E embedding and `head` is the
    single linear classification layer, so the embedding returned by
    `forward_full` is exactly the head's input.
    """

    def __init__(
        self,
        body: nn.Module,
        embedding_dim: int,
        num_classes: int,
        input_spec: Sequence[int],
        mean: Sequence[float] | None = None,
        std: Sequence[float] | None = None,
    ) -> None:
        super().__init__()
        channels = input_spec[0]
        self.normalize = Normalize(mean or (0.5,) * channels, std or (0.5,) * channels)
        self.body = body
        self.head = nn.Linear(embedding_dim, num_classes)
        self.embedding_dim = embedding_dim
        self.num_classes = num_classes
        self.input_spec = tuple(input_spec)

    def forward_full(self, x: ImageBatch) -> tuple[EmbeddingBatch, LogitBatch]:
        z = torch.flatten(self.body(self.normalize(x)), 1)
        return z, self.head(z)

    def forward(self, x: ImageBatch) -> LogitBatch:
        return self.forward_full(x)[1]


class InferenceModel:
    """Read-only view of a classifier: no gradients can be requested through it."""

    def __init__(self, model: ClassifierModel) -> None:
        self._model = model.eval()
        self.input_spec = model.input_spec
        self.num_classes = model.num_classes

    @property
    def device(self) -> torch.device:
        return next(self._model.parameters()).device

    def forward_full(self, x: ImageBatch) -> tuple[EmbeddingBatch, LogitBatch]:
        with torch.inference_mode():
            return self._model.forward_full(x.to(self.device))

    def embed(self, x: ImageBatch) -> EmbeddingBatch:
        return self.forward_full(x)[0]

    def predict(self, x: ImageBatch) -> LabelBatch:
        return self.forward_full(x)[1].argmax(dim=1)


# --- Operations ---
def predict_classes(model: ClassifierModel | InferenceModel, x: ImageBatch) -> LabelBatch:
    """Per-sample argmax of the logits; ties resolve to the lowest class index."""
    if isinstance(model, nn.Module):
        check_inference_mode(model)
    check_image_batch(x, model.input_spec)
    if isinstance(model, InferenceModel):
        return model.predict(x).cpu()
    device = next(model.parameters()).device
    with torch.no_grad():
        # torch.argmax returns the first maximal index
        return model(x.to(device)).argmax(dim=1).cpu()


def predict_in_batches(
    model: ClassifierModel | InferenceModel, images: ImageBatch, batch_size: int
) -> LabelBatch:
    parts = [
        predict_classes(model, images[start : start + batch_size])
        for start in range(0, images.shape[0], batch_size)
    ]
    return torch.cat(parts)


def accuracy(pred: LabelBatch, truth: LabelBatch) -> float:
    """Fraction of exact matches."""
    pred, truth = torch.as_tensor(pred), torch.as_tensor(truth)
    if pred.shape != truth.shape:
        msg = f"prediction length {tuple(pred.shape)} != truth length {tuple(truth.shape)}"
        raise ContractViolation(msg)
    if pred.numel() == 0:
        msg = "accuracy of an empty batch is undefined"
        raise ContractViolation(msg)
    return (pred.cpu() == truth.cpu()).double().mean().item()
