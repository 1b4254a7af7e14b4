"""Backbone registry and weight persistence.

Every backbone is a `ClassifierModel` whose body ends in a flat embedding; the
registry declares each body's embedding width E. ResNets use the small-input
stem (3x3 convolution, no max-pool) for 32x32 and 64x64 images.
"""

import hashlib
import logging
from collections.abc import Callable
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn
from torchvision import models as tv_models

from constants import DATASET_MEAN, DATASET_STD, MSG_ERROR_UNKNOWN_BACKBONE, WEIGHTS_FORMAT
from core import ClassifierModel
from errors import ChecksumError, RegistryError, WeightsLoadError
from utils import read_json, sha256_file, write_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    num_classes: int
    input_spec: tuple[int, int, int]
    init_seed: int = 0
    dataset: str = ""

    def identity(self) -> dict:
        spec = asdict(self)
        spec["input_spec"] = list(self.input_spec)
        return spec


# --- Bodies ---
def _toycnn(channels: int) -> nn.Module:
    def block(c_in: int, c_out: int) -> list[nn.Module]:
        return [
            nn.Conv2d(c_in, c_out, 3, padding=1, bias=False),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
        ]

    return nn.Sequential(
        *block(channels, 16),
        nn.MaxPool2d(2),
        *block(16, 32),
        nn.MaxPool2d(2),
        *block(32, 64),
        nn.AdaptiveAvgPool2d(1),
        nn.Flatten(),
    )


def _resnet(factory: Callable[..., nn.Module]) -> Callable[[int], nn.Module]:
    def build_body(channels: int) -> nn.Module:
        net = factory()
        net.conv1 = nn.Conv2d(channels, 64, kernel_size=3, stride=1, padding=1, bias=False)
        net.maxpool = nn.Identity()
        net.fc = nn.Identity()
        return net

    return build_body


def _vgg19(channels: int) -> nn.Module:
    net = tv_models.vgg19_bn()
    if channels != 3:  # noqa: PLR2004
        net.features[0] = nn.Conv2d(channels, 64, kernel_size=3, padding=1)
    return nn.Sequential(net.features, nn.AdaptiveAvgPool2d(1), nn.Flatten())


def _mobilenet_v2(channels: int) -> nn.Module:
    net = tv_models.mobilenet_v2()
    net.features[0][0] = nn.Conv2d(channels, 32, kernel_size=3, stride=1, padding=1, bias=False)
    return nn.Sequential(net.features, nn.AdaptiveAvgPool2d(1), nn.Flatten())


def _efficientnet_b2(channels: int) -> nn.Module:
    net = tv_models.efficientnet_b2()
    net.features[0][0] = nn.Conv2d(channels, 32, kernel_size=3, stride=1, padding=1, bias=False)
    return nn.Sequential(net.features, nn.AdaptiveAvgPool2d(1), nn.Flatten())


class _WideBasic(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int) -> None:
        super().__init__()
        self.bn1 = nn.BatchNorm2d(c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, stride=1, padding=1, bias=False)
        self.shortcut = None
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Conv2d(c_in, c_out, 1, stride=stride, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = torch.relu(self.bn1(x))
        residual = x if self.shortcut is None else self.shortcut(out)
        out = self.conv1(out)
        out = self.conv2(torch.relu(self.bn2(out)))
        return out + residual


def _wide_resnet28_10(channels: int) -> nn.Module:
    depth, widen = 28, 10
    n = (depth - 4) // 6
    widths = [16, 16 * widen, 32 * widen, 64 * widen]
    layers: list[nn.Module] = [nn.Conv2d(channels, widths[0], 3, padding=1, bias=False)]
    c_in = widths[0]
    for stage, stride in zip(widths[1:], (1, 2, 2), strict=True):
        for i in range(n):
            layers.append(_WideBasic(c_in, stage, stride if i == 0 else 1))
            c_in = stage
    layers += [
        nn.BatchNorm2d(c_in),
        nn.ReLU(inplace=True),
        nn.AdaptiveAvgPool2d(1),
        nn.Flatten(),
    ]
    return nn.Sequential(*layers)


# name -> (body builder taking the channel count, embedding width E)
REGISTRY: dict[str, tuple[Callable[[int], nn.Module], int]] = {
    "toycnn": (_toycnn, 64),
    "resnet18": (_resnet(tv_models.resnet18), 512),
    "resnet50": (_resnet(tv_models.resnet50), 2048),
    "resnet101": (_resnet(tv_models.resnet101), 2048),
    "wrn28_10": (_wide_resnet28_10, 640),
    "vgg19": (_vgg19, 512),
    "mobilenetv2": (_mobilenet_v2, 1280),
    "efficientnetb2": (_efficientnet_b2, 1408),
}


def known_backbones() -> list[str]:
    return sorted(REGISTRY)


def embedding_width(name: str) -> int:
    if name not in REGISTRY:
        raise RegistryError(MSG_ERROR_UNKNOWN_BACKBONE.format(name, ", ".join(known_backbones())))
    return REGISTRY[name][1]


def build(spec: BackboneSpec) -> ClassifierModel:
    """Instantiates a backbone; identical spec and seed give identical weights."""
    width = embedding_width(spec.name)
    body_builder, _ = REGISTRY[spec.name]
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(spec.init_seed)
        model = ClassifierModel(
            body=body_builder(spec.input_spec[0]),
            embedding_dim=width,
            num_classes=spec.num_classes,
            input_spec=spec.input_spec,
            mean=DATASET_MEAN.get(spec.dataset),
            std=DATASET_STD.get(spec.dataset),
        )
    model.spec = spec
    return model


# --- Weight Files ---
def weights_hash(model: nn.Module) -> str:
    """Model identity: SHA-256 over the state dict in sorted key order."""
    digest = hashlib.sha256()
    state = model.state_dict()
    for key in sorted(state):
        tensor = state[key].detach().cpu().contiguous()
        digest.update(key.encode())
        digest.update(str(tensor.dtype).encode())
        digest.update(tensor.numpy().tobytes())
    return digest.hexdigest()


def sidecar_path(path: Path) -> Path:
    return Path(path).with_suffix(".json")


def save_weights(model: ClassifierModel, path: Path, run_key: str = "") -> dict:
    """Writes the state dict plus a JSON sidecar with spec, checksum and identity hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().cpu() for k, v in model.state_dict().items()}
    torch.save(state, path)
    spec: BackboneSpec = model.spec
    manifest = {
        "format": WEIGHTS_FORMAT,
        "backbone": spec.identity(),
        "embedding_dim": model.embedding_dim,
        "run_key": run_key,
        "checksum": sha256_file(path),
        "weights_hash": weights_hash(model),
    }
    write_json(sidecar_path(path), manifest)
    return manifest


def read_manifest(path: Path) -> dict:
    sidecar = sidecar_path(path)
    if not Path(path).is_file() or not sidecar.is_file():
        msg = f"missing weights file or sidecar: {path}"
        raise WeightsLoadError(msg)
    manifest = read_json(sidecar)
    if manifest.get("format") != WEIGHTS_FORMAT:
        msg = f"unsupported weights format in {sidecar}"
        raise WeightsLoadError(msg)
    return manifest


def spec_from_manifest(manifest: dict) -> BackboneSpec:
    stored = dict(manifest["backbone"])
    stored["input_spec"] = tuple(stored["input_spec"])
    return BackboneSpec(**stored)


def load_weights(path: Path, spec: BackboneSpec | None = None) -> ClassifierModel:
    """Rebuilds a model from a weight file, verifying its checksum and backbone spec."""
    manifest = read_manifest(path)
    stored = spec_from_manifest(manifest)
    if spec is not None:
        for field in ("name", "num_classes", "input_spec"):
            if getattr(spec, field) != getattr(stored, field):
                msg = (
                    f"{path}: stored {field}={getattr(stored, field)!r} "
                    f"does not match requested {getattr(spec, field)!r}"
                )
                raise WeightsLoadError(msg)
    if sha256_file(path) != manifest["checksum"]:
        msg = f"checksum mismatch for {path}"
        raise ChecksumError(msg)
    model = build(stored)
    state = torch.load(path, map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    return model
