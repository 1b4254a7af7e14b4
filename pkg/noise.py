import logging
import math
from dataclasses import dataclass

import torch

from constants import NOISE_READINGS
from core import ImageBatch, check_image_batch
from errors import ContractViolation
from utils import derive_seed, torch_generator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian companion-image noise: x_r = x_c + sqrt(mu) * n, n ~ N(0, 1) per element."""

    mu: float
    clamp: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if not math.isfinite(self.mu) or self.mu < 0:
            msg = f"noise mu must be a finite value >= 0, got {self.mu}"
            raise ContractViolation(msg)

    @classmethod
    def from_epsilon(
        cls, epsilon: float, reading: str = "variance", *, clamp: bool = True, seed: int = 0
    ) -> "NoiseSpec":
        """Ties mu to an attack budget: `variance` sets mu = eps, `std` sets sqrt(mu) = eps."""
        if reading not in NOISE_READINGS:
            msg = f"reading must be one of {NOISE_READINGS}, got '{reading}'"
            raise ContractViolation(msg)
        mu = epsilon if reading == "variance" else epsilon**2
        return cls(mu=mu, clamp=clamp, seed=seed)

    @property
    def std(self) -> float:
        return math.sqrt(self.mu)


def noise_generator(spec: NoiseSpec, epoch: int, step: int, run_seed: int = 0) -> torch.Generator:
    """The random stream for one batch, fresh for every (epoch, step)."""
    return torch_generator(derive_seed(run_seed, spec.seed, epoch, step))


def perturb_random(
    x_c: ImageBatch, spec: NoiseSpec, generator: torch.Generator | None = None
) -> ImageBatch:
    """Builds the random companion image; `x_c` is left untouched."""
    check_image_batch(x_c)
    if spec.mu == 0:
        return x_c.clone()
    if generator is None:
        generator = torch_generator(spec.seed)
    noise = torch.randn(x_c.shape, generator=generator, dtype=x_c.dtype)
    x_r = x_c + spec.std * noise.to(x_c.device)
    return x_r.clamp_(0.0, 1.0) if spec.clamp else x_r
