"""LISArD loss mathematics.

The training objective combines two classification losses (clean and random
companion images) with a redundancy-reduction term on the cross-correlation
matrix of their embeddings:

    L = alpha * (L_C + L_R) + (1 - alpha) * L_S / tau

with alpha ramped once per epoch from alpha0 towards 1.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F  # noqa: N812

from constants import (
    CLASS_TERMS,
    DEFAULT_ALPHA0,
    DEFAULT_DELTA,
    DEFAULT_LAMBDA,
    DEFAULT_TAU,
    DENOMINATOR_GUARD,
)
from core import EmbeddingBatch, LabelBatch, LogitBatch
from errors import ContractViolation


@dataclass(frozen=True)
class LossWeights:
    lambda_: float = DEFAULT_LAMBDA
    tau: float = DEFAULT_TAU
    alpha0: float = DEFAULT_ALPHA0
    delta: float = DEFAULT_DELTA

    def __post_init__(self) -> None:
        if not self.lambda_ > 0:
            msg = f"lambda_ must be > 0, got {self.lambda_}"
            raise ContractViolation(msg)
        if not self.tau > 0:
            msg = f"tau must be > 0, got {self.tau}"
            raise ContractViolation(msg)
        if not 0 <= self.alpha0 <= 1:
            msg = f"alpha0 must lie in [0, 1], got {self.alpha0}"
            raise ContractViolation(msg)
        if not self.delta >= 0:
            msg = f"delta must be >= 0, got {self.delta}"
            raise ContractViolation(msg)


class LossTerms(NamedTuple):
    l_c: torch.Tensor
    l_r: torch.Tensor
    l_s: torch.Tensor
    composite: torch.Tensor


def cross_entropy(logits: LogitBatch, y: LabelBatch) -> torch.Tensor:
    """Mean categorical cross-entropy; L_C on clean logits, L_R on companion logits."""
    if logits.dim() != 2 or y.shape != (logits.shape[0],):  # noqa: PLR2004
        msg = f"logits {tuple(logits.shape)} and labels {tuple(y.shape)} are inconsistent"
        raise ContractViolation(msg)
    if not torch.isfinite(logits).all():
        msg = "logits contain non-finite values"
        raise ContractViolation(msg)
    return F.cross_entropy(logits, y.to(logits.device))


def cross_correlation(za: EmbeddingBatch, zb: EmbeddingBatch) -> torch.Tensor:
    """E x E matrix of per-dimension correlations over the batch, without mean-centering.

    M_ij = sum_b za_bi zb_bj / (||za_:i|| * ||zb_:j||), denominators floored at 1e-12.
    """
    if za.shape != zb.shape or za.dim() != 2:  # noqa: PLR2004
        msg = f"embedding shapes {tuple(za.shape)} and {tuple(zb.shape)} must match as B x E"
        raise ContractViolation(msg)
    if za.shape[0] < 2:  # noqa: PLR2004
        msg = f"cross-correlation needs B >= 2, got {za.shape[0]}"
        raise ContractViolation(msg)
    norm_a = torch.linalg.vector_norm(za, dim=0)
    norm_b = torch.linalg.vector_norm(zb, dim=0)
    denominator = torch.outer(norm_a, norm_b).clamp_min(DENOMINATOR_GUARD)
    return (za.T @ zb) / denominator


def off_diagonal(m: torch.Tensor) -> torch.Tensor:
    """Flattened off-diagonal entries of a square matrix."""
    n = m.shape[0]
    return m.flatten()[:-1].view(n - 1, n + 1)[:, 1:].flatten()


def similarity_loss(m: torch.Tensor, lambda_: float) -> torch.Tensor:
    """sum_i (1 - M_ii)^2 + lambda * sum_{i != j} M_ij^2."""
    if m.dim() != 2 or m.shape[0] != m.shape[1]:  # noqa: PLR2004
        msg = f"cross-correlation matrix must be square, got {tuple(m.shape)}"
        raise ContractViolation(msg)
    on_diag = (1 - torch.diagonal(m)).pow(2).sum()
    if m.shape[0] == 1:
        return on_diag
    return on_diag + lambda_ * off_diagonal(m).pow(2).sum()


def alpha_at(epoch: int, w: LossWeights) -> float:
    """Classification weight for an epoch (1-based): min(1, alpha0 + delta * (epoch - 1))."""
    if epoch < 1:
        msg = f"epochs are 1-based, got {epoch}"
        raise ContractViolation(msg)
    return min(1.0, w.alpha0 + w.delta * (epoch - 1))


def composite_loss(
    l_c: torch.Tensor | float,
    l_r: torch.Tensor | float,
    l_s: torch.Tensor | float,
    alpha: float,
    tau: float,
) -> torch.Tensor | float:
    """alpha * (l_c + l_r) + (1 - alpha) * l_s / tau, for floats or tensors alike."""
    if not tau > 0:
        msg = f"tau must be > 0, got {tau}"
        raise ContractViolation(msg)
    if not 0 <= alpha <= 1:
        msg = f"alpha must lie in [0, 1], got {alpha}"
        raise ContractViolation(msg)
    return alpha * (l_c + l_r) + (1 - alpha) * (l_s / tau)


class LisardObjective:
    """Every LISArD term from the two `forward_full` passes of a batch."""

    def __init__(self, weights: LossWeights, class_terms: str = "both") -> None:
        if class_terms not in CLASS_TERMS:
            msg = f"class_terms must be one of {CLASS_TERMS}, got '{class_terms}'"
            raise ContractViolation(msg)
        self.weights = weights
        self.class_terms = class_terms

    def __call__(
        self,
        clean: tuple[EmbeddingBatch, LogitBatch],
        companion: tuple[EmbeddingBatch, LogitBatch],
        y: LabelBatch,
        alpha: float,
        class_scale: float = 1.0,
        similarity_scale: float = 1.0,
    ) -> LossTerms:
        """`class_scale` and `similarity_scale` weight a micro-batch within its full batch."""
        z_c, logits_c = clean
        z_r, logits_r = companion
        l_c = cross_entropy(logits_c, y) * class_scale
        l_r = cross_entropy(logits_r, y) * class_scale
        l_s = similarity_loss(cross_correlation(z_c, z_r), self.weights.lambda_) * similarity_scale
        zero = l_c.new_zeros(())
        total = composite_loss(
            l_c if self.class_terms != "random" else zero,
            l_r if self.class_terms != "clean" else zero,
            l_s,
            alpha,
            self.weights.tau,
        )
        return LossTerms(l_c, l_r, l_s, total)


def is_finite(value: float | torch.Tensor) -> bool:
    if isinstance(value, torch.Tensor):
        return bool(torch.isfinite(value).all())
    return math.isfinite(value)
