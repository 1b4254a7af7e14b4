"""White-box L-infinity attacks (FGSM, PGD) and persisted evaluation attack sets.

Attacks work in pixel space [0, 1] against the model in inference mode and use
the mean-reduced cross-entropy of the logits as their objective.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import UTC, datetime
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F  # noqa: N812
from tqdm import tqdm

from constants import (
    AA_LABEL,
    AA_RESTARTS,
    ADVSET_IMAGES,
    ADVSET_MANIFEST,
    ARTIFACT_FORMAT,
    ATTACK_KINDS,
    BUDGET_TOLERANCE,
    EVAL_BATCH_SIZE,
    MSG_CACHE_HIT,
    MSG_CACHE_MISS,
    MSG_STEP_SIZE_WARNING,
    PGD_STEP_SIZE,
    PGD_STEPS,
)
from core import (
    ClassifierModel,
    ImageBatch,
    LabelBatch,
    check_image_batch,
    check_inference_mode,
    check_label_batch,
)
from data_io import BatchPlan, DatasetHandle, iterate_batches
from errors import ArtifactError, AttackError, ContractViolation, HashMismatchError
from utils import derive_seed, hash_payload, read_json, sha256_bytes, torch_generator, write_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    epsilon: float
    step_size: float = PGD_STEP_SIZE
    steps: int = PGD_STEPS
    random_start: bool = True
    restarts: int = 1
    seed: int = 0
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ATTACK_KINDS:
            msg = f"attack kind must be one of {ATTACK_KINDS}, got '{self.kind}'"
            raise ContractViolation(msg)
        if not 0 <= self.epsilon <= 1:
            msg = f"epsilon must lie in [0, 1], got {self.epsilon}"
            raise ContractViolation(msg)
        if self.kind == "pgd":
            if self.steps < 1:
                msg = f"PGD needs steps >= 1, got {self.steps}"
                raise ContractViolation(msg)
            if not self.step_size > 0:
                msg = f"PGD step_size must be > 0, got {self.step_size}"
                raise ContractViolation(msg)
            if self.step_size > self.epsilon:
                logger.warning(MSG_STEP_SIZE_WARNING.format(step=self.step_size, eps=self.epsilon))
        if self.restarts < 1:
            msg = f"restarts must be >= 1, got {self.restarts}"
            raise ContractViolation(msg)
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    @classmethod
    def aa_substitute(cls, epsilon: float, seed: int = 0) -> "AttackSpec":
        """Stand-in for the AutoAttack slot: multi-restart PGD with random starts."""
        return cls(
            kind="pgd",
            epsilon=epsilon,
            step_size=epsilon / 4 or PGD_STEP_SIZE,
            steps=PGD_STEPS,
            random_start=True,
            restarts=AA_RESTARTS,
            seed=seed,
            name=AA_LABEL,
        )

    def fields(self) -> dict:
        return asdict(self)


def _loss_gradient(
    model: ClassifierModel, x: ImageBatch, y: LabelBatch, batch_index: int | None
) -> tuple[torch.Tensor, torch.Tensor]:
    """Gradient of the mean cross-entropy w.r.t. the input, plus per-sample losses."""
    x = x.detach().requires_grad_(True)  # noqa: FBT003
    with torch.enable_grad():
        logits = model(x)
        per_sample = F.cross_entropy(logits, y, reduction="none")
        (grad,) = torch.autograd.grad(per_sample.mean(), x)
    if not torch.isfinite(grad).all():
        msg = "non-finite input gradient"
        raise AttackError(msg, batch_index)
    return grad, per_sample.detach()


def _prepare(model: ClassifierModel, x: ImageBatch, y: LabelBatch) -> tuple[torch.Tensor, ...]:
    check_inference_mode(model)
    check_image_batch(x, getattr(model, "input_spec", None))
    check_label_batch(y, x.shape[0])
    device = next(model.parameters()).device
    return x.to(device), y.to(device)


def fgsm(
    model: ClassifierModel,
    x: ImageBatch,
    y: LabelBatch,
    epsilon: float,
    batch_index: int | None = None,
) -> ImageBatch:
    """One signed-gradient step of size epsilon, clipped to [0, 1]; sign(0) = 0."""
    x, y = _prepare(model, x, y)
    if epsilon == 0:
        return x.clone()
    grad, _ = _loss_gradient(model, x, y, batch_index)
    return (x + epsilon * grad.sign()).clamp_(0.0, 1.0).detach()


def _project(x_adv: torch.Tensor, x: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Projection onto the L-inf ball around x intersected with the pixel range."""
    return torch.min(torch.max(x_adv, x - epsilon), x + epsilon).clamp_(0.0, 1.0)


def pgd(
    model: ClassifierModel,
    x: ImageBatch,
    y: LabelBatch,
    spec: AttackSpec,
    generator: torch.Generator | None = None,
    batch_index: int | None = None,
) -> ImageBatch:
    """Projected signed-gradient ascent; with restarts, keeps the highest-loss run per sample."""
    if spec.steps < 1:
        msg = f"PGD needs steps >= 1, got {spec.steps}"
        raise ContractViolation(msg)
    x, y = _prepare(model, x, y)
    if spec.epsilon == 0:
        return x.clone()
    if generator is None:
        generator = torch_generator(spec.seed)

    best = x.clone()
    best_loss = torch.full((x.shape[0],), -math.inf, device=x.device)
    for _ in range(spec.restarts):
        x_adv = x.clone()
        if spec.random_start:
            start = torch.rand(x.shape, generator=generator, dtype=x.dtype).to(x.device)
            x_adv = (x + (2 * start - 1) * spec.epsilon).clamp_(0.0, 1.0)
        for _ in range(spec.steps):
            grad, _ = _loss_gradient(model, x_adv, y, batch_index)
            x_adv = _project(x_adv + spec.step_size * grad.sign(), x, spec.epsilon)
        with torch.no_grad():
            final_loss = F.cross_entropy(model(x_adv), y, reduction="none")
        improved = final_loss > best_loss
        best[improved] = x_adv[improved]
        best_loss = torch.where(improved, final_loss, best_loss)
    return best.detach()


def run_attack(
    model: ClassifierModel,
    x: ImageBatch,
    y: LabelBatch,
    spec: AttackSpec,
    generator: torch.Generator | None = None,
    batch_index: int | None = None,
) -> ImageBatch:
    if spec.kind == "fgsm":
        return fgsm(model, x, y, spec.epsilon, batch_index)
    return pgd(model, x, y, spec, generator, batch_index)


# --- Persisted Attack Sets ---
@dataclass
class AdvSetArtifact:
    images: torch.Tensor  # float32, N x C x H x W
    manifest: dict = field(default_factory=dict)

    @property
    def key(self) -> str:
        return self.manifest["key"]

    @property
    def name(self) -> str:
        return self.manifest["attack"]["name"]

    def budget_violations(self, clean: torch.Tensor) -> int:
        """Number of samples whose perturbation leaves the epsilon ball or the pixel range."""
        epsilon = self.manifest["attack"]["epsilon"]
        delta = (self.images - clean).abs().flatten(1).amax(dim=1)
        in_range = (self.images >= 0).flatten(1).all(dim=1) & (self.images <= 1).flatten(1).all(1)
        return int(((delta > epsilon + BUDGET_TOLERANCE) | ~in_range).sum())


def advset_key(surrogate_hash: str, dataset: DatasetHandle, spec: AttackSpec) -> str:
    """Cache key of an attack set: identical inputs always map to the same key."""
    return hash_payload(
        {
            "surrogate": surrogate_hash,
            "dataset": dataset.name,
            "split": dataset.split,
            "length": dataset.length,
            "attack": spec.fields(),
        }
    )


def advset_dir(root: Path, spec: AttackSpec, key: str) -> Path:
    slug = "".join(c if c.isalnum() else "-" for c in spec.name.lower()).strip("-")
    return Path(root) / f"{slug}-{key[:12]}"


def save_advset(artifact: AdvSetArtifact, out: Path) -> None:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / ADVSET_IMAGES).write_bytes(_tensor_bytes(artifact.images))
        write_json(out / ADVSET_MANIFEST, artifact.manifest)
    except OSError as e:
        msg = f"cannot write attack set to {out}: {e}"
        raise ArtifactError(msg) from e


def load_advset(path: Path, expected_key: str | None = None) -> AdvSetArtifact:
    """Reads an attack set and verifies its manifest hash and key."""
    path = Path(path)
    manifest_file, images_file = path / ADVSET_MANIFEST, path / ADVSET_IMAGES
    if not manifest_file.is_file() or not images_file.is_file():
        msg = f"no attack set at {path}"
        raise ArtifactError(msg)
    manifest = read_json(manifest_file)
    if manifest.get("format") != ARTIFACT_FORMAT:
        msg = f"unsupported attack set format in {manifest_file}"
        raise ArtifactError(msg)
    if expected_key is not None and manifest.get("key") != expected_key:
        msg = f"attack set {path} has key {manifest.get('key')}, expected {expected_key}"
        raise HashMismatchError(msg)
    raw = images_file.read_bytes()
    if sha256_bytes(raw) != manifest["content_sha256"]:
        msg = f"attack set {path} does not match its manifest content hash"
        raise HashMismatchError(msg)
    array = np.frombuffer(raw, dtype="<f4").reshape(manifest["shape"])
    return AdvSetArtifact(images=torch.from_numpy(array.copy()), manifest=manifest)


def _tensor_bytes(images: torch.Tensor) -> bytes:
    return images.detach().cpu().contiguous().numpy().astype("<f4").tobytes()


def generate_advset(
    model: ClassifierModel,
    dataset: DatasetHandle,
    spec: AttackSpec,
    out: Path,
    surrogate_hash: str,
    batch_size: int = EVAL_BATCH_SIZE,
    *,
    show_progress: bool = False,
) -> AdvSetArtifact:
    """Attacks every test sample once, in order, and persists the result with its manifest."""
    if dataset.split != "test":
        msg = f"attack sets are built from a test split, got '{dataset.split}'"
        raise ContractViolation(msg)
    model.eval()
    plan = BatchPlan(batch_size=batch_size, shuffle=False)
    batches = iterate_batches(dataset, plan)
    parts = []
    for index, (x, y) in enumerate(
        tqdm(batches, desc=f"Generating {spec.name}", leave=False, disable=not show_progress)
    ):
        generator = torch_generator(derive_seed(spec.seed, index))
        parts.append(run_attack(model, x, y, spec, generator, index).cpu())
    images = torch.cat(parts)

    key = advset_key(surrogate_hash, dataset, spec)
    manifest = {
        "format": ARTIFACT_FORMAT,
        "key": key,
        "surrogate_hash": surrogate_hash,
        "dataset": dataset.name,
        "split": dataset.split,
        "attack": spec.fields(),
        "generation_seed": spec.seed,
        "shape": list(images.shape),
        "dtype": "float32-le",
        "content_sha256": sha256_bytes(_tensor_bytes(images)),
        "created_at": datetime.now(UTC).isoformat(timespec="seconds"),
    }
    artifact = AdvSetArtifact(images=images, manifest=manifest)
    save_advset(artifact, out)
    return artifact


def ensure_advset(
    model: ClassifierModel | None,
    dataset: DatasetHandle,
    spec: AttackSpec,
    root: Path,
    surrogate_hash: str,
    *,
    allow_generate: bool = True,
    show_progress: bool = False,
) -> tuple[AdvSetArtifact, bool]:
    """Loads the attack set for (surrogate, dataset, spec) if cached, else generates it.

    Returns the artifact and whether it was a cache hit.
    """
    key = advset_key(surrogate_hash, dataset, spec)
    path = advset_dir(root, spec, key)
    if (path / ADVSET_MANIFEST).is_file():
        artifact = load_advset(path, expected_key=key)
        logger.info(MSG_CACHE_HIT.format(name=spec.name, key=key[:12], path=path))
        return artifact, True
    if not allow_generate or model is None:
        msg = f"attack set {spec.name} ({key[:12]}) is missing at {path} and generation is off"
        raise ArtifactError(msg)
    logger.info(MSG_CACHE_MISS.format(name=spec.name, key=key[:12]))
    artifact = generate_advset(
        model, dataset, spec, path, surrogate_hash, show_progress=show_progress
    )
    return artifact, False
