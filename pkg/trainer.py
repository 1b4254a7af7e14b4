"""Training loops: standard supervised training and LISArD training.

Both loops use SGD with momentum and weight decay at a constant learning rate,
visit batches in the order fixed by (seed, epoch), and derive every random
companion image from (seed, epoch, step), so a run depends on its config only.
"""

import logging
import time
from collections.abc import Callable
from dataclasses import asdict, dataclass, field
from pathlib import Path

import pandas as pd
import torch
from tqdm import tqdm

from attacks import AttackSpec, fgsm, pgd
from constants import (
    CIFAR_EPSILON,
    CLASS_TERMS,
    DEFAULT_BATCH_SIZE,
    DEFAULT_CHECKPOINT_EVERY,
    DEFAULT_EPOCHS,
    DEFAULT_LR,
    DEFAULT_MOMENTUM,
    DEFAULT_WEIGHT_DECAY,
    MSG_CHECKPOINT_INCOMPATIBLE,
    MSG_EPOCH_SUMMARY,
    MSG_MICRO_BATCH,
    MSG_RESUMING,
    PERTURB_MODES,
    RECORD_COLUMNS,
    TIMING_COLUMNS,
    TRAIN_MODES,
)
from core import ClassifierModel, ImageBatch, LabelBatch
from data_io import BatchPlan, DatasetHandle, iterate_batches, num_batches
from errors import ConfigError, TrainingError
from losses import LisardObjective, LossWeights, alpha_at, composite_loss, cross_entropy, is_finite
from noise import NoiseSpec, noise_generator, perturb_random
from utils import (
    derive_seed,
    enable_strict_determinism,
    hash_payload,
    select_device,
    torch_generator,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    lr: float = DEFAULT_LR
    momentum: float = DEFAULT_MOMENTUM
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    mode: str = "lisard"
    perturb_mode: str = "random"
    noise: NoiseSpec | None = field(default_factory=lambda: NoiseSpec(mu=CIFAR_EPSILON))
    attack: AttackSpec | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    class_terms: str = "both"
    seed: int = 0
    micro_batch_size: int | None = None
    checkpoint_every: int = DEFAULT_CHECKPOINT_EVERY
    strict_determinism: bool = False
    augment: bool = False
    drop_last: bool = False

    def validate(self) -> "TrainConfig":
        """Raises ConfigError naming the first offending field."""
        if self.mode not in TRAIN_MODES:
            raise ConfigError("train.mode", f"must be one of {TRAIN_MODES}")
        if self.epochs < 0:
            raise ConfigError("train.epochs", "must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size", "must be >= 1")
        if self.lr < 0:
            raise ConfigError("train.lr", "must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("train.momentum", "must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("train.weight_decay", "must be >= 0")
        if self.perturb_mode not in PERTURB_MODES:
            raise ConfigError("train.perturb_mode", f"must be one of {PERTURB_MODES}")
        if self.class_terms not in CLASS_TERMS:
            raise ConfigError("train.class_terms", f"must be one of {CLASS_TERMS}")
        if self.mode == "lisard":
            if self.perturb_mode == "random" and self.noise is None:
                raise ConfigError("train.noise", "perturb_mode 'random' requires a noise spec")
            if self.perturb_mode != "random" and self.attack is None:
                msg = f"perturb_mode '{self.perturb_mode}' requires an attack spec"
                raise ConfigError("train.attack", msg)
            if self.perturb_mode in ("fgsm", "pgd") and self.attack.kind != self.perturb_mode:
                msg = f"attack kind '{self.attack.kind}' != perturb_mode '{self.perturb_mode}'"
                raise ConfigError("train.attack.kind", msg)
        if self.micro_batch_size is not None and not 2 <= self.micro_batch_size:  # noqa: PLR2004
            raise ConfigError("train.micro_batch_size", "must be >= 2")
        if self.checkpoint_every < 1:
            raise ConfigError("train.checkpoint_every", "must be >= 1")
        return self

    def config_hash(self) -> str:
        """Identity of everything that shapes the trajectory (epoch count excluded)."""
        payload = asdict(self)
        for key in ("epochs", "checkpoint_every"):
            payload.pop(key)
        return hash_payload(payload)


@dataclass
class EpochRow:
    epoch: int
    alpha: float
    l_c: float
    l_r: float
    l_s: float
    composite: float
    train_accuracy: float
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class TrainRecord:
    rows: list[EpochRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list:
        return [getattr(row, name) for row in self.rows]

    def to_frame(self) -> pd.DataFrame:
        columns = [*RECORD_COLUMNS, "wall_time"]
        return pd.DataFrame([asdict(row) for row in self.rows], columns=columns)

    def save(self, record_path: Path, timings_path: Path | None = None) -> None:
        """Deterministic columns and wall time go to separate tables."""
        frame = self.to_frame()
        Path(record_path).parent.mkdir(parents=True, exist_ok=True)
        frame[list(RECORD_COLUMNS)].to_csv(record_path, index=False)
        if timings_path is not None:
            frame[list(TIMING_COLUMNS)].to_csv(timings_path, index=False)

    @classmethod
    def load(cls, record_path: Path, timings_path: Path | None = None) -> "TrainRecord":
        frame = pd.read_csv(record_path)
        wall = {}
        if timings_path is not None and Path(timings_path).is_file():
            timings = pd.read_csv(timings_path)
            wall = dict(zip(timings["epoch"], timings["wall_time"], strict=True))
        return cls(
            rows=[
                EpochRow(
                    epoch=int(r.epoch),
                    alpha=float(r.alpha),
                    l_c=float(r.l_c),
                    l_r=float(r.l_r),
                    l_s=float(r.l_s),
                    composite=float(r.composite),
                    train_accuracy=float(r.train_accuracy),
                    wall_time=float(wall.get(r.epoch, 0.0)),
                )
                for r in frame.itertuples(index=False)
            ]
        )

    @property
    def total_wall_time(self) -> float:
        return sum(self.column("wall_time"))


@dataclass
class _BatchStats:
    l_c: float
    l_r: float
    l_s: float
    correct: int
    count: int


# --- Checkpoints ---
def checkpoint_name(epoch: int) -> str:
    return f"checkpoint-epoch{epoch:04d}.pt"


def save_checkpoint(
    directory: Path,
    model: ClassifierModel,
    optimizer: torch.optim.Optimizer,
    epoch: int,
    record: TrainRecord,
    config_hash: str,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / checkpoint_name(epoch)
    torch.save(
        {
            "epoch": epoch,
            "config_hash": config_hash,
            "model": {k: v.detach().cpu() for k, v in model.state_dict().items()},
            "optimizer": optimizer.state_dict(),
            "record": [asdict(row) for row in record.rows],
        },
        path,
    )
    return path


def clear_checkpoints(directory: Path) -> int:
    """Deletes every checkpoint in a directory; returns how many were removed."""
    found = sorted(Path(directory).glob("checkpoint-epoch*.pt"))
    for path in found:
        path.unlink()
    return len(found)


def latest_checkpoint(directory: Path) -> Path | None:
    directory = Path(directory)
    if not directory.is_dir():
        return None
    found = sorted(directory.glob("checkpoint-epoch*.pt"))
    return found[-1] if found else None


def load_checkpoint(path: Path, config_hash: str) -> dict | None:
    """The checkpoint payload, or None when it was written under another config."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("config_hash") != config_hash:
        logger.warning(MSG_CHECKPOINT_INCOMPATIBLE.format(path=path))
        return None
    logger.info(MSG_RESUMING.format(path=path, epoch=payload["epoch"] + 1))
    return payload


# --- Batch Steps ---
def _check_finite(value: torch.Tensor, what: str, epoch: int, step: int) -> None:
    if not is_finite(value):
        msg = f"non-finite {what}"
        raise TrainingError(msg, epoch, step)


def _standard_step(
    model: ClassifierModel, x: ImageBatch, y: LabelBatch, epoch: int, step: int
) -> _BatchStats:
    model.train()
    logits = model(x)
    _check_finite(logits, "logits", epoch, step)
    loss = cross_entropy(logits, y)
    _check_finite(loss, "loss", epoch, step)
    loss.backward()
    correct = int((logits.detach().argmax(1) == y).sum())
    return _BatchStats(loss.item(), 0.0, 0.0, correct, y.numel())


def make_companion(
    model: ClassifierModel,
    x: ImageBatch,
    y: LabelBatch,
    cfg: TrainConfig,
    epoch: int,
    step: int,
) -> ImageBatch:
    """The perturbed twin of a clean batch: Gaussian noise, or an attack on the current model."""
    if cfg.perturb_mode == "random":
        return perturb_random(x, cfg.noise, noise_generator(cfg.noise, epoch, step, cfg.seed))
    model.eval()
    try:
        if cfg.perturb_mode == "fgsm":
            return fgsm(model, x, y, cfg.attack.epsilon, step)
        spec = cfg.attack
        if cfg.perturb_mode == "aa":
            spec = AttackSpec.aa_substitute(cfg.attack.epsilon, cfg.attack.seed)
        generator = torch_generator(derive_seed(cfg.seed, spec.seed, epoch, step))
        return pgd(model, x, y, spec, generator, step)
    finally:
        model.train()


def _micro_batches(size: int, micro: int | None) -> list[slice]:
    if micro is None or micro >= size:
        return [slice(0, size)]
    bounds = list(range(0, size, micro)) + [size]
    # a trailing single sample cannot form a cross-correlation matrix
    if bounds[-1] - bounds[-2] < 2 and len(bounds) > 2:  # noqa: PLR2004
        bounds.pop(-2)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:], strict=True)]


def _lisard_step(
    model: ClassifierModel,
    x: ImageBatch,
    y: LabelBatch,
    epoch: int,
    step: int,
    cfg: TrainConfig,
    objective: LisardObjective,
) -> _BatchStats:
    alpha = alpha_at(epoch, cfg.weights)
    x_r = make_companion(model, x, y, cfg, epoch, step)
    model.train()
    chunks = _micro_batches(y.numel(), cfg.micro_batch_size)
    stats = _BatchStats(0.0, 0.0, 0.0, 0, y.numel())
    for chunk in chunks:
        clean = model.forward_full(x[chunk])
        companion = model.forward_full(x_r[chunk])
        _check_finite(clean[1], "clean logits", epoch, step)
        _check_finite(companion[1], "companion logits", epoch, step)
        terms = objective(
            clean,
            companion,
            y[chunk],
            alpha,
            class_scale=y[chunk].numel() / y.numel(),
            similarity_scale=1 / len(chunks),
        )
        _check_finite(terms.composite, "loss", epoch, step)
        terms.composite.backward()
        stats.l_c += terms.l_c.item()
        stats.l_r += terms.l_r.item()
        stats.l_s += terms.l_s.item()
        stats.correct += int((clean[1].detach().argmax(1) == y[chunk]).sum())
    return stats


# --- Loops ---
def _train(
    model: ClassifierModel,
    dataset: DatasetHandle,
    cfg: TrainConfig,
    batch_step: Callable[[ClassifierModel, ImageBatch, LabelBatch, int, int], _BatchStats],
    alpha_for: Callable[[int], float],
    checkpoint_dir: Path | None,
    resume: dict | None,
    *,
    show_progress: bool,
    checkpoint_key: str | None,
) -> tuple[ClassifierModel, TrainRecord]:
    cfg.validate()
    enable_strict_determinism(cfg.strict_determinism)
    device = select_device()
    model.to(device)
    optimizer = torch.optim.SGD(
        model.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay
    )
    record = TrainRecord()
    start = 1
    if resume is not None:
        model.load_state_dict(resume["model"])
        optimizer.load_state_dict(resume["optimizer"])
        record = TrainRecord(rows=[EpochRow(**row) for row in resume["record"]])
        start = resume["epoch"] + 1

    plan = BatchPlan(
        batch_size=cfg.batch_size,
        shuffle_seed=cfg.seed,
        drop_last=cfg.drop_last,
        augment=cfg.augment,
    )
    total_steps = num_batches(dataset, plan)
    config_hash = checkpoint_key or cfg.config_hash()
    for epoch in range(start, cfg.epochs + 1):
        began = time.perf_counter()
        alpha = alpha_for(epoch)
        sums = _BatchStats(0.0, 0.0, 0.0, 0, 0)
        steps = 0
        batches = tqdm(
            iterate_batches(dataset, plan, epoch),
            total=total_steps,
            desc=f"Epoch {epoch}/{cfg.epochs}",
            leave=False,
            disable=not show_progress,
        )
        for step, (x, y) in enumerate(batches):
            if cfg.mode == "lisard" and y.numel() < 2:  # noqa: PLR2004
                logger.debug(f"Skipping single-sample batch at epoch {epoch}, step {step}")
                continue
            optimizer.zero_grad(set_to_none=True)
            stats = batch_step(model, x.to(device), y.to(device), epoch, step)
            optimizer.step()
            sums.l_c += stats.l_c
            sums.l_r += stats.l_r
            sums.l_s += stats.l_s
            sums.correct += stats.correct
            sums.count += stats.count
            steps += 1

        steps = max(steps, 1)
        l_c, l_r, l_s = sums.l_c / steps, sums.l_r / steps, sums.l_s / steps
        row = EpochRow(
            epoch=epoch,
            alpha=alpha,
            l_c=l_c,
            l_r=l_r,
            l_s=l_s,
            composite=composite_loss(l_c, l_r, l_s, alpha, cfg.weights.tau),
            train_accuracy=sums.correct / max(sums.count, 1),
            wall_time=time.perf_counter() - began,
        )
        record.rows.append(row)
        logger.info(
            MSG_EPOCH_SUMMARY.format(
                epoch=epoch,
                epochs=cfg.epochs,
                alpha=row.alpha,
                l_c=row.l_c,
                l_r=row.l_r,
                l_s=row.l_s,
                composite=row.composite,
                acc=row.train_accuracy,
                wall=row.wall_time,
            )
        )
        if checkpoint_dir is not None and (
            epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs
        ):
            save_checkpoint(checkpoint_dir, model, optimizer, epoch, record, config_hash)

    model.eval()
    return model, record


def train_standard(
    model: ClassifierModel,
    dataset: DatasetHandle,
    cfg: TrainConfig,
    checkpoint_dir: Path | None = None,
    resume: dict | None = None,
    *,
    show_progress: bool = False,
    checkpoint_key: str | None = None,
) -> tuple[ClassifierModel, TrainRecord]:
    """Mean cross-entropy on clean images (baselines and surrogates)."""
    if cfg.mode != "standard":
        raise ConfigError("train.mode", "train_standard needs mode 'standard'")
    return _train(
        model,
        dataset,
        cfg,
        _standard_step,
        lambda _: 1.0,
        checkpoint_dir,
        resume,
        show_progress=show_progress,
        checkpoint_key=checkpoint_key,
    )


def train_lisard(
    model: ClassifierModel,
    dataset: DatasetHandle,
    cfg: TrainConfig,
    checkpoint_dir: Path | None = None,
    resume: dict | None = None,
    *,
    show_progress: bool = False,
    checkpoint_key: str | None = None,
) -> tuple[ClassifierModel, TrainRecord]:
    """Classification of clean and companion images plus embedding similarity, weighted by alpha."""
    if cfg.mode != "lisard":
        raise ConfigError("train.mode", "train_lisard needs mode 'lisard'")
    objective = LisardObjective(cfg.weights, cfg.class_terms)
    if cfg.micro_batch_size is not None and cfg.micro_batch_size < cfg.batch_size:
        chunks = len(_micro_batches(cfg.batch_size, cfg.micro_batch_size))
        logger.info(MSG_MICRO_BATCH.format(n=chunks, size=cfg.micro_batch_size))

    def step_fn(
        model: ClassifierModel, x: ImageBatch, y: LabelBatch, epoch: int, step: int
    ) -> _BatchStats:
        return _lisard_step(model, x, y, epoch, step, cfg, objective)

    return _train(
        model,
        dataset,
        cfg,
        step_fn,
        lambda epoch: alpha_at(epoch, cfg.weights),
        checkpoint_dir,
        resume,
        show_progress=show_progress,
        checkpoint_key=checkpoint_key,
    )


def train(
    model: ClassifierModel,
    dataset: DatasetHandle,
    cfg: TrainConfig,
    checkpoint_dir: Path | None = None,
    resume: dict | None = None,
    *,
    show_progress: bool = False,
    checkpoint_key: str | None = None,
) -> tuple[ClassifierModel, TrainRecord]:
    trainer = train_lisard if cfg.mode == "lisard" else train_standard
    """Dispatches on cfg.mode; `checkpoint_key` ties checkpoints to the run that wrote them."""
    return trainer(
        model,
        dataset,
        cfg,
        checkpoint_dir,
        resume,
        show_progress=show_progress,
        checkpoint_key=checkpoint_key,
    )
