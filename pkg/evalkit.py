"""Gray-box evaluation, robust accuracy and embedding-overlap diagnostics.

Targets are only ever queried through `InferenceModel`, so no gradient of a
target is computed; attack sets come from the surrogate alone and are cached
by (surrogate hash, dataset, attack spec, seed).
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import matplotlib as mpl

mpl.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import torch  # noqa: E402

from attacks import AdvSetArtifact, AttackSpec, ensure_advset, run_attack  # noqa: E402
from constants import (  # noqa: E402
    CLEAN_COLUMN,
    DEGENERATE_VARIANCE,
    DPRIME_DEFINITION,
    EVAL_BATCH_SIZE,
    MSG_AXIS_FALLBACK,
    MSG_FIGURE_WRITTEN,
    STATISTIC_L2_NORM,
    STATISTIC_PRINCIPAL_AXIS,
    VOLATILE_MANIFEST_KEYS,
)
from core import (  # noqa: E402
    ClassifierModel,
    ImageBatch,
    InferenceModel,
    LabelBatch,
    accuracy,
    check_image_batch,
    predict_in_batches,
)
from data_io import BatchPlan, DatasetHandle, iterate_batches  # noqa: E402
from errors import ContractViolation, ProtocolViolation  # noqa: E402
from models import weights_hash  # noqa: E402
from utils import derive_seed, format_percent, read_json, torch_generator, write_json  # noqa: E402

logger = logging.getLogger(__name__)


# --- Decidability ---
@dataclass(frozen=True)
class DecidabilityResult:
    mu_a: float
    sigma_a: float
    mu_b: float
    sigma_b: float
    dprime: float


def decidability(
    sample_a: Sequence[float] | np.ndarray, sample_b: Sequence[float] | np.ndarray
) -> DecidabilityResult:
    """d' = |mu_a - mu_b| / sqrt((var_a + var_b) / 2) with unbiased variances.

    Zero pooled variance gives 0 for equal means and +inf otherwise.
    """
    a = np.asarray(sample_a, dtype=np.float64).ravel()
    b = np.asarray(sample_b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:  # noqa: PLR2004
        msg = f"decidability needs at least 2 values per sample, got {a.size} and {b.size}"
        raise ContractViolation(msg)
    mu_a, mu_b = float(a.mean()), float(b.mean())
    var_a, var_b = float(a.var(ddof=1)), float(b.var(ddof=1))
    pooled = math.sqrt((var_a + var_b) / 2)
    gap = abs(mu_a - mu_b)
    if pooled == 0:
        dprime = 0.0 if gap == 0 else math.inf
    else:
        dprime = gap / pooled
    return DecidabilityResult(mu_a, math.sqrt(var_a), mu_b, math.sqrt(var_b), dprime)


# --- Embedding Statistic ---
class EmbeddingStatistic:
    """Scalar per sample: projection on the clean set's first principal axis.

    The axis is fitted once on clean embeddings and reused for attacked ones.
    A degenerate covariance falls back to the embedding L2 norm.
    """

    def __init__(self) -> None:
        self.name = STATISTIC_L2_NORM
        self.mean: torch.Tensor | None = None
        self.axis: torch.Tensor | None = None

    def fit(self, embeddings: torch.Tensor) -> "EmbeddingStatistic":
        z = embeddings.detach().double().cpu()
        mean = z.mean(dim=0)
        centered = z - mean
        covariance = centered.T @ centered / max(z.shape[0] - 1, 1)
        eigenvalues, eigenvectors = torch.linalg.eigh(covariance)
        if z.shape[0] < 2 or eigenvalues[-1] <= DEGENERATE_VARIANCE:  # noqa: PLR2004
            logger.warning(MSG_AXIS_FALLBACK)
            self.name, self.mean, self.axis = STATISTIC_L2_NORM, None, None
            return self
        axis = eigenvectors[:, -1]
        # orientation fixed by the largest-magnitude component
        if axis[axis.abs().argmax()] < 0:
            axis = -axis
        self.name, self.mean, self.axis = STATISTIC_PRINCIPAL_AXIS, mean, axis
        return self

    @property
    def fell_back(self) -> bool:
        return self.axis is None

    def __call__(self, embeddings: torch.Tensor) -> np.ndarray:
        z = embeddings.detach().double().cpu()
        if self.axis is None:
            return torch.linalg.vector_norm(z, dim=1).numpy()
        return ((z - self.mean) @ self.axis).numpy()


def embed_in_batches(
    model: ClassifierModel | InferenceModel,
    images: ImageBatch,
    batch_size: int = EVAL_BATCH_SIZE,
) -> torch.Tensor:
    view = model if isinstance(model, InferenceModel) else InferenceModel(model)
    starts = range(0, images.shape[0], batch_size)
    return torch.cat([view.embed(images[i : i + batch_size]).cpu() for i in starts])


def embedding_statistic(
    model: ClassifierModel | InferenceModel,
    x: ImageBatch,
    statistic: EmbeddingStatistic | None = None,
) -> tuple[np.ndarray, EmbeddingStatistic]:
    """One scalar per sample; fits the statistic on `x` when none is given."""
    embeddings = embed_in_batches(model, x)
    if statistic is None:
        statistic = EmbeddingStatistic().fit(embeddings)
    return statistic(embeddings), statistic


# --- Accuracy ---
def robust_accuracy(
    model: ClassifierModel | InferenceModel,
    artifact: AdvSetArtifact | torch.Tensor,
    labels: LabelBatch,
    batch_size: int = EVAL_BATCH_SIZE,
) -> float:
    """Accuracy of the model's predictions on a persisted attack set."""
    images = artifact.images if isinstance(artifact, AdvSetArtifact) else artifact
    if images.dim() != 4 or images.shape[0] == 0:  # noqa: PLR2004
        msg = "robust accuracy needs a non-empty N x C x H x W attack set"
        raise ContractViolation(msg)
    check_image_batch(images, model.input_spec)
    if labels.shape != (images.shape[0],):
        msg = f"{images.shape[0]} attack images but {labels.numel()} labels"
        raise ContractViolation(msg)
    view = model if isinstance(model, InferenceModel) else InferenceModel(model)
    return accuracy(predict_in_batches(view, images, batch_size), labels)


# --- Reports ---
@dataclass
class AccuracyRow:
    target: str
    attack: str
    accuracy: float


@dataclass
class DprimeRow:
    target: str
    attack: str
    statistic: str
    mu_clean: float
    sigma_clean: float
    mu_adv: float
    sigma_adv: float
    dprime: float


@dataclass
class EvalReport:
    setting: str = "gray-box"
    rows: list[AccuracyRow] = field(default_factory=list)
    diagnostics: list[DprimeRow] = field(default_factory=list)
    provenance: list[dict] = field(default_factory=list)
    dprime_definition: str = DPRIME_DEFINITION

    def accuracy_of(self, target: str, attack: str) -> float:
        for row in self.rows:
            if row.target == target and row.attack == attack:
                return row.accuracy
        msg = f"no accuracy for target '{target}' under '{attack}'"
        raise KeyError(msg)

    def dprime_of(self, target: str, attack: str) -> float:
        for row in self.diagnostics:
            if row.target == target and row.attack == attack:
                return row.dprime
        msg = f"no d' for target '{target}' under '{attack}'"
        raise KeyError(msg)

    def to_dict(self) -> dict:
        payload = asdict(self)
        for row in payload["diagnostics"]:
            if math.isinf(row["dprime"]):
                row["dprime"] = "inf"
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "EvalReport":
        diagnostics = []
        for row in payload.get("diagnostics", []):
            row = dict(row)  # noqa: PLW2901
            row["dprime"] = float(row["dprime"])
            diagnostics.append(DprimeRow(**row))
        return cls(
            setting=payload.get("setting", "gray-box"),
            rows=[AccuracyRow(**row) for row in payload.get("rows", [])],
            diagnostics=diagnostics,
            provenance=payload.get("provenance", []),
            dprime_definition=payload.get("dprime_definition", DPRIME_DEFINITION),
        )

    def save(self, json_path: Path, table_path: Path | None = None) -> None:
        write_json(json_path, self.to_dict())
        if table_path is not None:
            Path(table_path).write_text(self.render_table() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, json_path: Path) -> "EvalReport":
        return cls.from_dict(read_json(json_path))

    def attack_names(self) -> list[str]:
        names = [CLEAN_COLUMN]
        for row in self.rows:
            if row.attack not in names:
                names.append(row.attack)
        return names

    def to_frame(self) -> pd.DataFrame:
        """One row per target, one column per attack with Clean first (percentages)."""
        frame = pd.DataFrame([asdict(row) for row in self.rows])
        if frame.empty:
            return frame
        table = frame.pivot(index="target", columns="attack", values="accuracy")
        targets = list(dict.fromkeys(frame["target"]))
        return table.reindex(index=targets, columns=self.attack_names())

    def render_table(self) -> str:
        table = self.to_frame()
        if table.empty:
            return f"{self.setting} accuracy: no rows"
        lines = [
            f"{self.setting.capitalize()} Accuracy (%)",
            table.map(format_percent).to_string(),
        ]
        if self.diagnostics:
            dprime = pd.DataFrame([asdict(row) for row in self.diagnostics])
            dprime = dprime.pivot(index="target", columns="attack", values="dprime")
            lines += ["", "Decidability d' (clean vs attacked)", dprime.round(4).to_string()]
        return "\n".join(lines)


# --- Gray-box Protocol ---
@dataclass
class ModelEntry:
    """A model and its identity: weights hash, architecture family and training dataset."""

    name: str
    model: ClassifierModel
    weights_hash: str = ""
    family: str = ""
    dataset: str = ""

    def __post_init__(self) -> None:
        if not self.weights_hash:
            self.weights_hash = weights_hash(self.model)
        spec = getattr(self.model, "spec", None)
        if spec is not None:
            self.family = self.family or spec.name
            self.dataset = self.dataset or spec.dataset


@dataclass
class GrayBoxProtocol:
    surrogate: ModelEntry
    targets: list[ModelEntry]
    attack_specs: list[AttackSpec]
    dataset: DatasetHandle
    advset_root: Path
    allow_generate: bool = True
    enforce_separation: bool = True

    def check(self) -> None:
        """The attacker knows architecture and training data, never the target's weights."""
        if self.dataset.split != "test":
            msg = f"gray-box evaluation runs on a test split, got '{self.dataset.split}'"
            raise ContractViolation(msg)
        if not self.enforce_separation:
            return
        for target in self.targets:
            if target.weights_hash == self.surrogate.weights_hash:
                msg = f"target '{target.name}' has the surrogate's weights (that is white-box)"
                raise ProtocolViolation(msg)
            if target.family != self.surrogate.family:
                msg = (
                    f"target '{target.name}' is a {target.family}, "
                    f"surrogate is a {self.surrogate.family}"
                )
                raise ProtocolViolation(msg)
            if target.dataset != self.surrogate.dataset:
                msg = (
                    f"target '{target.name}' was trained on '{target.dataset}', "
                    f"surrogate on '{self.surrogate.dataset}'"
                )
                raise ProtocolViolation(msg)


def _evaluate_target(
    report: EvalReport,
    name: str,
    view: InferenceModel,
    dataset: DatasetHandle,
    artifacts: list[AdvSetArtifact],
) -> None:
    clean = dataset.images()
    labels = dataset.labels
    report.rows.append(AccuracyRow(name, CLEAN_COLUMN, robust_accuracy(view, clean, labels)))
    clean_embeddings = embed_in_batches(view, clean)
    statistic = EmbeddingStatistic().fit(clean_embeddings)
    clean_values = statistic(clean_embeddings)
    for artifact in artifacts:
        report.rows.append(
            AccuracyRow(name, artifact.name, robust_accuracy(view, artifact, labels))
        )
        adv_values = statistic(embed_in_batches(view, artifact.images))
        result = decidability(clean_values, adv_values)
        report.diagnostics.append(
            DprimeRow(
                target=name,
                attack=artifact.name,
                statistic=statistic.name,
                mu_clean=result.mu_a,
                sigma_clean=result.sigma_a,
                mu_adv=result.mu_b,
                sigma_adv=result.sigma_b,
                dprime=result.dprime,
            )
        )


def run_graybox(protocol: GrayBoxProtocol, *, show_progress: bool = False) -> EvalReport:
    """Transfers surrogate-made attack sets to every target and scores them."""
    protocol.check()
    artifacts = []
    for spec in protocol.attack_specs:
        artifact, _ = ensure_advset(
            protocol.surrogate.model,
            protocol.dataset,
            spec,
            protocol.advset_root,
            protocol.surrogate.weights_hash,
            allow_generate=protocol.allow_generate,
            show_progress=show_progress,
        )
        artifacts.append(artifact)

    # generation timestamps stay in the manifests; a report depends on content only
    provenance = [
        {k: v for k, v in a.manifest.items() if k not in VOLATILE_MANIFEST_KEYS}
        for a in artifacts
    ]
    report = EvalReport(setting="gray-box", provenance=provenance)
    for target in protocol.targets:
        view = InferenceModel(target.model)
        _evaluate_target(report, target.name, view, protocol.dataset, artifacts)
    return report


def run_whitebox(
    entries: list[ModelEntry],
    dataset: DatasetHandle,
    attack_specs: list[AttackSpec],
    batch_size: int = EVAL_BATCH_SIZE,
) -> EvalReport:
    """Attacks each model with its own gradients (the white-box reference setting)."""
    report = EvalReport(setting="white-box")
    plan = BatchPlan(batch_size=batch_size, shuffle=False)
    for entry in entries:
        model = entry.model.eval()
        view = InferenceModel(model)
        adversarial = []
        for spec in attack_specs:
            parts = [
                run_attack(model, x, y, spec, torch_generator(derive_seed(spec.seed, i)), i).cpu()
                for i, (x, y) in enumerate(iterate_batches(dataset, plan))
            ]
            images = torch.cat(parts)
            adversarial.append(
                AdvSetArtifact(images=images, manifest={"attack": spec.fields(), "key": ""})
            )
        _evaluate_target(report, entry.name, view, dataset, adversarial)
    return report


# --- Figures ---
def plot_overlap(
    clean_values: np.ndarray,
    adv_values: np.ndarray,
    result: DecidabilityResult,
    path: Path,
    title: str = "",
    statistic: str = STATISTIC_PRINCIPAL_AXIS,
) -> Path:
    """Histograms of clean (blue) and attacked (red) statistics annotated with d'."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.histogram_bin_edges(np.concatenate([clean_values, adv_values]), bins=50)
    ax.hist(clean_values, bins=bins, alpha=0.6, color="tab:blue", label="clean", density=True)
    ax.hist(adv_values, bins=bins, alpha=0.6, color="tab:red", label="attacked", density=True)
    ax.set_xlabel(statistic)
    ax.set_ylabel("density")
    ax.set_title(f"{title}  d' = {result.dprime:.3f}" if title else f"d' = {result.dprime:.3f}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    logger.info(MSG_FIGURE_WRITTEN.format(path=path))
    return path


def overlap_values(
    model: ClassifierModel, clean: ImageBatch, attacked: ImageBatch
) -> tuple[np.ndarray, np.ndarray, DecidabilityResult, str]:
    """Clean and attacked statistics under an axis fitted on the clean embeddings."""
    clean_values, statistic = embedding_statistic(model, clean)
    adv_values, _ = embedding_statistic(model, attacked, statistic)
    return clean_values, adv_values, decidability(clean_values, adv_values), statistic.name


def plot_failures(
    model: ClassifierModel,
    images: ImageBatch,
    labels: LabelBatch,
    path: Path,
    limit: int = 16,
    class_names: list[str] | None = None,
) -> Path | None:
    """A grid of misclassified samples titled with predicted and true classes."""
    view = InferenceModel(model)
    predictions = predict_in_batches(view, images, EVAL_BATCH_SIZE)
    wrong = torch.nonzero(predictions != labels).flatten()[:limit]
    if wrong.numel() == 0:
        return None
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = min(4, wrong.numel())
    rows = math.ceil(wrong.numel() / cols)
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.4 * rows), squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for ax, index in zip(axes.flat, wrong.tolist(), strict=False):
        image = images[index].permute(1, 2, 0).clamp(0, 1).numpy()
        ax.imshow(image.squeeze() if image.shape[2] == 1 else image)
        pred, true = int(predictions[index]), int(labels[index])
        if class_names:
            pred, true = class_names[pred], class_names[true]
        ax.set_title(f"pred {pred} / true {true}", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    logger.info(MSG_FIGURE_WRITTEN.format(path=path))
    return path
