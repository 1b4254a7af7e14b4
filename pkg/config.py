"""Experiment configuration: one JSON document parsed strictly into dataclasses.

Unknown keys and wrong types raise `ConfigError` naming the dotted field path.
`--set a.b=value` overrides are applied to the raw document before parsing.
"""

import copy
import logging
import os
from collections.abc import Callable
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from types import NoneType

from attacks import AttackSpec
from constants import (
    AA_LABEL,
    CIFAR_EPSILON,
    CIFAR_IMAGE_SPEC,
    DATASET_KINDS,
    DEFAULT_OUTPUT_ROOT,
    ENV_OUTPUT_ROOT,
    PRESETS,
    SURROGATE_WEIGHTS,
    WEIGHTS_DIR,
)
from data_io import DatasetHandle
from errors import ConfigError, ContractViolation
from losses import LossWeights
from models import BackboneSpec, known_backbones
from noise import NoiseSpec
from trainer import TrainConfig
from utils import parse_override, read_json, set_dotted

logger = logging.getLogger(__name__)

NUMBER = (int, float)
INT = (int,)
STR = (str,)
BOOL = (bool,)


# --- Sections ---
@dataclass
class DatasetConfig:
    kind: str = "synthetic"
    path: str = ""
    train_size: int | None = None
    test_size: int | None = None
    seed: int = 0
    num_classes: int = 10
    image_spec: tuple[int, int, int] = CIFAR_IMAGE_SPEC
    synthetic_train: int = 512
    synthetic_test: int = 128


@dataclass
class ModelConfig:
    name: str = "toycnn"
    init_seed: int = 0

    def backbone(self, dataset: DatasetHandle) -> BackboneSpec:
        """The backbone for a dataset; K and the image shape come from the data."""
        return BackboneSpec(
            name=self.name,
            num_classes=dataset.num_classes,
            input_spec=tuple(dataset.image_spec),
            init_seed=self.init_seed,
            dataset=dataset.name,
        )


@dataclass
class TargetConfig:
    name: str
    path: str


@dataclass
class ProtocolConfig:
    surrogate: str | None = None
    surrogate_seed: int | None = None
    targets: list[TargetConfig] = field(default_factory=list)
    allow_generate: bool = True
    enforce_graybox: bool = True


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    output_dir: str | None = None
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    attacks: list[AttackSpec] = field(default_factory=list)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)

    @property
    def output_path(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.environ.get(ENV_OUTPUT_ROOT, DEFAULT_OUTPUT_ROOT)) / self.name

    @property
    def surrogate_seed(self) -> int:
        """Init and training seed of the surrogate, distinct from the targets' seed."""
        if self.protocol.surrogate_seed is not None:
            return self.protocol.surrogate_seed
        return self.seed + 1000

    def surrogate_path(self) -> Path:
        path = Path(self.protocol.surrogate or f"{WEIGHTS_DIR}/{SURROGATE_WEIGHTS}")
        return path if path.is_absolute() else self.output_path / path

    def resolve(self, path: str) -> Path:
        candidate = Path(path)
        return candidate if candidate.is_absolute() else self.output_path / candidate

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Reseeds the whole experiment (data subsets, init, batching, noise)."""
        return replace(
            self,
            seed=seed,
            dataset=replace(self.dataset, seed=seed),
            model=replace(self.model, init_seed=seed),
            train=replace(self.train, seed=seed),
        )

    def attack(self, name: str) -> AttackSpec:
        """Resolves an attack by its name, its kind, or `aa` for the restart substitute."""
        for spec in self.attacks:
            if name in (spec.name, spec.name.lower()):
                return spec
        if name == "aa":
            for spec in self.attacks:
                if spec.name == AA_LABEL:
                    return spec
            epsilon = self.attacks[0].epsilon if self.attacks else CIFAR_EPSILON
            return AttackSpec.aa_substitute(epsilon)
        for spec in self.attacks:
            if spec.kind == name and spec.name != AA_LABEL:
                return spec
        known = ["fgsm", "pgd", "aa", *(spec.name for spec in self.attacks)]
        raise ConfigError("attacks", f"unknown attack '{name}', known: {', '.join(known)}")

    def to_dict(self) -> dict:
        """A document `parse_config` reads back into an equal config."""
        dataset = asdict(self.dataset)
        dataset["image_spec"] = list(self.dataset.image_spec)
        return {
            "name": self.name,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "dataset": dataset,
            "model": asdict(self.model),
            "train": asdict(self.train),
            "attacks": [spec.fields() for spec in self.attacks],
            "protocol": asdict(self.protocol),
        }


# --- Strict Parsing ---
def _expect(value: object, types: tuple, path: str) -> None:
    if value is None and NoneType in types:
        return
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(path, f"expected {_type_names(types)}, got bool")
    if not isinstance(value, types):
        raise ConfigError(path, f"expected {_type_names(types)}, got {type(value).__name__}")


def _type_names(types: tuple) -> str:
    return " or ".join("null" if t is NoneType else t.__name__ for t in types)


def _section(doc: object, path: str, schema: dict[str, tuple]) -> dict:
    """Checks keys and leaf types of one object; nested objects are checked by the caller."""
    if not isinstance(doc, dict):
        raise ConfigError(path or "<root>", "expected an object")
    for key, value in doc.items():
        key_path = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(key_path, "unknown key")
        _expect(value, schema[key], key_path)
    return dict(doc)


def _construct[T](path: str, factory: Callable[..., T], **kwargs: object) -> T:
    try:
        return factory(**kwargs)
    except ContractViolation as exc:
        raise ConfigError(path, str(exc)) from exc


DATASET_SCHEMA = {
    "kind": STR,
    "path": STR,
    "train_size": (int, NoneType),
    "test_size": (int, NoneType),
    "seed": INT,
    "num_classes": INT,
    "image_spec": (list,),
    "synthetic_train": INT,
    "synthetic_test": INT,
}
MODEL_SCHEMA = {"name": STR, "init_seed": INT}
NOISE_SCHEMA = {
    "mu": (int, float, NoneType),
    "epsilon": NUMBER,
    "reading": STR,
    "clamp": BOOL,
    "seed": INT,
}
ATTACK_SCHEMA = {
    "kind": STR,
    "epsilon": NUMBER,
    "step_size": NUMBER,
    "steps": INT,
    "random_start": BOOL,
    "restarts": INT,
    "seed": INT,
    "name": STR,
}
WEIGHTS_SCHEMA = {"lambda_": NUMBER, "tau": NUMBER, "alpha0": NUMBER, "delta": NUMBER}
TRAIN_SCHEMA = {
    "epochs": INT,
    "batch_size": INT,
    "lr": NUMBER,
    "momentum": NUMBER,
    "weight_decay": NUMBER,
    "mode": STR,
    "perturb_mode": STR,
    "noise": (dict, NoneType),
    "attack": (dict, NoneType),
    "weights": (dict,),
    "class_terms": STR,
    "seed": INT,
    "micro_batch_size": (int, NoneType),
    "checkpoint_every": INT,
    "strict_determinism": BOOL,
    "augment": BOOL,
    "drop_last": BOOL,
}
PROTOCOL_SCHEMA = {
    "surrogate": (str, NoneType),
    "surrogate_seed": (int, NoneType),
    "targets": (list,),
    "allow_generate": BOOL,
    "enforce_graybox": BOOL,
}
TARGET_SCHEMA = {"name": STR, "path": STR}
ROOT_SCHEMA = {
    "name": STR,
    "seed": INT,
    "output_dir": (str, NoneType),
    "dataset": (dict,),
    "model": (dict,),
    "train": (dict,),
    "attacks": (list,),
    "protocol": (dict,),
}


def _parse_dataset(doc: dict, seed: int) -> DatasetConfig:
    values = _section(doc, "dataset", DATASET_SCHEMA)
    values.setdefault("seed", seed)
    if values.get("kind", "synthetic") not in DATASET_KINDS:
        raise ConfigError("dataset.kind", f"must be one of {DATASET_KINDS}")
    if "image_spec" in values:
        spec = values["image_spec"]
        if len(spec) != 3 or not all(isinstance(v, int) and v > 0 for v in spec):  # noqa: PLR2004
            raise ConfigError("dataset.image_spec", "expected three positive integers [C, H, W]")
        values["image_spec"] = tuple(spec)
    return DatasetConfig(**values)


def _parse_model(doc: dict, seed: int) -> ModelConfig:
    values = _section(doc, "model", MODEL_SCHEMA)
    values.setdefault("init_seed", seed)
    if values.get("name", "toycnn") not in known_backbones():
        msg = f"unknown backbone, known: {', '.join(known_backbones())}"
        raise ConfigError("model.name", msg)
    return ModelConfig(**values)


def _parse_noise(doc: dict, path: str) -> NoiseSpec:
    values = _section(doc, path, NOISE_SCHEMA)
    mu = values.pop("mu", None)
    epsilon = values.pop("epsilon", CIFAR_EPSILON)
    reading = values.pop("reading", "variance")
    if mu is not None:
        return _construct(path, NoiseSpec, mu=mu, **values)
    return _construct(path, NoiseSpec.from_epsilon, epsilon=epsilon, reading=reading, **values)


def _parse_attack(doc: dict, path: str) -> AttackSpec:
    values = _section(doc, path, ATTACK_SCHEMA)
    if "kind" not in values or "epsilon" not in values:
        raise ConfigError(path, "an attack needs 'kind' and 'epsilon'")
    if values["kind"] == "aa":
        extra = set(values) - {"kind", "epsilon", "seed"}
        if extra:
            raise ConfigError(f"{path}.{sorted(extra)[0]}", "not settable on the aa substitute")
        return _construct(
            path, AttackSpec.aa_substitute, epsilon=values["epsilon"], seed=values.get("seed", 0)
        )
    return _construct(path, AttackSpec, **values)


def _parse_train(doc: dict, seed: int) -> TrainConfig:
    values = _section(doc, "train", TRAIN_SCHEMA)
    values.setdefault("seed", seed)
    if "noise" in values:
        noise = values["noise"]
        values["noise"] = None if noise is None else _parse_noise(noise, "train.noise")
    if values.get("attack") is not None:
        values["attack"] = _parse_attack(values["attack"], "train.attack")
    weights = _section(values.get("weights", {}), "train.weights", WEIGHTS_SCHEMA)
    if "tau" not in weights:
        raise ConfigError("train.weights.tau", "must be stated explicitly")
    values["weights"] = _construct("train.weights", LossWeights, **weights)
    return TrainConfig(**values).validate()


def _parse_protocol(doc: dict) -> ProtocolConfig:
    values = _section(doc, "protocol", PROTOCOL_SCHEMA)
    targets = []
    for i, entry in enumerate(values.get("targets", [])):
        target = _section(entry, f"protocol.targets.{i}", TARGET_SCHEMA)
        if set(target) != {"name", "path"}:
            raise ConfigError(f"protocol.targets.{i}", "a target needs 'name' and 'path'")
        targets.append(TargetConfig(**target))
    values["targets"] = targets
    return ProtocolConfig(**values)


def parse_config(document: dict) -> ExperimentConfig:
    values = _section(document, "", ROOT_SCHEMA)
    seed = values.get("seed", 0)
    return ExperimentConfig(
        name=values.get("name", "experiment"),
        seed=seed,
        output_dir=values.get("output_dir"),
        dataset=_parse_dataset(values.get("dataset", {}), seed),
        model=_parse_model(values.get("model", {}), seed),
        train=_parse_train(values.get("train", {}), seed),
        attacks=[
            _parse_attack(spec, f"attacks.{i}") for i, spec in enumerate(values.get("attacks", []))
        ],
        protocol=_parse_protocol(values.get("protocol", {})),
    )


# --- Loading ---
def read_document(source: str | Path) -> dict:
    """A preset by name, else a JSON file."""
    if str(source) in PRESETS:
        return copy.deepcopy(PRESETS[str(source)])
    path = Path(source)
    if not path.is_file():
        msg = f"no such config file or preset (presets: {', '.join(PRESETS)})"
        raise ConfigError(str(source), msg)
    try:
        return read_json(path)
    except ValueError as exc:
        raise ConfigError(str(source), f"invalid JSON: {exc}") from exc


def apply_overrides(document: dict, assignments: list[str]) -> dict:
    for assignment in assignments:
        parsed = parse_override(assignment)
        if parsed is None:
            raise ConfigError(assignment, "override must look like dotted.key=value")
        parts, value = parsed
        try:
            set_dotted(document, parts, value)
        except TypeError as exc:
            raise ConfigError(".".join(parts), str(exc)) from exc
    return document


def load_config(
    source: str | Path,
    overrides: list[str] | None = None,
    seed: int | None = None,
    strict_determinism: bool | None = None,
) -> ExperimentConfig:
    document = apply_overrides(read_document(source), overrides or [])
    cfg = parse_config(document)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    if strict_determinism is not None:
        cfg = replace(cfg, train=replace(cfg.train, strict_determinism=strict_determinism))
    return cfg
