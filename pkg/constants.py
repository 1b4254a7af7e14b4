# --- Defaults ---
CIFAR_EPSILON = 8 / 255
TINY_IMAGENET_EPSILON = 4 / 255
PGD_STEPS = 10
PGD_STEP_SIZE = 2 / 255
AA_RESTARTS = 5
AA_LABEL = "AA-substitute (PGD×5 restarts)"

DEFAULT_EPOCHS = 200
DEFAULT_BATCH_SIZE = 2048
DEFAULT_LR = 0.001
DEFAULT_MOMENTUM = 0.9
DEFAULT_WEIGHT_DECAY = 0.0005
DEFAULT_CHECKPOINT_EVERY = 50

DEFAULT_LAMBDA = 5e-3
DEFAULT_TAU = 2.0
DEFAULT_ALPHA0 = 0.5
DEFAULT_DELTA = 1 / 400

DENOMINATOR_GUARD = 1e-12
BUDGET_TOLERANCE = 1e-6
DEGENERATE_VARIANCE = 1e-12


# --- Datasets ---
DATASET_KINDS = ("cifar10", "cifar100", "tiny-imagenet", "synthetic")
SPLITS = ("train", "test")

CIFAR_IMAGE_SPEC = (3, 32, 32)
CIFAR_RECORD_PIXELS = 3 * 32 * 32
CIFAR_NUM_CLASSES = {"c10": 10, "c100": 100}
CIFAR_LABEL_BYTES = {"c10": 1, "c100": 2}
CIFAR_FILES = {
    ("c10", "train"): [f"data_batch_{i}.bin" for i in range(1, 6)],
    ("c10", "test"): ["test_batch.bin"],
    ("c100", "train"): ["train.bin"],
    ("c100", "test"): ["test.bin"],
}

TINY_IMAGENET_IMAGE_SPEC = (3, 64, 64)
TINY_IMAGENET_WNIDS = "wnids.txt"
TINY_IMAGENET_VAL_ANNOTATIONS = "val_annotations.txt"

# Per-channel statistics applied inside the model's first layer.
DATASET_MEAN = {
    "cifar10": (0.4914, 0.4822, 0.4465),
    "cifar100": (0.5071, 0.4865, 0.4409),
    "tiny-imagenet": (0.4802, 0.4481, 0.3975),
}
DATASET_STD = {
    "cifar10": (0.2470, 0.2435, 0.2616),
    "cifar100": (0.2673, 0.2564, 0.2762),
    "tiny-imagenet": (0.2770, 0.2691, 0.2821),
}

SYNTHETIC_NOISE_STD = 0.08
EVAL_BATCH_SIZE = 500


# --- Training ---
PERTURB_MODES = ("random", "fgsm", "pgd", "aa")
TRAIN_MODES = ("standard", "lisard")
CLASS_TERMS = ("both", "clean", "random")
NOISE_READINGS = ("variance", "std")
ATTACK_KINDS = ("fgsm", "pgd")

RECORD_COLUMNS = ("epoch", "alpha", "l_c", "l_r", "l_s", "composite", "train_accuracy")
TIMING_COLUMNS = ("epoch", "wall_time")


# --- Evaluation ---
CLEAN_COLUMN = "Clean"
STATISTIC_PRINCIPAL_AXIS = "pc1-projection"
STATISTIC_L2_NORM = "l2-norm"
DPRIME_DEFINITION = "|mu_a - mu_b| / sqrt((var_a + var_b) / 2), unbiased variances"


# --- Ablation Suites ---
SUITES = ("perturb-mode", "loss-terms", "components")
PERTURB_SUITE = ("random", "fgsm", "pgd")
LOSS_TERMS_SUITE = {
    "L_C only": "clean",
    "L_R only": "random",
    "L_C + L_R": "both",
}
# row label -> (keep alpha schedule, keep temperature)
COMPONENTS_SUITE = {
    "wo/ alpha and wo/ tau": (False, False),
    "w/ alpha": (True, False),
    "w/ tau": (False, True),
    "w/ alpha and w/ tau": (True, True),
}


# --- Output Tree ---
ENV_OUTPUT_ROOT = "LISARD_OUTPUT_ROOT"
ENV_DEVICE = "LISARD_DEVICE"
DEFAULT_OUTPUT_ROOT = "runs"

WEIGHTS_DIR = "weights"
ADVSETS_DIR = "advsets"
REPORTS_DIR = "reports"
RECORDS_DIR = "records"
CHECKPOINTS_DIR = "checkpoints"
CONFIG_SNAPSHOT = "config.snapshot.json"
MODEL_WEIGHTS = "model.pt"
SURROGATE_WEIGHTS = "surrogate.pt"
TRAIN_RECORD = "train_record.csv"
TRAIN_TIMINGS = "train_timings.csv"
EVAL_REPORT_JSON = "eval_report.json"
EVAL_REPORT_TABLE = "eval_report.txt"
ADVSET_IMAGES = "images.f32"
ADVSET_MANIFEST = "manifest.json"
ARTIFACT_FORMAT = "lisard-advset/1"
VOLATILE_MANIFEST_KEYS = ("created_at",)
WEIGHTS_FORMAT = "lisard-weights/1"


# --- Log & User-Facing Messages ---
MSG_DATASET_LOADED = "Loaded {name}/{split}: N={n}, K={k}, image_spec={spec}"
MSG_EPOCH_SUMMARY = (
    "epoch {epoch}/{epochs} alpha={alpha:.4f} l_c={l_c:.4f} l_r={l_r:.4f} "
    "l_s={l_s:.4f} loss={composite:.4f} acc={acc:.4f} ({wall:.1f}s)"
)
MSG_RESUMING = "Resuming from {path} at epoch {epoch}"
MSG_CHECKPOINT_INCOMPATIBLE = "Ignoring checkpoint {path}: written by a different run"
MSG_CHECKPOINTS_CLEARED = "Removed {n} stale checkpoint(s) from {path}"
MSG_CACHE_HIT = "cache hit: {name} attack set {key} reused from {path}"
MSG_CACHE_MISS = "cache miss: generating {name} attack set {key}"
MSG_STEP_SIZE_WARNING = "PGD step size {step} exceeds epsilon {eps}"
MSG_MICRO_BATCH = (
    "Accumulating {n} micro-batches of {size}: classification terms span the full batch, "
    "the similarity matrix is computed per micro-batch"
)
MSG_AXIS_FALLBACK = "Degenerate embedding covariance; falling back to embedding L2 norm"
MSG_REPORT_WRITTEN = "Report written to {path}"
MSG_WEIGHTS_WRITTEN = "Weights written to {path}"
MSG_FIGURE_WRITTEN = "Figure written to {path}"

# Errors
MSG_ERROR_GENERIC = "An unexpected error occurred: {}"
MSG_ERROR_UNKNOWN_SUITE = "Unknown suite '{}'. Known suites: {}"
MSG_ERROR_UNKNOWN_ATTACK = "Unknown attack '{}'. Known attacks: {}"
MSG_ERROR_UNKNOWN_BACKBONE = "Unknown backbone '{}'. Known backbones: {}"
MSG_ERROR_MISSING_WEIGHTS = "Missing weights file: {}"
MSG_ERROR_NO_SURROGATE = "No surrogate weights configured (protocol.surrogate)"
MSG_ERROR_NO_REPORT = "No report found at {}"


# --- Presets ---
# Shipped experiment documents, selectable with --config NAME.
PRESETS = {
    "paper-cifar10-lisard": {
        "name": "paper-cifar10-lisard",
        "seed": 0,
        "dataset": {"kind": "cifar10", "path": "data/cifar-10-batches-bin"},
        "model": {"name": "resnet18"},
        "train": {
            "epochs": DEFAULT_EPOCHS,
            "batch_size": DEFAULT_BATCH_SIZE,
            "mode": "lisard",
            "perturb_mode": "random",
            "noise": {"epsilon": CIFAR_EPSILON, "reading": "variance"},
            "attack": {"kind": "pgd", "epsilon": CIFAR_EPSILON},
            "weights": {"tau": DEFAULT_TAU},
        },
        "attacks": [
            {"kind": "fgsm", "epsilon": CIFAR_EPSILON, "name": "FGSM"},
            {"kind": "pgd", "epsilon": CIFAR_EPSILON, "name": "PGD"},
            {"kind": "aa", "epsilon": CIFAR_EPSILON},
        ],
        "protocol": {"surrogate": "weights/surrogate.pt"},
    },
    "paper-tinyimagenet": {
        "name": "paper-tinyimagenet",
        "seed": 0,
        "dataset": {"kind": "tiny-imagenet", "path": "data/tiny-imagenet-200"},
        "model": {"name": "resnet18"},
        "train": {
            "epochs": DEFAULT_EPOCHS,
            "batch_size": DEFAULT_BATCH_SIZE,
            "mode": "lisard",
            "perturb_mode": "random",
            "noise": {"epsilon": TINY_IMAGENET_EPSILON, "reading": "variance"},
            "attack": {"kind": "pgd", "epsilon": TINY_IMAGENET_EPSILON},
            "weights": {"tau": DEFAULT_TAU},
        },
        "attacks": [
            {"kind": "fgsm", "epsilon": TINY_IMAGENET_EPSILON, "name": "FGSM"},
            {"kind": "pgd", "epsilon": TINY_IMAGENET_EPSILON, "name": "PGD"},
            {"kind": "aa", "epsilon": TINY_IMAGENET_EPSILON},
        ],
        "protocol": {"surrogate": "weights/surrogate.pt"},
    },
    "desk-toy": {
        "name": "desk-toy",
        "seed": 0,
        "dataset": {
            "kind": "synthetic",
            "num_classes": 10,
            "image_spec": [3, 32, 32],
            "synthetic_train": 2048,
            "synthetic_test": 512,
        },
        "model": {"name": "toycnn"},
        "train": {
            "epochs": 10,
            "batch_size": 128,
            "lr": 0.01,
            "mode": "lisard",
            "perturb_mode": "random",
            "noise": {"epsilon": CIFAR_EPSILON, "reading": "variance"},
            "attack": {"kind": "pgd", "epsilon": CIFAR_EPSILON},
            "weights": {"tau": DEFAULT_TAU},
            "checkpoint_every": 5,
        },
        "attacks": [
            {"kind": "fgsm", "epsilon": CIFAR_EPSILON, "name": "FGSM"},
            {"kind": "pgd", "epsilon": CIFAR_EPSILON, "name": "PGD"},
            {"kind": "aa", "epsilon": CIFAR_EPSILON},
        ],
        "protocol": {},
    },
}
