import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any

import numpy as np
import torch

from constants import ENV_DEVICE

logger = logging.getLogger(__name__)


# --- Seeds & Random Streams ---
def derive_seed(*parts: int) -> int:
    """Mixes integer parts into one 63-bit seed; the same parts always give the same seed."""
    state = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(state.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def torch_generator(seed: int) -> torch.Generator:
    """A CPU generator seeded deterministically; samples are moved to the target device."""
    generator = torch.Generator(device="cpu")
    generator.manual_seed(seed)
    return generator


def enable_strict_determinism(enabled: bool) -> None:  # noqa: FBT001
    """Trades speed for bit-reproducible kernels."""
    if enabled:
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
    torch.use_deterministic_algorithms(enabled)
    torch.backends.cudnn.benchmark = not enabled
    torch.backends.cudnn.deterministic = enabled


def select_device() -> torch.device:
    forced = os.environ.get(ENV_DEVICE)
    if forced:
        return torch.device(forced)
    return torch.device("cuda" if torch.cuda.is_available() else "cpu")


# --- Hashing & Serialization ---
def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Path) -> str:
    """Streams a file through SHA-256."""
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def hash_payload(payload: Any) -> str:
    """Stable hash of a JSON-serializable document."""
    return sha256_bytes(json.dumps(payload, sort_keys=True, separators=(",", ":")).encode())


def write_json(path: Path, payload: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(payload), encoding="utf-8")


def read_json(path: Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# --- Overrides ---
def parse_override(assignment: str) -> tuple[list[str], Any] | None:
    """Parses `dotted.key=value`; the value is read as JSON, else kept as a string."""
    if "=" not in assignment:
        return None
    key, raw = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        return None
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts, value


def set_dotted(document: dict, parts: list[str], value: Any) -> None:
    node = document
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            msg = f"cannot descend into non-object at '{part}'"
            raise TypeError(msg)
    node[parts[-1]] = value


# --- Formatting ---
def format_duration(seconds: float) -> str:
    """Formats seconds as h:mm:ss."""
    total = round(max(seconds, 0.0))
    hours, rest = divmod(total, 3600)
    minutes, secs = divmod(rest, 60)
    return f"{hours}:{minutes:02d}:{secs:02d}"


def format_percent(value: float) -> str:
    try:
        return f"{100.0 * float(value):.2f}"
    except (ValueError, TypeError):
        return "n/a"
