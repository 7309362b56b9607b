"""
Golden-file corpus for the augmentation presets.

Each case is one preset applied to the 4×4 reference image under one seed.
Outputs are stored as raw little-endian float32 (H×W×3, C order) next to a
whitespace-separated manifest::

    # case preset seed height width file
    all_seed42 all 42 4 4 all_seed42.f32
"""
import logging
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from app.core.augment import RngStream, apply, preset
from app.core.errors import FormatError, UsageError
from app.core.exporter import atomic_write_bytes
from app.core.schemas import PRESET_NAMES, AugmentSettings

logger = logging.getLogger(__name__)

GOLDEN_SEEDS = (0, 1, 2, 42)
INPUT_FILE = "input.u8"
MANIFEST_FILE = "manifest.txt"
REFERENCE_SIZE = 4


class GoldenCase(NamedTuple):
    name: str
    preset: str
    seed: int
    height: int
    width: int
    file: str


def reference_image(size: int = REFERENCE_SIZE) -> np.ndarray:
    """Deterministic uint8 test pattern: pixel (i, j, c) = (17i + 31j + 53c) mod 256."""
    i, j, c = np.meshgrid(np.arange(size), np.arange(size), np.arange(3), indexing="ij")
    return ((17 * i + 31 * j + 53 * c) % 256).astype(np.uint8)


def golden_output(preset_name: str, seed: int, image: np.ndarray,
                  settings: Optional[AugmentSettings] = None) -> np.ndarray:
    return apply(preset(preset_name, settings), image, RngStream(seed)).astype("<f4")


def _parse_manifest(text: str) -> List[GoldenCase]:
    cases = []
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise FormatError(f"{MANIFEST_FILE} line {number}: expected 6 fields, got {len(parts)}")
        name, preset_name, seed, height, width, file = parts
        try:
            cases.append(GoldenCase(name, preset_name, int(seed), int(height), int(width), file))
        except ValueError as e:
            raise FormatError(f"{MANIFEST_FILE} line {number}: {e}") from e
    return cases


def write_golden_corpus(
    directory: Path,
    seeds: Sequence[int] = GOLDEN_SEEDS,
    settings: Optional[AugmentSettings] = None,
    force: bool = False,
) -> List[GoldenCase]:
    """
    Regenerate the corpus: every preset × every seed.

    Args:
        directory: Target directory (created if missing)
        seeds: Seeds per preset
        settings: Augmentation constants
        force: Overwrite an existing corpus

    Returns:
        The cases written, in manifest order
    """
    directory = Path(directory)
    if (directory / MANIFEST_FILE).exists() and not force:
        raise UsageError(f"golden corpus already exists in {directory}; pass --force to overwrite")

    image = reference_image()
    atomic_write_bytes(directory / INPUT_FILE, image.tobytes())
    cases: List[GoldenCase] = []
    for preset_name in PRESET_NAMES:
        for seed in seeds:
            output = golden_output(preset_name, seed, image, settings)
            case = GoldenCase(
                f"{preset_name}_seed{seed}", preset_name, seed, output.shape[0], output.shape[1],
                f"{preset_name}_seed{seed}.f32",
            )
            atomic_write_bytes(directory / case.file, output.tobytes())
            cases.append(case)

    lines = ["# case preset seed height width file"] + [" ".join(str(field) for field in case) for case in cases]
    atomic_write_bytes(directory / MANIFEST_FILE, ("\n".join(lines) + "\n").encode("utf-8"))
    logger.info(f"Wrote {len(cases)} golden cases to {directory}")
    return cases


def verify_golden_corpus(directory: Path, settings: Optional[AugmentSettings] = None) -> List[str]:
    """Recompute every case and return the names whose bytes differ from the stored output."""
    directory = Path(directory)
    manifest = directory / MANIFEST_FILE
    if not manifest.is_file():
        raise UsageError(f"no golden corpus in {directory}")
    raw = (directory / INPUT_FILE).read_bytes() if (directory / INPUT_FILE).is_file() else b""
    if len(raw) != REFERENCE_SIZE * REFERENCE_SIZE * 3:
        raise FormatError(f"{INPUT_FILE}: expected {REFERENCE_SIZE * REFERENCE_SIZE * 3} bytes, got {len(raw)}")
    image = np.frombuffer(raw, dtype=np.uint8).reshape(REFERENCE_SIZE, REFERENCE_SIZE, 3)

    mismatched = []
    cases = _parse_manifest(manifest.read_text(encoding="utf-8"))
    for case in cases:
        stored = (directory / case.file).read_bytes() if (directory / case.file).is_file() else b""
        if golden_output(case.preset, case.seed, image, settings).tobytes() != stored:
            mismatched.append(case.name)
    if mismatched:
        logger.warning(f"{len(mismatched)} of {len(cases)} golden cases differ: {', '.join(mismatched)}")
    else:
        logger.info(f"All {len(cases)} golden cases match")
    return mismatched
