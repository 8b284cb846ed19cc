"""Image and label-map file formats.

Images come in as 8- or 16-bit PNG (or anything Pillow decodes) and are
normalized to (H, W, 3) float64 in [0, 1].  Label maps travel either as
16-bit grayscale PNG or as CSV with a ``H,W`` header line followed by H
rows of W comma-separated integers.  All decode failures raise
``InputError`` so the command-line layer can map them to one exit code.
"""

from __future__ import annotations

import colorsys
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InputError

_GOLDEN = 0.6180339887498949  # 1/phi: equidistributes hue steps


def _quantize(hue: float, value: float) -> tuple[int, int, int]:
    r, g, b = colorsys.hsv_to_rgb(hue, 0.65, value)
    return (int(round(r * 255)), int(round(g * 255)), int(round(b * 255)))


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file to (H, W, 3) float64 in [0, 1]."""
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in ("I", "I;16", "I;16B", "I;16L"):
                arr = np.asarray(img, dtype=np.float64) / 65535.0
                return np.repeat(arr[:, :, None], 3, axis=2)
            arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InputError(f"cannot read image {path}: unexpected shape {arr.shape}")
    return arr


def load_labels(path: str | Path) -> np.ndarray:
    """Decode a label map from 16-bit PNG or headered CSV, by extension."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _load_labels_csv(path)
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode not in ("I", "I;16", "I;16B", "I;16L", "L", "P"):
                raise InputError(
                    f"label PNG {path} must be grayscale, got mode {img.mode}"
                )
            if img.mode == "P":
                img = img.convert("L")
            arr = np.asarray(img, dtype=np.int64)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise InputError(f"cannot read label map {path}: {exc}") from exc
    if arr.ndim != 2:
        raise InputError(f"label map {path} is not single-channel")
    return arr


def _load_labels_csv(path: Path) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read label map {path}: {exc}") from exc
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise InputError(f"label CSV {path} is empty")
    try:
        h, w = (int(v) for v in lines[0].split(","))
    except ValueError as exc:
        raise InputError(f"label CSV {path}: bad header {lines[0]!r}") from exc
    if h < 1 or w < 1 or len(lines) != h + 1:
        raise InputError(f"label CSV {path}: expected {h} rows after header")
    out = np.empty((h, w), dtype=np.int64)
    for r, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != w:
            raise InputError(f"label CSV {path}: row {r} has {len(cells)} values")
        try:
            out[r] = [int(c) for c in cells]
        except ValueError as exc:
            raise InputError(f"label CSV {path}: non-integer in row {r}") from exc
    return out


def save_labels_csv(labels: np.ndarray, path: str | Path) -> None:
    """Write a label map as the headered CSV format."""
    labels = np.asarray(labels)
    h, w = labels.shape
    rows = [f"{h},{w}"]
    rows.extend(",".join(str(int(v)) for v in row) for row in labels)
    Path(path).write_text("\n".join(rows) + "\n")


def save_labels_png(labels: np.ndarray, path: str | Path) -> None:
    """Write a label map as 16-bit grayscale PNG (ids must fit in uint16)."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 65535:
        raise InputError("label ids outside uint16 range cannot be saved as PNG")
    Image.fromarray(labels.astype(np.uint16)).save(path)


def colorize(labels: np.ndarray, seed: int = 0) -> np.ndarray:
    """Assign a distinct RGB color to every label id.

    Hues advance by the golden ratio from a seed-dependent start, which
    spreads any number of labels around the wheel; a collision check on
    quantized triplets nudges brightness so distinctness is guaranteed.
    """
    labels = np.asarray(labels)
    ids = np.unique(labels)
    used: set[tuple[int, int, int]] = set()
    table = {}
    for idx, label in enumerate(ids):
        hue = (seed * _GOLDEN + idx * _GOLDEN) % 1.0
        value = 0.95
        rgb = _quantize(hue, value)
        for _ in range(64):
            if rgb not in used:
                break
            value = 0.35 + (value - 0.35 + 0.07) % 0.6
            rgb = _quantize(hue, value)
        while rgb in used:
            # Exhausted the hue/value orbit: fall back to raw enumeration
            # so N labels always get N distinct triplets.
            flat = rgb[0] * 65536 + rgb[1] * 256 + rgb[2]
            flat = (flat + 1) % 16777216
            rgb = (flat // 65536, (flat // 256) % 256, flat % 256)
        used.add(rgb)
        table[label] = rgb
    out = np.zeros(labels.shape + (3,), dtype=np.uint8)
    for label, rgb in table.items():
        out[labels == label] = rgb
    return out


def save_colorized_png(labels: np.ndarray, path: str | Path, seed: int = 0) -> None:
    """Write the colorized rendering of a label map."""
    Image.fromarray(colorize(labels, seed)).save(path)
