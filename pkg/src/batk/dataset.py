"""Dataset manifests and PNG image I/O.

A dataset is a directory of 8-bit RGB PNGs plus a manifest CSV with
``path,label`` rows (paths relative to the manifest file). Images decode to
float32 in the model's pixel domain: [0,255] keeps the raw 8-bit values,
[0,1] divides by 255.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .tensor import PixelDomain, Tensor


class ManifestError(ValueError):
    pass


@dataclass
class DatasetManifest:
    entries: list[tuple[Path, int]]
    label_names: list[str] | None = None
    root: Path = field(default_factory=Path)


def load_manifest(path) -> DatasetManifest:
    """Read a ``path,label`` CSV; a ``labels.txt`` sibling (one name per
    line) provides label names when present."""
    path = Path(path)
    entries = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        for i, row in enumerate(reader):
            if not row or row[0].startswith("#"):
                continue
            if i == 0 and row[0].strip().lower() == "path":
                continue
            if len(row) < 2:
                raise ManifestError(f"{path}:{i + 1}: expected 'path,label', got {row!r}")
            try:
                label = int(row[1])
            except ValueError as e:
                raise ManifestError(f"{path}:{i + 1}: label {row[1]!r} is not an integer") from e
            entries.append((path.parent / row[0], label))
    if not entries:
        raise ManifestError(f"{path}: no entries")
    names = None
    names_path = path.parent / "labels.txt"
    if names_path.exists():
        names = [line.strip() for line in names_path.read_text().splitlines() if line.strip()]
    return DatasetManifest(entries=entries, label_names=names, root=path.parent)


def load_png(path, domain: PixelDomain) -> Tensor:
    """Decode an RGB PNG to a float32 (H, W, 3) tensor in the pixel domain."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    if domain.hi <= 1.0:
        arr = arr / np.float32(255.0)
    return arr


def save_png(path, image: Tensor, domain: PixelDomain) -> None:
    """Quantize a float image in the pixel domain to 8 bits and write a PNG."""
    scale = 255.0 / domain.hi
    q = np.clip(np.rint(np.asarray(image, dtype=np.float64) * scale), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path, format="PNG")
