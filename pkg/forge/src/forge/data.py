"""Procedural 10-class texture dataset at 32x32x3.

Each class is a distinct geometric pattern (stripes, checker, blob, ring,
cross, ...) with randomized colors, phase, position jitter and pixel noise.
Easy enough for a small CNN to learn confidently in a few epochs, rich
enough that the decision is not carried by any single pixel.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

SIZE = 32
CLASS_NAMES = [
    "h_stripes",
    "v_stripes",
    "checker",
    "blob",
    "square",
    "gradient",
    "cross",
    "quadrants",
    "ring",
    "d_stripes",
]


def _palette(rng) -> tuple[np.ndarray, np.ndarray]:
    """Two well-separated random colors (foreground, background)."""
    fg = rng.uniform(120, 255, 3)
    bg = rng.uniform(0, 110, 3)
    if rng.random() < 0.5:
        fg, bg = bg, fg
    return fg, bg


def _coords():
    ys, xs = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    return ys, xs


def render_class(label: int, rng: np.random.Generator) -> np.ndarray:
    """One (32, 32, 3) uint8 image of the given class."""
    ys, xs = _coords()
    fg, bg = _palette(rng)
    cy = SIZE / 2 + rng.uniform(-4, 4)
    cx = SIZE / 2 + rng.uniform(-4, 4)
    phase = rng.uniform(0, 2 * np.pi)
    period = rng.uniform(5, 9)

    if label == 0:  # horizontal stripes
        field = np.sin(2 * np.pi * ys / period + phase) > 0
    elif label == 1:  # vertical stripes
        field = np.sin(2 * np.pi * xs / period + phase) > 0
    elif label == 2:  # checkerboard
        cell = rng.integers(3, 6)
        field = ((ys // cell) + (xs // cell)) % 2 == 0
    elif label == 3:  # filled blob
        r = rng.uniform(6, 11)
        field = (ys - cy) ** 2 + (xs - cx) ** 2 < r**2
    elif label == 4:  # filled square
        half = rng.uniform(5, 9)
        field = (np.abs(ys - cy) < half) & (np.abs(xs - cx) < half)
    elif label == 5:  # diagonal gradient (continuous, no hard edge)
        t = (ys + xs) / (2 * SIZE - 2)
        if rng.random() < 0.5:
            t = 1.0 - t
        img = bg[None, None, :] + (fg - bg)[None, None, :] * t[..., None]
        return _finish(img, rng)
    elif label == 6:  # cross
        arm = rng.uniform(2.0, 4.0)
        field = (np.abs(ys - cy) < arm) | (np.abs(xs - cx) < arm)
    elif label == 7:  # quadrants
        field = ((ys < cy) & (xs < cx)) | ((ys >= cy) & (xs >= cx))
    elif label == 8:  # ring
        r = rng.uniform(8, 12)
        thick = rng.uniform(2.0, 3.5)
        d = np.sqrt((ys - cy) ** 2 + (xs - cx) ** 2)
        field = np.abs(d - r) < thick
    elif label == 9:  # diagonal stripes
        field = np.sin(2 * np.pi * (ys + xs) / period + phase) > 0
    else:
        raise ValueError(f"unknown class {label}")

    img = np.where(field[..., None], fg[None, None, :], bg[None, None, :])
    return _finish(img, rng)


def _finish(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    img = img + rng.normal(0, 12, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def generate_split(out_dir, count: int, seed: int, prefix: str) -> None:
    """Write ``count`` images cycling through the classes, plus manifest.csv
    and labels.txt."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(count):
        label = i % len(CLASS_NAMES)
        img = render_class(label, rng)
        name = f"{prefix}{i:04d}.png"
        Image.fromarray(img, mode="RGB").save(out_dir / name)
        rows.append((name, label))
    with open(out_dir / "manifest.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["path", "label"])
        writer.writerows(rows)
    (out_dir / "labels.txt").write_text("\n".join(CLASS_NAMES) + "\n")


def load_split(data_dir):
    """Read a generated split back as (images float32 NHWC in [0,255], labels)."""
    data_dir = Path(data_dir)
    images, labels = [], []
    with open(data_dir / "manifest.csv", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        for row in reader:
            if not row or row[0] == "path":
                continue
            with Image.open(data_dir / row[0]) as img:
                images.append(np.asarray(img.convert("RGB"), dtype=np.float32))
            labels.append(int(row[1]))
    return np.stack(images), np.array(labels, dtype=np.int64)
