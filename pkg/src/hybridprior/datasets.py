"""Procedural image families and PNG I/O.

``blobs`` is the in-distribution family the prior is trained on: 4 to 6
anisotropic Gaussian bumps laid out like a face (head, two small eyes, a
mouth, optionally hair and a nose) over a smooth colour gradient.
``stripes`` and ``checker`` are oriented periodic patterns the prior never
sees.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

FAMILIES = ("blobs", "stripes", "checker")
IN_DISTRIBUTION = ("blobs",)


@dataclass(frozen=True)
class ImageDistribution:
    family: str = "blobs"
    size: int = 64
    seed: int = 0
    params: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown image family {self.family!r}; choose from {FAMILIES}")
        if self.size < 2:
            raise ValueError("image size must be >= 2")

    def to_dict(self) -> dict:
        return {"family": self.family, "size": self.size, "seed": self.seed, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "ImageDistribution":
        return cls(d["family"], int(d.get("size", 64)), int(d.get("seed", 0)), dict(d.get("params", {})))


def _rng(dist: ImageDistribution, index: int) -> np.random.Generator:
    tag = zlib.crc32(dist.family.encode())
    return np.random.default_rng([dist.seed, index, tag])


def _bump(xx, yy, cx, cy, sx, sy, angle):
    c, s = np.cos(angle), np.sin(angle)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return np.exp(-0.5 * ((u / sx) ** 2 + (v / sy) ** 2))


def _blobs(rng: np.random.Generator, n: int, params: dict) -> np.ndarray:
    yy, xx = np.mgrid[0:n, 0:n] / (n - 1)
    base = rng.uniform(0.3, 0.6, 3)
    tilt = rng.normal(0.0, 0.1, 2)
    img = base[:, None, None] + (tilt[0] * (xx - 0.5) + tilt[1] * (yy - 0.5))

    # correlated RGB: a shared luminance times a mildly perturbed hue
    def colour(lum, hue):
        return lum * np.asarray(hue) * (1.0 + rng.normal(0.0, 0.08, 3))

    jitter = params.get("jitter", 0.04)
    cx, cy = 0.5 + rng.uniform(-jitter, jitter, 2)
    sx, sy = rng.uniform(0.17, 0.21), rng.uniform(0.21, 0.26)
    head = colour(rng.uniform(0.3, 0.45), (1.0, 0.85, 0.7))
    img += head[:, None, None] * _bump(xx, yy, cx, cy, sx, sy, rng.uniform(-0.15, 0.15))
    gap, lift = rng.uniform(0.075, 0.095), rng.uniform(0.05, 0.07)
    eye = colour(rng.uniform(-0.55, -0.4), (1.0, 1.0, 1.0))
    esz = rng.uniform(0.018, 0.026)
    for side in (-1, 1):
        img += eye[:, None, None] * _bump(xx, yy, cx + side * gap, cy - lift, esz, esz * 0.8, 0.0)
    mouth = colour(rng.uniform(-0.35, -0.2), (0.6, 1.0, 1.0))
    img += mouth[:, None, None] * _bump(xx, yy, cx, cy + rng.uniform(0.09, 0.12),
                                        rng.uniform(0.045, 0.065), 0.015, rng.uniform(-0.1, 0.1))
    extras = rng.integers(0, 3)
    if extras >= 1:  # hair
        hair = colour(rng.uniform(-0.35, -0.15), (1.0, 0.9, 0.8))
        img += hair[:, None, None] * _bump(xx, yy, cx, cy - sy * 1.05, sx * 1.1, 0.07, 0.0)
    if extras >= 2:  # nose
        img += colour(0.12, (1.0, 0.8, 0.7))[:, None, None] * _bump(xx, yy, cx, cy + 0.02, 0.015, 0.035, 0.0)
    return img


def _periodic(rng: np.random.Generator, n: int, checker: bool) -> np.ndarray:
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    angle = rng.uniform(0, np.pi)
    period = rng.uniform(6.0, 16.0)
    sharp = rng.uniform(2.0, 6.0)
    u = xx * np.cos(angle) + yy * np.sin(angle)
    w = rng.uniform(0, 2 * np.pi) + 2 * np.pi * u / period
    pattern = np.tanh(sharp * np.sin(w))
    if checker:
        v = -xx * np.sin(angle) + yy * np.cos(angle)
        pattern = pattern * np.tanh(sharp * np.sin(rng.uniform(0, 2 * np.pi) + 2 * np.pi * v / period))
    t = 0.5 + 0.5 * pattern
    c1, c2 = rng.uniform(0.05, 0.95, (2, 3))
    return c1[:, None, None] * t + c2[:, None, None] * (1 - t)


def sample_image(dist: ImageDistribution, index: int) -> np.ndarray:
    rng = _rng(dist, index)
    if dist.family == "blobs":
        img = _blobs(rng, dist.size, dist.params)
    else:
        img = _periodic(rng, dist.size, dist.family == "checker")
    return np.clip(img, 0.0, 1.0)


def sample_images(dist: ImageDistribution, count: int, start: int = 0) -> list[np.ndarray]:
    """Images ``start .. start+count-1`` of the family, each ``[3, size, size]`` in [0, 1]."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return [sample_image(dist, i) for i in range(start, start + count)]


def write_manifest(dist: ImageDistribution, indices: Sequence[int], path) -> None:
    doc = {**dist.to_dict(), "indices": [int(i) for i in indices]}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> tuple[ImageDistribution, list[int]]:
    doc = json.loads(Path(path).read_text())
    return ImageDistribution.from_dict(doc), list(doc["indices"])


def to_uint8(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected an RGB image of shape [3, H, W], got {image.shape}")
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)


def save_png(image: np.ndarray, path) -> None:
    Image.fromarray(to_uint8(image)).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise ValueError(f"{path}: expected an RGB PNG, found mode {im.mode}")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1).copy()


LABEL_WIDTH = 72
LABEL_HEIGHT = 14


def sample_sheet(grid: Sequence[Sequence[np.ndarray]], path, row_labels: Sequence[str] | None = None,
                 col_labels: Sequence[str] | None = None, margin: int = 4) -> np.ndarray:
    """Tile ``grid[row][col]`` images onto a white canvas with optional labels; returns the canvas."""
    if not grid or not grid[0]:
        raise ValueError("sample sheet needs at least one image")
    cols = len(grid[0])
    if any(len(r) != cols for r in grid):
        raise ValueError("every row of the sheet must have the same number of images")
    h, w = np.shape(grid[0][0])[1:]
    if any(np.shape(im) != (3, h, w) for r in grid for im in r):
        raise ValueError("sheet images must share one size")

    left = margin + (LABEL_WIDTH if row_labels else 0)
    top = margin + (LABEL_HEIGHT if col_labels else 0)
    canvas = np.full((top + len(grid) * h + margin, left + cols * w + margin, 3), 255, np.uint8)
    for i, row in enumerate(grid):
        for j, im in enumerate(row):
            canvas[top + i * h: top + (i + 1) * h, left + j * w: left + (j + 1) * w] = to_uint8(im)

    pic = Image.fromarray(canvas)
    if row_labels or col_labels:
        draw = ImageDraw.Draw(pic)
        font = ImageFont.load_default()
        for i, text in enumerate(row_labels or []):
            draw.text((margin, top + i * h + h // 2 - 5), str(text), fill=(0, 0, 0), font=font)
        for j, text in enumerate(col_labels or []):
            draw.text((left + j * w + 2, margin), str(text), fill=(0, 0, 0), font=font)
    pic.save(path, format="PNG")
    return np.asarray(pic)
