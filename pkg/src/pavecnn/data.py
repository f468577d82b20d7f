"""Image I/O, preprocessing, manifests, splitting and the synthetic corpus.

Images are read and written as binary Netpbm (P5 grayscale, P6 RGB, maxval
255).  Preprocessing follows the pipeline grayscale -> bilinear resize ->
divide by 255.  Manifests are headered CSV files (``path,label``) whose paths
are relative to the manifest's directory.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import FormatError, ValidationError
from .tensor import DTYPE, make_rng

TASK_LABELS: dict[str, tuple[str, ...]] = {
    "crack": ("noncrack", "crack"),
    "mark": ("mark", "mark_crack"),
    "severity": ("none", "moderate", "high"),
}

MANIFEST_HEADER = "path,label"


def check_task(task: str) -> str:
    if task not in TASK_LABELS:
        raise ValueError(f"unknown task {task!r}; expected one of {sorted(TASK_LABELS)}")
    return task


@dataclass
class Image:
    """8-bit image; ``pixels`` has shape ``[height, width, channels]``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"pixels must be [H, W, 1|3], got {px.shape}")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise ValueError("pixel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


# ---------------------------------------------------------------------------
# Netpbm

def _read_header(buf: bytes) -> tuple[list[bytes], int]:
    """Parse magic, width, height and maxval; return tokens and the data offset."""
    tokens: list[bytes] = []
    pos = 0
    n = len(buf)
    while len(tokens) < 4:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise FormatError("truncated header")
        if buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after maxval")
    return tokens, pos + 1


def load_image(path: str | os.PathLike) -> Image:
    """Decode a binary PGM (P5) or PPM (P6) file with maxval 255."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported magic {buf[:2]!r}; only binary P5/P6 are read")
    tokens, offset = _read_header(buf)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: non-numeric header field") from None
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported (need 255)")
    channels = 1 if tokens[0] == b"P5" else 3
    expected = width * height * channels
    raster = buf[offset:offset + expected]
    if len(raster) < expected:
        raise FormatError(f"{path}: truncated pixel data ({len(raster)} of {expected} bytes)")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels).copy()
    return Image(pixels)


def save_image(img: Image, path: str | os.PathLike) -> None:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + f"\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + np.ascontiguousarray(img.pixels).tobytes())


# ---------------------------------------------------------------------------
# preprocessing

def rgb_to_gray(img: Image) -> Image:
    """BT.601 luma, rounded half up, using exact integer arithmetic."""
    if img.channels != 3:
        raise ValueError(f"rgb_to_gray needs a 3-channel image, got {img.channels}")
    px = img.pixels.astype(np.int64)
    gray = (299 * px[..., 0] + 587 * px[..., 1] + 114 * px[..., 2] + 500) // 1000
    return Image(np.clip(gray, 0, 255).astype(np.uint8)[:, :, None])


def _bilinear_axis(out_len: int, in_len: int):
    scale = in_len / out_len
    src = (np.arange(out_len, dtype=DTYPE) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_len - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, in_len - 1)
    return lo, hi, src - lo


def resize_bilinear(img: Image, out_w: int, out_h: int) -> Image:
    """Bilinear resize with half-pixel centres, clamped at the borders."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output size must be positive, got {out_w}x{out_h}")
    if img.channels != 1:
        raise ValueError("resize_bilinear expects a single-channel image")
    src = img.pixels[:, :, 0].astype(DTYPE)
    y0, y1, fy = _bilinear_axis(out_h, img.height)
    x0, x1, fx = _bilinear_axis(out_w, img.width)
    fx = fx[None, :]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy[:, None]) + bottom * fy[:, None]
    out = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return Image(out[:, :, None])


def preprocess(img: Image, size: int) -> np.ndarray:
    """Grayscale + resize to ``size`` x ``size``; returns uint8 ``[size, size, 1]``."""
    if img.channels == 3:
        img = rgb_to_gray(img)
    if (img.width, img.height) != (size, size):
        img = resize_bilinear(img, size, size)
    return img.pixels


def normalize(pixels: np.ndarray) -> np.ndarray:
    """Map 8-bit samples to float64 in [0, 1]; float input passes through."""
    pixels = np.asarray(pixels)
    if np.issubdtype(pixels.dtype, np.integer):
        return pixels.astype(DTYPE) / 255.0
    return pixels.astype(DTYPE, copy=False)


@dataclass
class LabeledSample:
    input: np.ndarray
    label: int


def to_sample(img: Image, size: int, label_index: int) -> LabeledSample:
    if img.channels != 1:
        raise ValueError("to_sample expects a single-channel image; convert with rgb_to_gray")
    return LabeledSample(normalize(preprocess(img, size)), int(label_index))


# ---------------------------------------------------------------------------
# manifests

@dataclass
class Manifest:
    task: str
    entries: list[tuple[str, str]]
    root: Path = field(default_factory=Path)

    @property
    def class_names(self) -> tuple[str, ...]:
        return TASK_LABELS[self.task]

    @property
    def labels(self) -> np.ndarray:
        index = {name: i for i, name in enumerate(self.class_names)}
        return np.array([index[label] for _, label in self.entries], dtype=np.int64)

    def paths(self) -> list[Path]:
        return [self.root / p for p, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def load_manifest(path: str | os.PathLike, task: str) -> Manifest:
    """Parse and validate a ``path,label`` CSV for ``task``."""
    check_task(task)
    path = Path(path)
    legal = TASK_LABELS[task]
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise ValidationError(f"{path}: first line must be the header {MANIFEST_HEADER!r}")
    entries: list[tuple[str, str]] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 2:
            raise ValidationError(f"{path}:{lineno}: expected 2 fields, got {len(fields)}")
        rel, label = fields[0].strip(), fields[1].strip()
        if not rel:
            raise ValidationError(f"{path}:{lineno}: empty path")
        if label not in legal:
            raise ValidationError(f"{path}:{lineno}: label {label!r} not in {list(legal)} "
                                  f"for task {task!r}")
        if rel in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate path {rel!r} (first on line {seen[rel]})")
        seen[rel] = lineno
        entries.append((rel, label))
    if not entries:
        raise ValidationError(f"{path}: manifest has no rows")
    return Manifest(task, entries, path.parent)


def write_manifest(manifest: Manifest, path: str | os.PathLike) -> None:
    rows = [MANIFEST_HEADER] + [f"{p},{label}" for p, label in manifest.entries]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def load_dataset(manifest: Manifest, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Read every manifest image; returns uint8 ``[N, size, size, 1]`` and int labels.

    Inputs stay 8-bit to keep large corpora in memory; :func:`normalize` is
    applied per batch.
    """
    images = np.empty((len(manifest), size, size, 1), dtype=np.uint8)
    for i, p in enumerate(manifest.paths()):
        images[i] = preprocess(load_image(p), size)
    return images, manifest.labels


def split_dataset(n: int, val_ratio: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle of ``range(n)``; the first ``floor(n * (1 - val_ratio))`` indices train."""
    if not 0.0 < val_ratio < 1.0:
        raise ValueError(f"val_ratio must lie in (0, 1), got {val_ratio}")
    if n < 2:
        raise ValueError(f"need at least 2 samples to split, got {n}")
    # 5 * (1 - 0.8) evaluates to 0.999...; round off binary noise before flooring
    n_train = math.floor(round(n * (1.0 - val_ratio), 9))
    perm = make_rng(seed).permutation(n)
    return perm[:n_train], perm[n_train:]


# ---------------------------------------------------------------------------
# synthetic corpus

def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(150.0, 190.0)
    noise = rng.normal(0.0, 9.0, size=(size + 2, size + 2))
    # 3x3 box blur gives an asphalt-like grain instead of white noise
    grain = sum(noise[i:i + size, j:j + size] for i in range(3) for j in range(3)) / 3.0
    return np.clip(base + grain, 140.0, 200.0)


def _segment_distance(yy, xx, p, q):
    d = q - p
    denom = float(d @ d)
    if denom == 0.0:
        return np.hypot(yy - p[0], xx - p[1])
    t = np.clip(((yy - p[0]) * d[0] + (xx - p[1]) * d[1]) / denom, 0.0, 1.0)
    return np.hypot(yy - (p[0] + t * d[0]), xx - (p[1] + t * d[1]))


def _random_walk(rng, size: int, start=None, step_len: float | None = None) -> np.ndarray:
    """Polyline that wanders with drifting heading and reflects off the borders."""
    steps = int(rng.integers(5, 10))
    step_len = size / 8.0 if step_len is None else step_len
    lo, hi = 1.0, size - 2.0
    pt = np.asarray(start, dtype=DTYPE) if start is not None else rng.uniform(0.2 * size, 0.8 * size, 2)
    angle = rng.uniform(0.0, 2 * np.pi)
    pts = [pt]
    for _ in range(steps):
        angle += rng.normal(0.0, 0.5)
        d = np.array([np.sin(angle), np.cos(angle)])
        pt = pt + step_len * rng.uniform(0.6, 1.2) * d
        for axis in (0, 1):
            if pt[axis] < lo or pt[axis] > hi:
                pt[axis] = 2 * lo - pt[axis] if pt[axis] < lo else 2 * hi - pt[axis]
                d[axis] = -d[axis]
        pt = np.clip(pt, lo, hi)
        angle = np.arctan2(d[0], d[1])
        pts.append(pt)
    return np.array(pts)


def _draw_polyline(canvas, rng, points, width: float) -> None:
    size = canvas.shape[0]
    yy, xx = np.mgrid[0:size, 0:size].astype(DTYPE)
    dist = np.full(canvas.shape, np.inf)
    for p, q in zip(points[:-1], points[1:]):
        dist = np.minimum(dist, _segment_distance(yy, xx, p, q))
    mask = dist <= width / 2.0
    canvas[mask] = rng.uniform(20.0, 70.0, size=int(mask.sum()))


def _draw_cracks(canvas, rng, count: int) -> None:
    for _ in range(count):
        _draw_polyline(canvas, rng, _random_walk(rng, canvas.shape[0]), rng.uniform(1.0, 3.0))


def _draw_mesh(canvas, rng) -> None:
    size = canvas.shape[0]
    strokes = [_random_walk(rng, size, step_len=size / 12.0)]
    for _ in range(int(rng.integers(8, 13)) - 1):
        # branch off an existing stroke so the strokes intersect
        parent = strokes[int(rng.integers(len(strokes)))]
        start = parent[int(rng.integers(len(parent)))]
        strokes.append(_random_walk(rng, size, start=start, step_len=size / 12.0))
    for s in strokes:
        _draw_polyline(canvas, rng, s, rng.uniform(1.0, 3.0))


def _draw_band(canvas, rng) -> None:
    size = canvas.shape[0]
    yy, xx = np.mgrid[0:size, 0:size].astype(DTYPE)
    cy, cx = rng.uniform(0.3 * size, 0.7 * size, 2)
    angle = rng.uniform(0.0, np.pi)
    width = rng.uniform(6.0, 12.0)
    dist = np.abs((yy - cy) * np.cos(angle) - (xx - cx) * np.sin(angle))
    mask = dist <= width / 2.0
    canvas[mask] = rng.uniform(230.0, 255.0, size=int(mask.sum()))


def synthetic_image(label: str, size: int, rng: np.random.Generator) -> Image:
    """Draw one procedural pavement image for ``label``."""
    canvas = _background(rng, size)
    if label in ("crack", "moderate"):
        _draw_cracks(canvas, rng, int(rng.integers(1, 4)))
    elif label == "high":
        _draw_mesh(canvas, rng)
    elif label in ("mark", "mark_crack"):
        _draw_band(canvas, rng)
        if label == "mark_crack":
            _draw_cracks(canvas, rng, int(rng.integers(1, 4)))
    elif label not in ("noncrack", "none"):
        raise ValueError(f"no generator for label {label!r}")
    return Image(np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8))


def generate_synthetic_corpus(task: str, count_per_class: int, image_size: int, seed: int,
                              out_dir: str | os.PathLike) -> Manifest:
    """Write ``count_per_class`` PGM images per class plus ``manifest.csv`` under ``out_dir``.

    Rows interleave the classes.  Each image has its own generator seeded from
    ``(seed, class index, image index)``, so the corpus is reproducible bit for
    bit.
    """
    check_task(task)
    if count_per_class < 1:
        raise ValueError("count_per_class must be >= 1")
    if image_size < 32:
        raise ValueError("image_size must be >= 32")
    out = Path(out_dir)
    labels = TASK_LABELS[task]
    for label in labels:
        (out / label).mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count_per_class):
        for c, label in enumerate(labels):
            rel = f"{label}/{label}_{i:05d}.pgm"
            save_image(synthetic_image(label, image_size, make_rng([seed, c, i])), out / rel)
            entries.append((rel, label))
    manifest = Manifest(task, entries, out)
    write_manifest(manifest, out / "manifest.csv")
    return manifest
