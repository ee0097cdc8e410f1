"""Seeded synthetic leaf corpus so every experiment runs without real data.

Images are procedural leaf-like textures: a smooth green field with vein
streaks plus small high-contrast surface marks (dots, dashes, rings). The
classification profile assigns mark patterns to classes; two class pairs
share a color and differ only in fine-scale mark shape, so class identity
degrades under 4x downsampling and recovers with good super-resolution.
Train/val and test splits render under different "environments" (palette,
illumination, noise), mimicking an exclusive test set.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .data import DatasetManifest, ManifestEntry, save_image, save_manifest

CLASS_NAMES = ["healthy", "brown_dots", "brown_dashes", "yellow_rings", "yellow_dots"]

# Class-count shape proportional to a realistically imbalanced field corpus
# (largest:smallest roughly 5:1), per split.
CLASS_SHAPE = {
    "train": [131, 51, 44, 105, 25],
    "val": [44, 17, 14, 35, 9],
    "test": [13, 28, 21, 16, 22],
}

_BROWN = np.array([0.42, 0.22, 0.08])
_YELLOW = np.array([0.85, 0.78, 0.20])

_STREAM_SR = 101
_STREAM_CLASSIFY = 202


def _smooth_field(rng: np.random.Generator, size: int, max_freq: float = 3.0) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    field = np.zeros((size, size))
    for _ in range(4):
        fx = rng.uniform(0.5, max_freq)
        fy = rng.uniform(0.5, max_freq)
        px, py = rng.uniform(0.0, 1.0, 2)
        field += rng.uniform(0.3, 1.0) * np.cos(2 * np.pi * (fx * xx + px)) * np.cos(
            2 * np.pi * (fy * yy + py)
        )
    field -= field.min()
    peak = field.max()
    return field / peak if peak > 0 else field


def _alpha_blend(img: np.ndarray, color: np.ndarray, alpha: np.ndarray) -> None:
    img *= 1.0 - alpha[:, :, None]
    img += color[None, None, :] * alpha[:, :, None]


def _stamp_dot(size: int, center, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    d = np.hypot(yy - center[0], xx - center[1])
    return np.clip((radius - d) / 1.0 + 0.5, 0.0, 1.0)


def _stamp_ring(size: int, center, radius: float, width: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    d = np.hypot(yy - center[0], xx - center[1])
    return np.clip((width / 2 - np.abs(d - radius)) / 1.0 + 0.5, 0.0, 1.0)


def _stamp_dash(size: int, center, length: float, width: float, angle: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - center[0], xx - center[1]
    u = dx * math.cos(angle) + dy * math.sin(angle)
    v = -dx * math.sin(angle) + dy * math.cos(angle)
    along = np.clip((length / 2 - np.abs(u)) + 0.5, 0.0, 1.0)
    across = np.clip((width / 2 - np.abs(v)) + 0.5, 0.0, 1.0)
    return along * across


def _leaf_base(rng: np.random.Generator, size: int, env: str) -> np.ndarray:
    field = _smooth_field(rng, size)
    if env == "a":
        base = np.array([0.16, 0.42, 0.14])
        tint = np.array([0.10, 0.22, 0.06])
        grad_axis = 0
        grad_strength = 0.10
        noise_sigma = 0.008
    else:
        base = np.array([0.20, 0.38, 0.22])
        tint = np.array([0.06, 0.16, 0.12])
        grad_axis = 1
        grad_strength = 0.16
        noise_sigma = 0.014
    img = base[None, None, :] + field[:, :, None] * tint[None, None, :]

    ramp = np.linspace(-0.5, 0.5, size)
    grad = ramp[:, None] if grad_axis == 0 else ramp[None, :]
    img += (grad * grad_strength)[:, :, None]

    # Vein streaks: long thin dark dashes through a common hub.
    hub = (rng.uniform(0.3, 0.7) * size, rng.uniform(0.3, 0.7) * size)
    vein_color = np.clip(base * 0.45, 0, 1)
    for _ in range(rng.integers(5, 9)):
        angle = rng.uniform(0, np.pi)
        alpha = _stamp_dash(size, hub, length=size * 0.8, width=1.1, angle=angle)
        _alpha_blend(img, vein_color, alpha * 0.65)

    img += rng.normal(0.0, noise_sigma, img.shape)
    return np.clip(img, 0.0, 1.0)


def _scatter_marks(
    img: np.ndarray,
    rng: np.random.Generator,
    kinds: list[str],
    n_marks: int,
    scale: float = 1.0,
) -> None:
    size = img.shape[0]
    margin = 7
    for _ in range(n_marks):
        kind = kinds[int(rng.integers(0, len(kinds)))]
        center = rng.uniform(margin, size - margin, 2)
        if kind == "brown_dot":
            alpha = _stamp_dot(size, center, radius=scale * rng.uniform(1.9, 3.2))
            color = _BROWN
        elif kind == "brown_dash":
            alpha = _stamp_dash(
                size, center,
                length=scale * rng.uniform(7.5, 11.0), width=scale * rng.uniform(1.6, 2.4),
                angle=rng.uniform(0, np.pi),
            )
            color = _BROWN
        elif kind == "yellow_ring":
            alpha = _stamp_ring(
                size, center, radius=scale * rng.uniform(3.0, 4.2), width=scale * 1.7
            )
            color = _YELLOW
        elif kind == "yellow_dot":
            alpha = _stamp_dot(size, center, radius=scale * rng.uniform(1.9, 3.2))
            color = _YELLOW
        else:
            raise ValueError(f"unknown mark kind {kind!r}")
        jitter = rng.uniform(0.92, 1.0)
        _alpha_blend(img, color * jitter, alpha)


_CLASS_KINDS = {
    "healthy": [],
    "brown_dots": ["brown_dot"],
    "brown_dashes": ["brown_dash"],
    "yellow_rings": ["yellow_ring"],
    "yellow_dots": ["yellow_dot"],
}


def render_leaf(
    rng: np.random.Generator,
    size: int,
    env: str,
    kinds: list[str],
    n_marks: int,
    mark_scale: float = 1.0,
) -> np.ndarray:
    img = _leaf_base(rng, size, env)
    if kinds and n_marks:
        _scatter_marks(img, rng, kinds, n_marks, scale=mark_scale)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def inject_stamp(
    img: np.ndarray,
    center: tuple[float, float],
    radius: float,
    amplitude: float = 0.35,
    color: tuple[float, float, float] = (0.75, 0.72, 0.68),
) -> np.ndarray:
    """Overlay one circular rubber-stamp-like splotch (for audit experiments)."""
    out = np.asarray(img, dtype=np.float32).copy()
    alpha = _stamp_dot(out.shape[0], center, radius) * amplitude
    _alpha_blend(out, np.asarray(color, dtype=np.float64), alpha)
    return np.clip(out, 0.0, 1.0)


def generate_sr_corpus(
    out_dir: str | Path, n_images: int = 288, seed: int = 7, image_size: int = 96
) -> Path:
    """Unlabeled SR corpus: train/val split about 8:1, mixed mark kinds."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_val = max(1, n_images // 9)
    all_kinds = ["brown_dot", "brown_dash", "yellow_ring", "yellow_dot"]
    entries = []
    for i in range(n_images):
        rng = np.random.default_rng(np.random.SeedSequence([seed, _STREAM_SR, i]))
        img = render_leaf(rng, image_size, env="a", kinds=all_kinds,
                          n_marks=int(rng.integers(22, 38)))
        name = f"leaf_{i:04d}.png"
        save_image(out_dir / name, img)
        split = "val" if i >= n_images - n_val else "train"
        entries.append(ManifestEntry(path=name, split=split))
    manifest = DatasetManifest(
        root=out_dir, image_size=image_size, classes=[], entries=entries
    )
    path = out_dir / "manifest.json"
    save_manifest(path, manifest)
    return path


def _scaled_shape(n_images: int) -> dict[str, list[int]]:
    base_total = sum(sum(v) for v in CLASS_SHAPE.values())
    scale = n_images / base_total
    return {
        split: [max(1, round(c * scale)) for c in counts]
        for split, counts in CLASS_SHAPE.items()
    }


def generate_classify_corpus(
    out_dir: str | Path, n_images: int = 575, seed: int = 7, image_size: int = 64
) -> Path:
    """Labeled 5-class corpus; test split renders in a disjoint environment."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shape = _scaled_shape(n_images)
    entries = []
    idx = 0
    for split in ("train", "val", "test"):
        env = "b" if split == "test" else "a"
        for cls_i, count in enumerate(shape[split]):
            cls = CLASS_NAMES[cls_i]
            for _ in range(count):
                rng = np.random.default_rng(
                    np.random.SeedSequence([seed, _STREAM_CLASSIFY, idx])
                )
                img = render_leaf(
                    rng, image_size, env=env, kinds=_CLASS_KINDS[cls],
                    n_marks=int(rng.integers(7, 13)), mark_scale=0.75,
                )
                name = f"{split}_{cls}_{idx:05d}.png"
                save_image(out_dir / name, img)
                entries.append(ManifestEntry(path=name, split=split, label=cls))
                idx += 1
    manifest = DatasetManifest(
        root=out_dir, image_size=image_size, classes=list(CLASS_NAMES), entries=entries
    )
    path = out_dir / "manifest.json"
    save_manifest(path, manifest)
    return path
