"""Dataset ingestion and the HR/LR patch pipeline.

Images are float32 H x W x C arrays in [0, 1] everywhere in this package.
PNG files are 8-bit RGB, decoded by dividing by 255.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image

VALID_SPLITS = ("train", "val", "test")

# Disjoint RNG streams so draws are pure functions of (seed, epoch, batch).
_STREAM_SHUFFLE = 11
_STREAM_PAIR = 23


class ManifestError(ValueError):
    """Raised when a dataset manifest fails validation."""


# ---------------------------------------------------------------------------
# Image I/O
# ---------------------------------------------------------------------------

def load_image(path: str | Path) -> np.ndarray:
    """Decode an 8-bit RGB PNG to a float32 HWC array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_image(path: str | Path, img: np.ndarray) -> None:
    """Write a float32 [0, 1] HWC array as an 8-bit RGB PNG."""
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# Bicubic resampling (Catmull-Rom, a = -0.5, reflective edges)
# ---------------------------------------------------------------------------

def _catmull_rom(t: np.ndarray) -> np.ndarray:
    t = np.abs(t)
    out = np.zeros_like(t)
    near = t < 1.0
    far = (t >= 1.0) & (t < 2.0)
    out[near] = (1.5 * t[near] - 2.5) * t[near] ** 2 + 1.0
    out[far] = ((-0.5 * t[far] + 2.5) * t[far] - 4.0) * t[far] + 2.0
    return out


def _reflect_index(idx: np.ndarray, size: int) -> np.ndarray:
    # Symmetric reflection about the pixel edges: -1 -> 0, size -> size - 1.
    idx = np.asarray(idx)
    period = 2 * size
    idx = np.mod(idx, period)
    idx = np.where(idx < 0, idx + period, idx)
    return np.where(idx >= size, period - idx - 1, idx)


@lru_cache(maxsize=64)
def _resample_matrix(src_size: int, factor: int, down: bool) -> np.ndarray:
    """Row-resampling matrix mapping a length-src_size axis to src_size/factor
    (down) or src_size*factor (up). Weights are unit-sum per output pixel."""
    if down:
        dst_size = src_size // factor
        support = 2.0 * factor  # kernel stretched by the decimation factor
        scale = float(factor)
    else:
        dst_size = src_size * factor
        support = 2.0
        scale = 1.0
    mat = np.zeros((dst_size, src_size), dtype=np.float64)
    for i in range(dst_size):
        if down:
            center = (i + 0.5) * factor - 0.5
        else:
            center = (i + 0.5) / factor - 0.5
        lo = int(math.floor(center - support)) + 1
        hi = int(math.floor(center + support))
        taps = np.arange(lo, hi + 1)
        weights = _catmull_rom((taps - center) / scale)
        weights = weights / weights.sum()
        np.add.at(mat[i], _reflect_index(taps, src_size), weights)
    return mat


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ValueError(f"expected an HWC image array, got shape {img.shape}")
    return img


def downsample_bicubic(img: np.ndarray, factor: int = 4) -> np.ndarray:
    """Anti-aliased separable Catmull-Rom decimation by an integer factor."""
    img = _check_image(img)
    h, w = img.shape[:2]
    if h % factor or w % factor:
        raise ValueError(
            f"image dims {h}x{w} not divisible by the downsampling factor {factor}"
        )
    wr = _resample_matrix(h, factor, down=True)
    wc = _resample_matrix(w, factor, down=True)
    tmp = np.tensordot(wr, img.astype(np.float64), axes=(1, 0))
    out = np.tensordot(wc, tmp, axes=(1, 1)).transpose(1, 0, 2)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def upsample_bicubic(img: np.ndarray, factor: int = 4) -> np.ndarray:
    """Separable Catmull-Rom interpolation by an integer factor."""
    img = _check_image(img)
    h, w = img.shape[:2]
    wr = _resample_matrix(h, factor, down=False)
    wc = _resample_matrix(w, factor, down=False)
    tmp = np.tensordot(wr, img.astype(np.float64), axes=(1, 0))
    out = np.tensordot(wc, tmp, axes=(1, 1)).transpose(1, 0, 2)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    split: str
    label: Optional[str] = None


@dataclass
class DatasetManifest:
    root: Path
    image_size: int
    classes: list[str] = field(default_factory=list)
    entries: list[ManifestEntry] = field(default_factory=list)

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def class_counts(self, split: str) -> dict[str, int]:
        counts = {c: 0 for c in self.classes}
        for e in self.split_entries(split):
            if e.label is not None:
                counts[e.label] += 1
        return counts


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a manifest JSON document.

    Entries come back sorted lexicographically by path. Validation collects
    every offender before raising, so one error message names them all.
    """
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != 1:
        raise ManifestError(f"unsupported manifest version {doc.get('version')!r}")
    root = path.parent
    classes = list(doc.get("classes", []))
    raw_entries = doc.get("entries", [])

    missing, duplicates, bad_labels, bad_splits = [], [], [], []
    seen: set[str] = set()
    entries: list[ManifestEntry] = []
    for item in raw_entries:
        p = item["path"]
        split = item.get("split", "train")
        label = item.get("label")
        if p in seen:
            duplicates.append(p)
        seen.add(p)
        if not (root / p).is_file():
            missing.append(p)
        if split not in VALID_SPLITS:
            bad_splits.append(f"{p} (split={split!r})")
        if label is not None and label not in classes:
            bad_labels.append(f"{p} (label={label!r})")
        entries.append(ManifestEntry(path=p, split=split, label=label))

    problems = []
    if missing:
        problems.append("missing files: " + ", ".join(sorted(missing)))
    if duplicates:
        problems.append("duplicate paths: " + ", ".join(sorted(set(duplicates))))
    if bad_splits:
        problems.append("invalid splits: " + ", ".join(sorted(bad_splits)))
    if bad_labels:
        problems.append("unknown labels: " + ", ".join(sorted(bad_labels)))
    if problems:
        raise ManifestError("manifest validation failed: " + "; ".join(problems))

    entries.sort(key=lambda e: e.path)
    return DatasetManifest(
        root=root,
        image_size=int(doc["image_size"]),
        classes=classes,
        entries=entries,
    )


def save_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    doc = {
        "version": 1,
        "image_size": manifest.image_size,
        "classes": manifest.classes,
        "entries": [
            {"path": e.path, "split": e.split}
            | ({"label": e.label} if e.label is not None else {})
            for e in sorted(manifest.entries, key=lambda e: e.path)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Patch pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SrPair:
    """HR crop plus its bicubic 1/4x counterpart; lr == downsample_bicubic(hr)."""

    hr: np.ndarray
    lr: np.ndarray


def sample_hr_patch(img: np.ndarray, n: int, rng_state: np.random.Generator) -> np.ndarray:
    """Uniformly random axis-aligned n x n crop."""
    img = _check_image(img)
    h, w = img.shape[:2]
    if h < n or w < n:
        raise ValueError(f"image {h}x{w} smaller than the requested crop size {n}")
    top = int(rng_state.integers(0, h - n + 1))
    left = int(rng_state.integers(0, w - n + 1))
    return img[top : top + n, left : left + n]


def apply_dihedral(img: np.ndarray, flip: int, quarter_turns: int) -> np.ndarray:
    """Horizontal flip (if flip) followed by quarter_turns CCW 90-degree turns."""
    out = img
    if flip:
        out = out[:, ::-1]
    if quarter_turns % 4:
        out = np.rot90(out, k=quarter_turns % 4)
    return np.ascontiguousarray(out)


def draw_dihedral(rng_state: np.random.Generator) -> tuple[int, int]:
    return int(rng_state.integers(0, 2)), int(rng_state.integers(0, 4))


def augment(pair: SrPair, rng_state: np.random.Generator) -> SrPair:
    """Apply one jointly drawn flip/rot90 transform to both fields of a pair."""
    flip, k = draw_dihedral(rng_state)
    return SrPair(
        hr=apply_dihedral(pair.hr, flip, k),
        lr=apply_dihedral(pair.lr, flip, k),
    )


class ImageCache:
    """Decoded-image cache keyed by path; desk corpora fit in memory."""

    def __init__(self, max_items: int = 4096):
        self._store: dict[str, np.ndarray] = {}
        self._max_items = max_items

    def get(self, path: Path) -> np.ndarray:
        key = str(path)
        if key not in self._store:
            if len(self._store) >= self._max_items:
                self._store.pop(next(iter(self._store)))
            self._store[key] = load_image(path)
        return self._store[key]


def epoch_order(n_entries: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffled entry order for one epoch; pure function of (seed, epoch)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _STREAM_SHUFFLE, epoch]))
    return rng.permutation(n_entries)


def pair_rng(seed: int, epoch: int, batch_idx: int) -> np.random.Generator:
    """Crop/augment RNG for one batch; pure function of its coordinates."""
    return np.random.default_rng(
        np.random.SeedSequence([seed, _STREAM_PAIR, epoch, batch_idx])
    )


def make_pair(
    img: np.ndarray,
    crop_size: int,
    rng_state: np.random.Generator,
    factor: int = 4,
) -> SrPair:
    """Crop, transform, then derive lr so the emitted pair is exactly consistent."""
    hr = sample_hr_patch(img, crop_size, rng_state)
    flip, k = draw_dihedral(rng_state)
    hr = apply_dihedral(hr, flip, k)
    return SrPair(hr=hr, lr=downsample_bicubic(hr, factor))


def materialize_batch(
    manifest: DatasetManifest,
    entries: Sequence[ManifestEntry],
    indices: Sequence[int],
    crop_size: int,
    rng_state: np.random.Generator,
    cache: Optional[ImageCache] = None,
) -> list[SrPair]:
    cache = cache or ImageCache()
    batch = []
    for idx in indices:
        img = cache.get(manifest.resolve(entries[idx]))
        batch.append(make_pair(img, crop_size, rng_state))
    return batch


def batch_iterator(
    manifest: DatasetManifest,
    batch_size: int,
    rng_state: int,
    crop_size: int = 192,
    split: str = "train",
    epochs: Optional[int] = None,
    cache: Optional[ImageCache] = None,
) -> Iterator[list[SrPair]]:
    """Shuffled epochs of SrPair batches, dropping the last partial batch.

    rng_state is an integer seed; every draw is a pure function of
    (rng_state, epoch, batch index), so the stream is deterministic and
    any position in it can be reconstructed without replay.
    """
    entries = manifest.split_entries(split)
    if not entries:
        raise ValueError(f"manifest has no {split!r} entries")
    cache = cache or ImageCache()
    n_batches = len(entries) // batch_size
    epoch = 0
    while epochs is None or epoch < epochs:
        order = epoch_order(len(entries), rng_state, epoch)
        for b in range(n_batches):
            rng = pair_rng(rng_state, epoch, b)
            idx = order[b * batch_size : (b + 1) * batch_size]
            yield materialize_batch(manifest, entries, idx, crop_size, rng, cache)
        epoch += 1
