"""Downstream classification harness.

Trains one classifier per input-preparation variant (LR / Bicubic /
NoARM-SR / LASSR / HR) on a labeled corpus and reports per-class, micro,
and macro accuracy on each split. Class imbalance is handled with weights
proportional to the inverse effective number of samples per class.
"""

from __future__ import annotations

import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn

from .config import ClassifyConfig
from .data import (
    DatasetManifest,
    ManifestEntry,
    downsample_bicubic,
    epoch_order,
    load_image,
    pair_rng,
    save_image,
    save_manifest,
    upsample_bicubic,
)
from .evaluator import super_resolve
from .networks import Generator

VARIANT_NAMES = ("LR", "HR", "Bicubic", "NoARM-SR", "LASSR")


@dataclass(frozen=True)
class VariantSpec:
    """One of the five input-preparation pipelines."""

    name: str

    def __post_init__(self):
        if self.name not in VARIANT_NAMES:
            raise ValueError(f"variant must be one of {VARIANT_NAMES}, got {self.name!r}")

    @property
    def needs_generator(self) -> bool:
        return self.name in ("NoARM-SR", "LASSR")


@dataclass
class AccuracyTable:
    split: str
    classes: list[str]
    confusion: np.ndarray
    per_class: dict = field(init=False)
    micro: float = field(init=False)
    macro: Optional[float] = field(init=False)

    def __post_init__(self):
        conf = np.asarray(self.confusion, dtype=np.int64)
        row_totals = conf.sum(axis=1)
        per_class = {}
        present = []
        for i, cls in enumerate(self.classes):
            if row_totals[i] == 0:
                per_class[cls] = None
            else:
                acc = conf[i, i] / row_totals[i]
                per_class[cls] = float(acc)
                present.append(acc)
        self.per_class = per_class
        total = conf.sum()
        self.micro = float(np.trace(conf) / total) if total else 0.0
        self.macro = float(np.mean(present)) if present else None

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "classes": self.classes,
            "per_class": self.per_class,
            "micro": self.micro,
            "macro": self.macro,
            "confusion": np.asarray(self.confusion).tolist(),
        }


def class_balanced_weights(counts, beta: float = 0.9999) -> np.ndarray:
    """Per-class weights (1-beta)/(1-beta^n), renormalized to sum to n_classes."""
    counts = np.asarray(counts)
    if np.any(counts < 1):
        bad = [i for i, c in enumerate(counts) if c < 1]
        raise ValueError(f"class-balanced weights need every count >= 1; zero-count classes at {bad}")
    if not 0 <= beta < 1:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    counts = counts.astype(np.float64)
    if beta == 0.0:
        weights = np.ones_like(counts)
    else:
        weights = (1.0 - beta) / (1.0 - np.power(beta, counts))
    return weights * (len(counts) / weights.sum())


# ---------------------------------------------------------------------------
# Variant dataset preparation
# ---------------------------------------------------------------------------

def prepare_variant_dataset(
    manifest: DatasetManifest,
    variant: VariantSpec,
    out_dir: str | Path,
    sr_generator: Optional[Generator] = None,
    factor: int = 4,
    tile_size: int = 128,
) -> Path:
    """Materialize the transformed corpus on disk and emit a derived manifest."""
    if variant.needs_generator and sr_generator is None:
        raise ValueError(f"variant {variant.name} needs a trained generator checkpoint")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    out_size = manifest.image_size // factor if variant.name == "LR" else manifest.image_size
    for e in manifest.entries:
        src = manifest.resolve(e)
        dst = out_dir / e.path
        dst.parent.mkdir(parents=True, exist_ok=True)
        if variant.name == "HR":
            shutil.copyfile(src, dst)
        else:
            img = load_image(src)
            lr = downsample_bicubic(img, factor)
            if variant.name == "LR":
                out = lr
            elif variant.name == "Bicubic":
                out = upsample_bicubic(lr, factor)
            else:
                out = super_resolve(sr_generator, lr, tile_size=tile_size)
            save_image(dst, out)
        entries.append(ManifestEntry(path=e.path, split=e.split, label=e.label))
    derived = DatasetManifest(
        root=out_dir, image_size=out_size, classes=list(manifest.classes), entries=entries
    )
    path = out_dir / "manifest.json"
    save_manifest(path, derived)
    return path


# ---------------------------------------------------------------------------
# Compact backbone
# ---------------------------------------------------------------------------

class CompactClassifier(nn.Module):
    """Small convolutional classifier; input size free, pooled head."""

    def __init__(self, n_classes: int, widths=(16, 32, 64)):
        super().__init__()
        layers: list[nn.Module] = []
        in_ch = 3
        for w in widths:
            layers += [
                nn.Conv2d(in_ch, w, 3, stride=2, padding=1),
                nn.BatchNorm2d(w),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            in_ch = w
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(in_ch, n_classes)

    def forward(self, x):
        fea = self.features(x).mean(dim=(2, 3))
        return self.head(fea)


def build_backbone(descriptor: str, n_classes: int) -> nn.Module:
    if descriptor == "compact":
        return CompactClassifier(n_classes)
    if descriptor == "compact-wide":
        return CompactClassifier(n_classes, widths=(24, 48, 96))
    raise ValueError(
        f"unknown backbone {descriptor!r}; desk-scale runs use 'compact'"
    )


def _load_split(manifest: DatasetManifest, split: str) -> tuple[np.ndarray, np.ndarray]:
    entries = manifest.split_entries(split)
    label_idx = {c: i for i, c in enumerate(manifest.classes)}
    xs, ys = [], []
    for e in entries:
        if e.label is None:
            raise ValueError(f"entry {e.path} has no label; classification needs labels")
        xs.append(load_image(manifest.resolve(e)))
        ys.append(label_idx[e.label])
    x = np.stack(xs).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(x), np.asarray(ys, dtype=np.int64)


def _confusion(model: nn.Module, x: np.ndarray, y: np.ndarray, n_classes: int) -> np.ndarray:
    model.eval()
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    with torch.no_grad():
        for i in range(0, len(x), 64):
            logits = model(torch.from_numpy(x[i : i + 64]))
            pred = logits.argmax(dim=1).numpy()
            for t, p in zip(y[i : i + 64], pred):
                conf[t, p] += 1
    return conf


def train_classifier(
    cfg: ClassifyConfig,
    manifest: DatasetManifest,
    seed: int = 0,
) -> tuple[nn.Module, dict[str, AccuracyTable]]:
    """Train on the manifest's train split; report train and val accuracy."""
    torch.manual_seed(seed)
    n_classes = len(manifest.classes)
    model = build_backbone(cfg.backbone, n_classes)
    x_train, y_train = _load_split(manifest, "train")
    counts = np.bincount(y_train, minlength=n_classes)
    weights = class_balanced_weights(counts, cfg.cb_beta)
    criterion = nn.CrossEntropyLoss(weight=torch.from_numpy(weights).float())
    opt = torch.optim.Adam(model.parameters(), lr=cfg.adam_lr)

    n = len(x_train)
    bpe = max(n // cfg.batch_size, 1)
    for epoch in range(cfg.epochs):
        model.train()
        order = epoch_order(n, seed, epoch)
        for b in range(bpe):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            if len(idx) == 0:
                continue
            xb = x_train[idx]
            rng = pair_rng(seed, epoch, b)
            flips_h = rng.integers(0, 2, size=len(idx)) if cfg.hflip else np.zeros(len(idx), int)
            flips_v = rng.integers(0, 2, size=len(idx)) if cfg.vflip else np.zeros(len(idx), int)
            xb = xb.copy()
            for j in range(len(idx)):
                if flips_h[j]:
                    xb[j] = xb[j, :, :, ::-1]
                if flips_v[j]:
                    xb[j] = xb[j, :, ::-1, :]
            logits = model(torch.from_numpy(np.ascontiguousarray(xb)))
            loss = criterion(logits, torch.from_numpy(y_train[idx]))
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()

    tables = {}
    for split in ("train", "val"):
        if not manifest.split_entries(split):
            continue
        xs, ys = (x_train, y_train) if split == "train" else _load_split(manifest, split)
        conf = _confusion(model, xs, ys, n_classes)
        tables[split] = AccuracyTable(split=split, classes=list(manifest.classes), confusion=conf)
    return model, tables


def evaluate_classifier(
    model: nn.Module, manifest: DatasetManifest, split: str = "test"
) -> AccuracyTable:
    x, y = _load_split(manifest, split)
    conf = _confusion(model, x, y, len(manifest.classes))
    return AccuracyTable(split=split, classes=list(manifest.classes), confusion=conf)
