import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from lassr.classifier import (
    AccuracyTable,
    VariantSpec,
    class_balanced_weights,
    evaluate_classifier,
    prepare_variant_dataset,
    train_classifier,
)
from lassr.config import ClassifyConfig
from lassr.data import (
    DatasetManifest,
    ManifestEntry,
    load_image,
    load_manifest,
    save_image,
    save_manifest,
)

TABLE_COUNTS = [13089, 5142, 4356, 10451, 2514]


class TestClassBalancedWeights:
    def test_beta_zero_uniform(self):
        w = class_balanced_weights([10, 200, 3], beta=0.0)
        assert np.allclose(w, 1.0)

    def test_singleton_class_unit_prenormalized_weight(self):
        for beta in (0.5, 0.9, 0.9999):
            counts = [1, 50]
            w = class_balanced_weights(counts, beta)
            pre = np.array([1.0, (1 - beta) / (1 - beta**50)])
            expected = pre * (2 / pre.sum())
            assert np.allclose(w, expected, rtol=1e-12)

    def test_table_counts_match_high_precision(self):
        import mpmath

        mpmath.mp.dps = 50
        beta = mpmath.mpf("0.9999")
        pre = [(1 - beta) / (1 - beta**n) for n in TABLE_COUNTS]
        norm = len(pre) / sum(pre)
        expected = np.array([float(p * norm) for p in pre])
        got = class_balanced_weights(TABLE_COUNTS, 0.9999)
        assert np.allclose(got, expected, rtol=1e-12)
        # the rarest class gets the largest weight
        assert np.argmax(got) == int(np.argmin(TABLE_COUNTS))

    def test_normalized_to_class_count(self):
        w = class_balanced_weights([7, 19, 1000, 4], 0.99)
        assert w.sum() == pytest.approx(4.0, rel=1e-12)

    def test_zero_count_rejected(self):
        with pytest.raises(ValueError, match="zero-count"):
            class_balanced_weights([5, 0, 2], 0.9)

    @settings(max_examples=30, deadline=None)
    @given(
        n1=st.integers(1, 10_000),
        n2=st.integers(1, 10_000),
        beta=st.floats(0.01, 0.999999),
    )
    def test_monotone_smaller_class_larger_weight(self, n1, n2, beta):
        w = class_balanced_weights([n1, n2], beta)
        if n1 < n2:
            assert w[0] >= w[1]
        elif n2 < n1:
            assert w[1] >= w[0]


class TestAccuracyTable:
    def test_always_predict_first_class_balanced(self):
        conf = np.zeros((5, 5), dtype=int)
        conf[:, 0] = 10  # every true class predicted as class 0
        t = AccuracyTable(split="test", classes=list("abcde"), confusion=conf)
        assert t.micro == pytest.approx(0.2)
        assert t.macro == pytest.approx(0.2)

    def test_perfect_predictor(self):
        conf = np.diag([4, 9, 6]).astype(int)
        t = AccuracyTable(split="test", classes=list("abc"), confusion=conf)
        assert t.micro == 1.0 and t.macro == 1.0
        assert all(v == 1.0 for v in t.per_class.values())

    def test_macro_below_micro_with_rare_weak_class(self):
        conf = np.array([[90, 0], [8, 2]])  # rare class mostly missed
        t = AccuracyTable(split="test", classes=["big", "rare"], confusion=conf)
        assert t.micro == pytest.approx(0.92)
        assert t.macro == pytest.approx((1.0 + 0.2) / 2)
        assert t.macro < t.micro

    def test_identities_recomputable_from_confusion(self, rng):
        conf = rng.integers(0, 30, size=(4, 4))
        conf[2] = 0  # absent class
        t = AccuracyTable(split="val", classes=list("wxyz"), confusion=conf)
        doc = t.to_dict()
        c = np.array(doc["confusion"])
        assert t.micro == pytest.approx(np.trace(c) / c.sum(), abs=1e-9)
        present = [c[i, i] / c[i].sum() for i in range(4) if c[i].sum()]
        assert t.macro == pytest.approx(np.mean(present), abs=1e-9)
        assert doc["per_class"]["y"] is None


def _easy_corpus(tmp_path, n_per_class=12, size=24, val=False, test=False):
    """Five classes with distinct dominant colors; trivially separable."""
    colors = [
        (0.9, 0.1, 0.1), (0.1, 0.9, 0.1), (0.1, 0.1, 0.9),
        (0.8, 0.8, 0.1), (0.6, 0.2, 0.8),
    ]
    classes = [f"c{i}" for i in range(5)]
    entries = []
    rng = np.random.default_rng(0)
    splits = ["train"] + (["val"] if val else []) + (["test"] if test else [])
    for split in splits:
        n = n_per_class if split == "train" else max(3, n_per_class // 3)
        for ci, cls in enumerate(classes):
            for j in range(n):
                img = np.clip(
                    np.array(colors[ci])[None, None, :]
                    + rng.normal(0, 0.05, (size, size, 3)),
                    0, 1,
                ).astype(np.float32)
                name = f"{split}_{cls}_{j}.png"
                save_image(tmp_path / name, img)
                entries.append(ManifestEntry(path=name, split=split, label=cls))
    m = DatasetManifest(root=tmp_path, image_size=size, classes=classes, entries=entries)
    save_manifest(tmp_path / "manifest.json", m)
    return load_manifest(tmp_path / "manifest.json")


def _nearest_centroid_accuracy(manifest, split="train"):
    xs, ys = [], []
    idx = {c: i for i, c in enumerate(manifest.classes)}
    for e in manifest.split_entries(split):
        xs.append(load_image(manifest.resolve(e)).reshape(-1))
        ys.append(idx[e.label])
    xs, ys = np.stack(xs), np.asarray(ys)
    centroids = np.stack([xs[ys == i].mean(axis=0) for i in range(len(manifest.classes))])
    pred = np.argmin(
        ((xs[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2), axis=1
    )
    return float((pred == ys).mean())


class TestTrainClassifier:
    def test_separable_corpus_high_train_accuracy(self, tmp_path):
        manifest = _easy_corpus(tmp_path, val=True)
        assert _nearest_centroid_accuracy(manifest) >= 0.9  # oracle baseline
        cfg = ClassifyConfig(epochs=12, batch_size=16, adam_lr=1e-3)
        model, tables = train_classifier(cfg, manifest, seed=0)
        assert tables["train"].micro >= 0.95

    def test_deterministic_under_seed(self, tmp_path):
        manifest = _easy_corpus(tmp_path, n_per_class=6)
        cfg = ClassifyConfig(epochs=3, batch_size=8, adam_lr=1e-3)
        _, t1 = train_classifier(cfg, manifest, seed=5)
        _, t2 = train_classifier(cfg, manifest, seed=5)
        assert t1["train"].to_dict() == t2["train"].to_dict()

    def test_evaluate_on_test_split(self, tmp_path):
        manifest = _easy_corpus(tmp_path, test=True)
        cfg = ClassifyConfig(epochs=10, batch_size=16, adam_lr=1e-3)
        model, _ = train_classifier(cfg, manifest, seed=0)
        table = evaluate_classifier(model, manifest, "test")
        assert table.micro >= 0.8
        assert table.split == "test"

    def test_class_balancing_helps_macro_on_imbalanced_corpus(self, tmp_path):
        manifest = _imbalanced_overlap_corpus(tmp_path)
        base = dict(epochs=8, batch_size=16, adam_lr=1e-3)
        _, t0 = train_classifier(ClassifyConfig(cb_beta=0.0, **base), manifest, seed=1)
        _, t1 = train_classifier(ClassifyConfig(cb_beta=0.9999, **base), manifest, seed=1)
        assert t1["val"].macro >= t0["val"].macro


def _imbalanced_overlap_corpus(tmp_path, size=16):
    """Majority class overlaps the minority; weighting decides the boundary."""
    classes = ["big", "small"]
    entries = []
    rng = np.random.default_rng(2)
    for split, n_big, n_small in (("train", 80, 6), ("val", 30, 30)):
        for ci, (cls, n) in enumerate(zip(classes, (n_big, n_small))):
            mean = 0.45 if cls == "big" else 0.58
            for j in range(n):
                img = np.clip(
                    rng.normal(mean, 0.08, (size, size, 3)), 0, 1
                ).astype(np.float32)
                name = f"{split}_{cls}_{j}.png"
                save_image(tmp_path / name, img)
                entries.append(ManifestEntry(path=name, split=split, label=cls))
    m = DatasetManifest(root=tmp_path, image_size=size, classes=classes, entries=entries)
    save_manifest(tmp_path / "manifest.json", m)
    return load_manifest(tmp_path / "manifest.json")


class TestVariants:
    def test_spec_validation(self):
        assert VariantSpec("LASSR").needs_generator
        assert not VariantSpec("HR").needs_generator
        with pytest.raises(ValueError, match="variant must be one of"):
            VariantSpec("ESRGAN")

    def test_missing_generator_rejected(self, tmp_path, small_classify_manifest):
        manifest = load_manifest(small_classify_manifest)
        with pytest.raises(ValueError, match="needs a trained generator"):
            prepare_variant_dataset(manifest, VariantSpec("LASSR"), tmp_path / "v")

    def test_hr_passthrough_byte_identical(self, tmp_path, small_classify_manifest):
        manifest = load_manifest(small_classify_manifest)
        out = prepare_variant_dataset(manifest, VariantSpec("HR"), tmp_path / "hr")
        derived = load_manifest(out)
        assert derived.image_size == manifest.image_size
        e = derived.entries[0]
        assert (derived.root / e.path).read_bytes() == (
            manifest.root / e.path
        ).read_bytes()

    def test_lr_variant_quarter_size(self, tmp_path, small_classify_manifest):
        manifest = load_manifest(small_classify_manifest)
        out = prepare_variant_dataset(manifest, VariantSpec("LR"), tmp_path / "lr")
        derived = load_manifest(out)
        assert derived.image_size == manifest.image_size // 4
        img = load_image(derived.root / derived.entries[0].path)
        assert img.shape[0] == manifest.image_size // 4

    def test_bicubic_variant_full_size(self, tmp_path, small_classify_manifest):
        manifest = load_manifest(small_classify_manifest)
        out = prepare_variant_dataset(manifest, VariantSpec("Bicubic"), tmp_path / "bc")
        derived = load_manifest(out)
        img = load_image(derived.root / derived.entries[0].path)
        assert img.shape[0] == manifest.image_size
        # down-then-up blurs: must differ from the original
        orig = load_image(manifest.root / manifest.entries[0].path)
        assert not np.array_equal(img, orig)
