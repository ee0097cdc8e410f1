"""Operator command line: synth-data, train, sr, audit, fid, profile, classify.

Configuration comes from one JSON/TOML file (--config, or the LASSR_CONFIG
environment variable), overridable with repeatable --set section.key=value
flags; flags win over the file. Every command writes files only; failures
print a machine-readable error JSON to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .arm import ArmConfig
from .classifier import (
    VARIANT_NAMES,
    VariantSpec,
    evaluate_classifier,
    prepare_variant_dataset,
    train_classifier,
)
from .config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    flatten_defaults,
    load_run_config,
    run_config_to_dict,
)
from .data import ManifestError, load_image, load_manifest, save_image
from .evaluator import (
    artifact_audit,
    embed_images,
    fid,
    line_profile,
    psnr,
    save_profile_plot,
    super_resolve,
)
from .losses import make_feature_extractor
from .synth import generate_classify_corpus, generate_sr_corpus
from .trainer import load_generator, train


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _arm_config(run: RunConfig) -> ArmConfig:
    return run.arm


def _list_pngs(directory: Path) -> list[Path]:
    files = sorted(p for p in directory.glob("*.png") if p.is_file())
    if not files:
        raise FileNotFoundError(f"no .png files in {directory}")
    return files


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth_data(args, run: RunConfig) -> int:
    out = Path(args.out)
    seed = run.seed if args.seed is None else args.seed
    if args.profile == "sr":
        size = args.image_size or 96
        manifest = generate_sr_corpus(out, n_images=args.n, seed=seed, image_size=size)
    else:
        size = args.image_size or 64
        manifest = generate_classify_corpus(out, n_images=args.n, seed=seed, image_size=size)
    print(manifest)
    return 0


def cmd_train(args, run: RunConfig) -> int:
    manifest = load_manifest(args.manifest)
    result = train(run, manifest, Path(args.out), resume_from=args.resume)
    summary = {
        "steps": result.state.step,
        "checkpoint": str(result.checkpoint_path),
        "log": str(result.log_path),
        "config": run_config_to_dict(run),
    }
    _write_json(Path(args.out) / "train_summary.json", summary)
    print(result.checkpoint_path)
    return 0


def cmd_sr(args, run: RunConfig) -> int:
    g, _ = load_generator(args.checkpoint)
    lr = load_image(args.input)
    sr = super_resolve(g, lr, tile_size=run.eval.tile_size, tile_overlap=run.eval.tile_overlap)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(out, sr)
    print(out)
    return 0


def cmd_audit(args, run: RunConfig) -> int:
    sr_dir, hr_dir = Path(args.sr_dir), Path(args.hr_dir)
    sr_files = {p.name: p for p in _list_pngs(sr_dir)}
    hr_files = {p.name: p for p in _list_pngs(hr_dir)}
    names = sorted(set(sr_files) & set(hr_files))
    if not names:
        raise FileNotFoundError(f"no matching filenames between {sr_dir} and {hr_dir}")
    pairs = [(load_image(sr_files[n]), load_image(hr_files[n])) for n in names]
    report = artifact_audit(pairs, _arm_config(run), source_size=args.source_size, paths=names)
    _write_json(Path(args.out), report.to_dict())
    print(args.out)
    return 0


def cmd_fid(args, run: RunConfig) -> int:
    fx = make_feature_extractor(run.eval.feature_extractor)
    imgs_a = [load_image(p) for p in _list_pngs(Path(args.set_a))]
    imgs_b = [load_image(p) for p in _list_pngs(Path(args.set_b))]
    value = fid(embed_images(imgs_a, fx), embed_images(imgs_b, fx))
    doc = {
        "fid": value,
        "set_a": str(args.set_a),
        "set_b": str(args.set_b),
        "extractor": fx.descriptor,
        "n_a": len(imgs_a),
        "n_b": len(imgs_b),
    }
    _write_json(Path(args.out), doc)
    print(value)
    return 0


def cmd_profile(args, run: RunConfig) -> int:
    img = load_image(args.image)
    policy = args.channel if args.channel == "mean" else int(args.channel)
    signal = line_profile(img, args.row, policy)
    stem = Path(args.out_prefix)
    stem.parent.mkdir(parents=True, exist_ok=True)
    profiles = {Path(args.image).stem: signal}
    if args.reference:
        ref = load_image(args.reference)
        profiles[Path(args.reference).stem] = line_profile(ref, args.row, policy)
        doc_psnr = psnr(img, ref) if img.shape == ref.shape else None
    else:
        doc_psnr = None
    save_profile_plot(f"{stem}.profile.png", profiles, args.row)
    doc = {
        "row": args.row,
        "channel": args.channel,
        "signals": {k: v.tolist() for k, v in profiles.items()},
        "psnr_db": None if doc_psnr is None else (doc_psnr if np.isfinite(doc_psnr) else "+inf"),
    }
    _write_json(Path(f"{stem}.profile.json"), doc)
    print(f"{stem}.profile.png")
    return 0


def cmd_classify(args, run: RunConfig) -> int:
    manifest = load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    results = {}
    for name in variants:
        spec = VariantSpec(name)
        gen = None
        if spec.needs_generator:
            ckpt = args.lassr_checkpoint if name == "LASSR" else args.noarm_checkpoint
            if ckpt is None:
                raise ConfigError(
                    f"variant {name} needs --lassr-checkpoint/--noarm-checkpoint"
                )
            gen, _ = load_generator(ckpt)
        vdir = out_dir / "variants" / name.lower().replace("-", "_")
        derived_path = prepare_variant_dataset(
            manifest, spec, vdir, sr_generator=gen, tile_size=run.eval.tile_size
        )
        derived = load_manifest(derived_path)
        model, tables = train_classifier(run.classify, derived, seed=run.seed)
        test_table = evaluate_classifier(model, derived, "test")
        results[name] = {
            **{split: t.to_dict() for split, t in tables.items()},
            "test": test_table.to_dict(),
        }
    _write_json(out_dir / "classify_report.json", results)
    _plot_accuracy_bars(out_dir / "accuracy_bars.png", results)
    print(out_dir / "classify_report.json")
    return 0


def _plot_accuracy_bars(path: Path, results: dict) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    variants = list(results)
    splits = ("train", "val", "test")
    width = 0.25
    xs = np.arange(len(variants))
    fig, ax = plt.subplots(figsize=(7, 3.2))
    for k, split in enumerate(splits):
        vals = [100.0 * results[v].get(split, {}).get("micro", 0.0) for v in variants]
        ax.bar(xs + (k - 1) * width, vals, width, label=split)
    ax.set_xticks(xs, variants)
    ax.set_ylabel("micro accuracy [%]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _config_epilog() -> str:
    lines = ["configuration keys (override with --set KEY=VALUE):"]
    for key, value in flatten_defaults():
        lines.append(f"  {key} = {value!r}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lassr",
        description="Artifact-suppressed 4x GAN super-resolution toolkit",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        "--config",
        default=None,
        help="JSON/TOML run configuration (fallback: LASSR_CONFIG env var)",
    )
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key, e.g. --set train.epochs=2 (repeatable)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the seeded synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=288)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--profile", choices=("sr", "classify"), default="sr")
    p.add_argument("--image-size", type=int, default=None)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train the SR model on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sr", help="super-resolve one image with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("audit", help="count artifact blobs over (sr, hr) pairs")
    p.add_argument("--sr-dir", required=True)
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--source-size", type=int, default=None)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("fid", help="Frechet distance between two image sets")
    p.add_argument("--set-a", required=True)
    p.add_argument("--set-b", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fid)

    p = sub.add_parser("profile", help="line profile plot for one image row")
    p.add_argument("--image", required=True)
    p.add_argument("--row", type=int, required=True)
    p.add_argument("--channel", default="mean")
    p.add_argument("--reference", default=None)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("classify", help="train per-variant classifiers and report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variants", default=",".join(VARIANT_NAMES))
    p.add_argument("--lassr-checkpoint", default=None)
    p.add_argument("--noarm-checkpoint", default=None)
    p.set_defaults(func=cmd_classify)

    return parser


def _load_config(args) -> RunConfig:
    path = args.config or os.environ.get("LASSR_CONFIG")
    run = load_run_config(path) if path else RunConfig()
    if args.overrides:
        run = apply_overrides(run, args.overrides)
    return run


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run = _load_config(args)
        return args.func(args, run)
    except (ConfigError, ManifestError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except (FileNotFoundError, RuntimeError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
