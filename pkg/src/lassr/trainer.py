"""Adversarial training loop: alternating D and G Adam updates.

Each step runs (1) generator forward, (2) discriminator update against the
detached SR batch, (3) generator update from the combined objective using
fresh post-update logits. All data draws are pure functions of
(seed, epoch, batch index), so fixed-seed runs are reproducible and a run
resumed from a checkpoint continues exactly where it left off.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import checkpoint as ckpt
from .config import RunConfig, run_config_from_dict, run_config_to_dict
from .data import (
    DatasetManifest,
    ImageCache,
    SrPair,
    epoch_order,
    materialize_batch,
    pair_rng,
)
from .losses import (
    FeatureExtractor,
    LossBreakdown,
    LossWeights,
    discriminator_loss,
    make_feature_extractor,
    pixel_l1,
    total_generator_loss,
)
from .networks import Discriminator, Generator, build_discriminator, build_generator


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, bad_batch_indices: list[int]):
        self.step = step
        self.bad_batch_indices = bad_batch_indices
        super().__init__(
            f"non-finite loss at step {step}; offending batch indices: "
            f"{bad_batch_indices or 'unknown (loss non-finite, samples finite)'}"
        )


@dataclass
class TrainState:
    """Single-writer training state; serializable and exactly resumable."""

    run: RunConfig
    g: Generator
    d: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    fx: FeatureExtractor
    step: int = 0
    epoch: int = 0
    loss_sums: dict = field(default_factory=dict)
    loss_count: int = 0


@dataclass
class TrainResult:
    state: TrainState
    checkpoint_path: Path
    log_path: Path
    records: list[dict]


def init_train_state(run: RunConfig) -> TrainState:
    torch.manual_seed(run.seed)
    g = build_generator(run.model.generator)
    d = build_discriminator(run.model.discriminator)
    opt_g = torch.optim.Adam(
        g.parameters(), lr=run.train.adam_lr, betas=(run.train.adam_beta1, run.train.adam_beta2)
    )
    opt_d = torch.optim.Adam(
        d.parameters(), lr=run.train.adam_lr, betas=(run.train.adam_beta1, run.train.adam_beta2)
    )
    fx = make_feature_extractor(run.loss.feature_extractor)
    return TrainState(run=run, g=g, d=d, opt_g=opt_g, opt_d=opt_d, fx=fx)


def _stack_pairs(batch: list[SrPair]) -> tuple[torch.Tensor, torch.Tensor]:
    hr = np.ascontiguousarray(np.stack([p.hr for p in batch]).transpose(0, 3, 1, 2))
    lr = np.ascontiguousarray(np.stack([p.lr for p in batch]).transpose(0, 3, 1, 2))
    return torch.from_numpy(hr), torch.from_numpy(lr)


def _applied_weights(run: RunConfig, step: int) -> LossWeights:
    beta = run.loss.beta_arm if step >= run.train.arm_start_step else 0.0
    return LossWeights(
        lambda_adv=run.loss.lambda_adv, eta_l1=run.loss.eta_l1, beta_arm=beta
    )


def train_step(state: TrainState, batch: list[SrPair]) -> tuple[TrainState, LossBreakdown]:
    """One alternating D/G update; returns the mutated state and breakdown."""
    run = state.run
    hr, lr = _stack_pairs(batch)
    warmup = state.step < run.train.warmup_l1_steps
    weights = _applied_weights(run, state.step)

    state.g.train()
    sr = state.g(lr)

    if warmup:
        # D stays frozen: eval-mode forwards only, for bookkeeping.
        state.d.eval()
        with torch.no_grad():
            real_logits = state.d(hr)
            fake_logits = state.d(sr)
            adv_d = float(discriminator_loss(real_logits, fake_logits))
        l1 = pixel_l1(sr, hr)
        _raise_if_nonfinite(l1, sr, state.step)
        state.opt_g.zero_grad(set_to_none=True)
        (run.loss.eta_l1 * l1).backward()
        state.opt_g.step()
        with torch.no_grad():
            _, breakdown = total_generator_loss(
                sr.detach(), hr, real_logits, fake_logits, weights,
                run.arm, state.fx, adv_d=adv_d,
            )
    else:
        state.d.train()
        if state.step % run.train.d_every == 0:
            state.opt_d.zero_grad(set_to_none=True)
            d_loss = discriminator_loss(state.d(hr), state.d(sr.detach()))
            _raise_if_nonfinite(d_loss, sr, state.step)
            d_loss.backward()
            state.opt_d.step()
        else:
            with torch.no_grad():
                d_loss = discriminator_loss(state.d(hr), state.d(sr.detach()))

        state.opt_g.zero_grad(set_to_none=True)
        with torch.no_grad():
            real_logits = state.d(hr)
        fake_logits = state.d(sr)
        total, breakdown = total_generator_loss(
            sr, hr, real_logits, fake_logits, weights,
            run.arm, state.fx, adv_d=float(d_loss.detach()),
        )
        _raise_if_nonfinite(total, sr, state.step)
        total.backward()
        state.opt_g.step()

    for key, value in breakdown.as_dict().items():
        state.loss_sums[key] = state.loss_sums.get(key, 0.0) + value
    state.loss_count += 1
    state.step += 1
    return state, breakdown


def _raise_if_nonfinite(loss: torch.Tensor, sr: torch.Tensor, step: int) -> None:
    if torch.isfinite(loss).all():
        return
    with torch.no_grad():
        flat = sr.detach().reshape(sr.shape[0], -1)
        bad = [i for i in range(flat.shape[0]) if not torch.isfinite(flat[i]).all()]
    raise TrainingDiverged(step, bad)


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for tag, module in (("g", state.g), ("d", state.d)):
        for name, p in module.named_parameters():
            arrays[f"{tag}.param/{name}"] = p.detach().cpu().numpy()
        for name, b in module.named_buffers():
            arrays[f"{tag}.buf/{name}"] = b.detach().cpu().numpy()
    opt_scalars: dict[str, float] = {}
    for tag, opt in (("optg", state.opt_g), ("optd", state.opt_d)):
        for idx, st in opt.state_dict()["state"].items():
            for key, value in st.items():
                if isinstance(value, torch.Tensor):
                    arrays[f"{tag}/{idx}/{key}"] = value.detach().cpu().numpy()
                else:
                    opt_scalars[f"{tag}/{idx}/{key}"] = value
    meta = {
        "kind": "train-state",
        "step": state.step,
        "epoch": state.epoch,
        "config": run_config_to_dict(state.run),
        "loss_sums": state.loss_sums,
        "loss_count": state.loss_count,
        "opt_scalars": opt_scalars,
        "rng": {"scheme": "counter-derived", "seed": state.run.seed},
    }
    ckpt.save_archive(path, meta, arrays)


def load_checkpoint(path: str | Path) -> TrainState:
    meta, arrays = ckpt.load_archive(path)
    if meta.get("kind") != "train-state":
        raise ckpt.CheckpointError(f"{path}: not a training checkpoint")
    run = run_config_from_dict(meta["config"])
    state = init_train_state(run)
    state.step = int(meta["step"])
    state.epoch = int(meta["epoch"])
    state.loss_sums = dict(meta["loss_sums"])
    state.loss_count = int(meta["loss_count"])
    for tag, module in (("g", state.g), ("d", state.d)):
        params = dict(module.named_parameters())
        bufs = dict(module.named_buffers())
        with torch.no_grad():
            for name, p in params.items():
                p.copy_(torch.from_numpy(arrays[f"{tag}.param/{name}"].copy()))
            for name, b in bufs.items():
                b.copy_(torch.from_numpy(arrays[f"{tag}.buf/{name}"].copy()))
    opt_scalars = meta.get("opt_scalars", {})
    for tag, opt in (("optg", state.opt_g), ("optd", state.opt_d)):
        rebuilt: dict[int, dict] = {}
        prefix = f"{tag}/"
        for key, arr in arrays.items():
            if not key.startswith(prefix):
                continue
            _, idx, field_name = key.split("/", 2)
            rebuilt.setdefault(int(idx), {})[field_name] = torch.from_numpy(arr.copy())
        for key, value in opt_scalars.items():
            if not key.startswith(prefix):
                continue
            _, idx, field_name = key.split("/", 2)
            rebuilt.setdefault(int(idx), {})[field_name] = value
        sd = opt.state_dict()
        sd["state"] = rebuilt
        opt.load_state_dict(sd)
    return state


def _apply_lr_schedule(state: TrainState, step: int, total_steps: int) -> None:
    """Cosine decay from adam_lr to adam_lr*lr_final_scale; pure in step."""
    cfg = state.run.train
    if cfg.lr_final_scale >= 1.0:
        return
    frac = step / max(total_steps - 1, 1)
    scale = cfg.lr_final_scale + (1.0 - cfg.lr_final_scale) * 0.5 * (
        1.0 + math.cos(math.pi * frac)
    )
    lr = cfg.adam_lr * scale
    for opt in (state.opt_g, state.opt_d):
        for group in opt.param_groups:
            group["lr"] = lr


def _identity_dict(run: RunConfig) -> dict:
    """Config fields that must match for a checkpoint to resume a run.

    The stopping controls (epochs, max_steps) may differ; everything else
    changes the training math."""
    doc = run_config_to_dict(run)
    doc["train"].pop("epochs", None)
    doc["train"].pop("max_steps", None)
    return doc


def train(
    run: RunConfig,
    manifest: DatasetManifest,
    out_dir: str | Path,
    resume_from: Optional[str | Path] = None,
) -> TrainResult:
    """Run the configured number of epochs, logging one JSON record per step."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume_from is not None:
        state = load_checkpoint(resume_from)
        if _identity_dict(state.run) != _identity_dict(run):
            raise ValueError(
                "checkpoint config does not match the requested run config; "
                "resume with the original configuration (only epochs/max_steps "
                "may change)"
            )
        state.run = run
    else:
        state = init_train_state(run)

    entries = manifest.split_entries("train")
    bpe = len(entries) // run.train.batch_size
    if bpe == 0:
        raise ValueError(
            f"train split has {len(entries)} entries, fewer than one batch of "
            f"{run.train.batch_size}"
        )
    total_steps = run.train.epochs * bpe
    if run.train.max_steps is not None:
        total_steps = min(total_steps, run.train.max_steps)

    log_path = out_dir / "train_log.ndjson"
    cache = ImageCache()
    records: list[dict] = []
    mode = "a" if resume_from is not None else "w"
    with open(log_path, mode) as log_fh:
        while state.step < total_steps:
            step = state.step
            epoch = step // bpe
            state.epoch = epoch
            _apply_lr_schedule(state, step, total_steps)
            order = epoch_order(len(entries), run.seed, epoch)
            b = step % bpe
            idx = order[b * run.train.batch_size : (b + 1) * run.train.batch_size]
            rng = pair_rng(run.seed, epoch, b)
            batch = materialize_batch(manifest, entries, idx, run.data.crop_size, rng, cache)

            t0 = time.perf_counter()
            try:
                state, breakdown = train_step(state, batch)
            except TrainingDiverged as exc:
                dump = {
                    "error": "training-diverged",
                    "step": exc.step,
                    "bad_batch_indices": exc.bad_batch_indices,
                    "entry_paths": [entries[i].path for i in idx],
                }
                (out_dir / "diverged.json").write_text(json.dumps(dump, indent=1))
                raise
            wall_ms = (time.perf_counter() - t0) * 1000.0

            w = breakdown.weights
            record = {
                "step": step,
                "epoch": epoch,
                **breakdown.as_dict(),
                "lambda_adv": w.lambda_adv,
                "eta_l1": w.eta_l1,
                "beta_arm": w.beta_arm,
                "wall_ms": wall_ms,
            }
            log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            records.append(record)

            if run.train.checkpoint_every and state.step % run.train.checkpoint_every == 0:
                save_checkpoint(state, out_dir / f"ckpt_{state.step:07d}.lassr")

    final_path = out_dir / "ckpt_final.lassr"
    save_checkpoint(state, final_path)
    return TrainResult(
        state=state, checkpoint_path=final_path, log_path=log_path, records=records
    )


def load_generator(path: str | Path) -> tuple[Generator, RunConfig]:
    """Rebuild just the generator from a training checkpoint, in eval mode."""
    state = load_checkpoint(path)
    state.g.eval()
    return state.g, state.run
