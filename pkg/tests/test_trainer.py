import json
import math
from pathlib import Path

import numpy as np
import pytest
import torch

from lassr.checkpoint import CheckpointError, load_archive
from lassr.config import run_config_from_dict
from lassr.data import SrPair, batch_iterator, downsample_bicubic, load_manifest
from lassr.losses import discriminator_loss
from lassr.trainer import (
    TrainingDiverged,
    init_train_state,
    load_checkpoint,
    save_checkpoint,
    train,
    train_step,
)

from conftest import micro_run_doc


def _strip(records):
    return [{k: v for k, v in r.items() if k != "wall_ms"} for r in records]


def _fixed_batch(rng, n=4, size=64):
    batch = []
    for _ in range(n):
        hr = rng.random((size, size, 3)).astype(np.float32)
        batch.append(SrPair(hr=hr, lr=downsample_bicubic(hr, 4)))
    return batch


@pytest.fixture()
def micro_manifest(small_sr_manifest):
    return load_manifest(small_sr_manifest)


class TestTrainStep:
    def test_bit_identical_from_serialized_state(self, micro_run, rng, tmp_path):
        state = init_train_state(micro_run)
        save_checkpoint(state, tmp_path / "s0.lassr")
        batch = _fixed_batch(rng)
        _, bd1 = train_step(state, batch)
        state2 = load_checkpoint(tmp_path / "s0.lassr")
        _, bd2 = train_step(state2, batch)
        assert bd1.as_dict() == bd2.as_dict()

    def test_d_update_does_not_touch_generator(self, micro_run, rng):
        state = init_train_state(micro_run)
        batch = _fixed_batch(rng)
        hr = torch.from_numpy(
            np.ascontiguousarray(np.stack([p.hr for p in batch]).transpose(0, 3, 1, 2))
        )
        lr = torch.from_numpy(
            np.ascontiguousarray(np.stack([p.lr for p in batch]).transpose(0, 3, 1, 2))
        )
        sr = state.g(lr)
        loss = discriminator_loss(state.d(hr), state.d(sr.detach()))
        loss.backward()
        assert all(p.grad is None for p in state.g.parameters())

    def test_warmup_leaves_discriminator_bit_identical(self, rng):
        run = run_config_from_dict(micro_run_doc(warmup_l1_steps=5))
        state = init_train_state(run)
        d_params = {k: v.detach().clone() for k, v in state.d.state_dict().items()}
        batch = _fixed_batch(rng)
        for _ in range(3):
            state, bd = train_step(state, batch)
        for k, v in state.d.state_dict().items():
            assert torch.equal(v, d_params[k]), k
        g_after = state.g.state_dict()
        assert state.step == 3

    def test_overfit_single_batch_halves_loss(self, micro_manifest):
        run = run_config_from_dict(micro_run_doc(warmup_l1_steps=0, d_every=2))
        state = init_train_state(run)
        batch = next(batch_iterator(micro_manifest, 2, rng_state=1, crop_size=64))
        totals = []
        for _ in range(200):
            state, bd = train_step(state, batch)
            totals.append(bd.total)
        assert totals[199] <= 0.5 * totals[10]

    def test_nonfinite_loss_aborts_with_indices(self, micro_run, rng):
        state = init_train_state(micro_run)
        batch = _fixed_batch(rng, n=3)
        bad_lr = batch[1].lr.copy()
        bad_lr[0, 0, 0] = np.nan
        batch[1] = SrPair(hr=batch[1].hr, lr=bad_lr)
        with pytest.raises(TrainingDiverged) as err:
            train_step(state, batch)
        assert err.value.bad_batch_indices == [1]


class TestTrainLoop:
    def test_step_count_arithmetic(self, micro_manifest, tmp_path):
        run = run_config_from_dict(micro_run_doc(epochs=2, batch_size=8))
        result = train(run, micro_manifest, tmp_path / "run")
        # 21 train entries // 8 = 2 batches/epoch, 2 epochs -> 4 steps
        n_train = len(micro_manifest.split_entries("train"))
        expected = (n_train // 8) * 2
        assert len(result.records) == expected
        lines = (tmp_path / "run" / "train_log.ndjson").read_text().splitlines()
        assert len(lines) == expected

    def test_fixed_seed_twin_runs_identical(self, micro_manifest, tmp_path):
        run = run_config_from_dict(micro_run_doc(epochs=2))
        a = train(run, micro_manifest, tmp_path / "a")
        b = train(run, micro_manifest, tmp_path / "b")
        assert _strip(a.records) == _strip(b.records)

    def test_kill_and_resume_matches_uninterrupted(self, micro_manifest, tmp_path):
        full = train(
            run_config_from_dict(micro_run_doc(epochs=3)), micro_manifest, tmp_path / "full"
        )
        part = train(
            run_config_from_dict(micro_run_doc(epochs=3, max_steps=3)),
            micro_manifest,
            tmp_path / "parts",
        )
        rest = train(
            run_config_from_dict(micro_run_doc(epochs=3)),
            micro_manifest,
            tmp_path / "parts",
            resume_from=part.checkpoint_path,
        )
        assert _strip(part.records) + _strip(rest.records) == _strip(full.records)
        log_lines = (tmp_path / "parts" / "train_log.ndjson").read_text().splitlines()
        full_lines = (tmp_path / "full" / "train_log.ndjson").read_text().splitlines()
        assert _strip([json.loads(l) for l in log_lines]) == _strip(
            [json.loads(l) for l in full_lines]
        )

    def test_resume_with_changed_config_rejected(self, micro_manifest, tmp_path):
        part = train(
            run_config_from_dict(micro_run_doc(epochs=2, max_steps=2)),
            micro_manifest,
            tmp_path / "r",
        )
        changed = run_config_from_dict(micro_run_doc(epochs=2, adam_lr=5e-4))
        with pytest.raises(ValueError, match="does not match"):
            train(changed, micro_manifest, tmp_path / "r", resume_from=part.checkpoint_path)

    def test_every_logged_record_satisfies_combination_identity(
        self, micro_manifest, tmp_path
    ):
        run = run_config_from_dict(micro_run_doc(epochs=2))
        result = train(run, micro_manifest, tmp_path / "run")
        for r in result.records:
            combo = (
                r["lambda_adv"] * r["adv_g"]
                + r["percep"]
                + r["eta_l1"] * r["l1"]
                + r["beta_arm"] * r["arm"]
            )
            assert r["total"] == pytest.approx(combo, abs=1e-6)

    def test_batch_too_large_rejected(self, micro_manifest, tmp_path):
        run = run_config_from_dict(micro_run_doc(batch_size=4096))
        with pytest.raises(ValueError, match="fewer than one batch"):
            train(run, micro_manifest, tmp_path / "run")


class TestCheckpoint:
    def test_save_load_save_byte_identical(self, micro_run, rng, tmp_path):
        state = init_train_state(micro_run)
        state, _ = train_step(state, _fixed_batch(rng))
        p1, p2 = tmp_path / "a.lassr", tmp_path / "b.lassr"
        save_checkpoint(state, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_roundtrip_restores_every_tensor(self, micro_run, rng, tmp_path):
        state = init_train_state(micro_run)
        state, _ = train_step(state, _fixed_batch(rng))
        save_checkpoint(state, tmp_path / "s.lassr")
        loaded = load_checkpoint(tmp_path / "s.lassr")
        for (k, a), (k2, b) in zip(
            state.g.state_dict().items(), loaded.g.state_dict().items()
        ):
            assert k == k2 and torch.equal(a, b)
        for (k, a), (k2, b) in zip(
            state.d.state_dict().items(), loaded.d.state_dict().items()
        ):
            assert k == k2 and torch.equal(a, b)
        assert loaded.step == state.step

    def test_truncated_archive_rejected(self, micro_run, tmp_path):
        state = init_train_state(micro_run)
        path = tmp_path / "t.lassr"
        save_checkpoint(state, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.lassr"
        path.write_bytes(b"NOT-A-CHECKPOINT" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_header_echoes_published_defaults(self, tmp_path):
        # tiny model, default train/loss sections: paper values in the header
        doc = micro_run_doc()
        doc["train"] = {}
        run = run_config_from_dict(doc)
        state = init_train_state(run)
        save_checkpoint(state, tmp_path / "d.lassr")
        meta, _ = load_archive(tmp_path / "d.lassr")
        cfg = meta["config"]
        assert cfg["train"]["epochs"] == 400
        assert cfg["train"]["batch_size"] == 32
        assert cfg["loss"]["lambda_adv"] == 5e-3
        assert cfg["loss"]["beta_arm"] == 5e-3
        assert cfg["loss"]["eta_l1"] == 1e-2
        assert meta["rng"] == {"scheme": "counter-derived", "seed": run.seed}
