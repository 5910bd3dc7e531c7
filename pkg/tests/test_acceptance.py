"""Acceptance suite: every release criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v`` (each criterion prints one
ACCEPTANCE <name>: PASS/FAIL line). All checks are hermetic: synthetic
moving-sprite data plus the seeded mock encoder. The cross-component check
runs only when the offline export tool has been built.
"""

import json
import math
import subprocess
import time
from pathlib import Path

import numpy as np
import pytest

from pearl.attention import diff_mask, flow_mask, score_patches, select_top_k
from pearl.composer import compose, grid_patches, parse_config
from pearl.dataset import (
    EpisodeDataset,
    SynthSpec,
    generate_synthetic,
    make_splits,
    save_dataset,
    split_indices,
)
from pearl.encoder import (
    EmbeddingCache,
    EmbeddingKey,
    MockEncoder,
    read_embeddings,
    write_embeddings,
)
from pearl.finetune import (
    AugMlpHead,
    CpcHead,
    DimHead,
    FinetuneHyper,
    infonce,
    load_head,
    save_head,
    train_cpc_head,
    train_dim_head,
)
from pearl.harness import (
    DatasetSpec,
    EncoderSpec,
    ExperimentConfig,
    FinetuneSpec,
    ProbeSpec,
    ResultsRecord,
    SynthSpecModel,
    run_experiment,
)
from pearl.imaging import read_flow, ssim_map
from pearl.probe import evaluate_probe, train_probe
from pearl.report import render_report
from pearl.tensor import Tensor, grad_check

from graphgen import random_graph_fn
from test_imaging import ssim_brute_force

REPO_ROOT = Path(__file__).resolve().parent.parent
EXPORT_TOOL = REPO_ROOT / "encoder-export" / "dist" / "cli.js"


class TestAutodiff:
    def test_hundred_randomized_graphs_under_60s(self):
        started = time.perf_counter()
        worst = 0.0
        for seed in range(100):
            fn, params = random_graph_fn(seed)
            worst = max(worst, grad_check(fn, params, h=1e-5))
        elapsed = time.perf_counter() - started
        assert worst < 1e-4, f"max rel err {worst}"
        assert elapsed < 60.0, f"took {elapsed:.1f}s"


class TestSsimOracle:
    def test_fifty_random_pairs_within_1e9(self):
        rng = np.random.default_rng(2024)
        for _ in range(50):
            a, b = rng.random((16, 16)), rng.random((16, 16))
            got = ssim_map(a, b, window=7)
            assert np.max(np.abs(got - ssim_brute_force(a, b, 7))) < 1e-9

    def test_self_similarity_identically_one(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            a = rng.random((20, 24))
            assert np.array_equal(ssim_map(a, a, window=7), np.ones((14, 18)))


class TestCompositionDimensions:
    def test_vector_widths(self):
        enc = MockEncoder(width=512, input_side=16, seed=0)
        rng = np.random.default_rng(3)
        prev, curr = rng.random((64, 64, 3)), rng.random((64, 64, 3))
        for text, width in (("FI", 512), ("FI+FI", 1024), ("FI+2x2", 2560), ("1x1+2x2+4x4", 10752)):
            rep = compose(parse_config(text), prev, curr, enc, None,
                          episode=0, frame=1, canonical_side=64)
            assert rep.vector.shape == (width,), text

    def test_grid_reassembly_bit_exact(self):
        rng = np.random.default_rng(4)
        frame = rng.random((224, 224, 3))
        for n in (2, 4):
            patches = grid_patches(frame, n)
            rows = [np.hstack(patches[r * n : (r + 1) * n]) for r in range(n)]
            assert np.array_equal(np.vstack(rows), frame)


class TestAttentionCorrectness:
    @staticmethod
    def _planted(rng):
        row, col = rng.integers(0, 4, size=2)
        y0 = int(row) * 16 + int(rng.integers(0, 5))
        x0 = int(col) * 16 + int(rng.integers(0, 5))
        dy, dx = int(rng.integers(0, 3)), int(rng.integers(1, 3))
        prev = np.zeros((64, 64, 3))
        curr = np.zeros((64, 64, 3))
        prev[y0 : y0 + 6, x0 : x0 + 6] = (1.0, 0.5, 0.2)
        curr[y0 + dy : y0 + dy + 6, x0 + dx : x0 + dx + 6] = (1.0, 0.5, 0.2)
        inside = np.zeros((64, 64), dtype=bool)
        inside[y0 : y0 + dy + 6, x0 : x0 + dx + 6] = True
        return prev, curr, inside, int(row) * 4 + int(col)

    def test_masks_concentrate_and_top4_hits_sprite_cell(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            prev, curr, inside, cell = self._planted(rng)
            for mask in (diff_mask(prev, curr), flow_mask(prev, curr)):
                ratio_ok = mask.values[inside].mean() >= 5.0 * mask.values[~inside].mean()
                assert ratio_ok, mask.source
            chosen = select_top_k(score_patches(diff_mask(prev, curr)), 4)
            assert any(c.grid == 4 and c.cell == cell for c in chosen)


class TestProbeProtocol:
    def test_separable_embeddings_f1(self):
        rng = np.random.default_rng(5)
        n, width = 600, 16
        centers = rng.standard_normal((2, width))
        centers = 5.0 * centers / np.linalg.norm(centers[0] - centers[1])
        y = rng.integers(0, 2, size=n)
        x = centers[y] + rng.standard_normal((n, width))
        tr, va, te = split_indices(n, (0.7, 0.1, 0.2), seed=0)
        model = train_probe(x, y, tr, va, classes=2, seed=0)
        assert evaluate_probe(model, x[va], y[va]).macro_f1 >= 0.99

    def test_shuffled_labels_at_chance(self):
        rng = np.random.default_rng(6)
        n = 4000
        x = rng.standard_normal((n, 16))
        y = rng.integers(0, 4, size=n)
        tr, va, te = split_indices(n, (0.7, 0.1, 0.2), seed=1)
        model = train_probe(x, y, tr, va, classes=4, seed=1)
        f1 = evaluate_probe(model, x[te], y[te]).macro_f1
        assert abs(f1 - 0.25) <= 0.05

    def test_50k_split_exact(self):
        frame = np.zeros((8, 8, 3), dtype=np.float32)
        episodes = [[frame] * 1000 for _ in range(50)]
        labels = [[{"c": 0}] * 1000 for _ in range(50)]
        ds = EpisodeDataset(episodes, labels, {"c": 2})
        split = make_splits(ds, ratios=(0.7, 0.1, 0.2), seed=0)
        assert (len(split.train), len(split.validation), len(split.test)) == (35_000, 5_000, 10_000)


ACCEPTANCE_SYNTH = SynthSpecModel(
    side=64, episodes=10, frames_per_episode=500, sprites=1, sprite_size=8,
    min_speed=1.0, max_speed=3.0, buckets=12, seed=42,
)
ACCEPTANCE_ENCODER = EncoderSpec(kind="mock", width=512, input_side=32, seed=7)


class TestEndToEndHermetic:
    def test_5000_frame_run_under_10_minutes(self):
        started = time.perf_counter()
        means = {}
        for composition in ("FI", "FI+2x2"):
            config = ExperimentConfig(
                dataset=DatasetSpec(synth=ACCEPTANCE_SYNTH),
                encoder=ACCEPTANCE_ENCODER,
                composition=composition,
                canonical_side=64,
                seed=0,
            )
            means[composition] = run_experiment(config).mean_f1
        elapsed = time.perf_counter() - started
        assert means["FI+2x2"] >= 0.8, means
        assert means["FI+2x2"] > means["FI"], means
        assert elapsed < 600.0, f"took {elapsed:.0f}s"


class TestContrastiveHeads:
    @staticmethod
    def _motion_dataset(seed=3):
        return generate_synthetic(
            SynthSpec(side=32, episodes=4, frames_per_episode=80, sprite_size=8,
                      min_speed=1.0, max_speed=1.5, buckets=4, seed=seed)
        )

    @staticmethod
    def _permuted(ds, seed):
        rng = np.random.default_rng(seed)
        episodes, labels = [], []
        for frames, rows in zip(ds.episodes, ds.labels):
            perm = rng.permutation(len(frames))
            episodes.append([frames[i] for i in perm])
            labels.append([rows[i] for i in perm])
        return EpisodeDataset(episodes, labels, ds.schema)

    def test_infonce_uniform_batch8(self):
        loss = infonce(Tensor(np.zeros((8, 8))), 1.0)
        assert abs(loss.item() - 2.07944) < 1e-6 + 4.6e-6  # ln 8 to quoted precision
        assert abs(loss.item() - math.log(8)) < 1e-12

    def test_temporal_and_predictive_beat_controls(self):
        ds = self._motion_dataset()
        ctrl_ds = self._permuted(ds, 9)
        enc = MockEncoder(width=64, input_side=32, seed=0)
        hyper = FinetuneHyper(steps=200, batch_size=48, lr=3e-3, temperature=0.1)

        t_true = train_dim_head(ds, enc, EmbeddingCache(), "T", "FI", hyper, seed=0, canonical_side=32)
        t_ctrl = train_dim_head(ctrl_ds, enc, EmbeddingCache(), "T", "FI", hyper, seed=0, canonical_side=32)
        ft, fc = np.mean(t_true.loss_history[-10:]), np.mean(t_ctrl.loss_history[-10:])
        assert (fc - ft) / fc >= 0.20, f"T-DIM gap {(fc - ft) / fc:.3f}"

        c_true = train_cpc_head(ds, enc, EmbeddingCache(), k_steps=2, context=4, latent=32,
                                hyper=hyper, seed=0, canonical_side=32)
        c_ctrl = train_cpc_head(ctrl_ds, enc, EmbeddingCache(), k_steps=2, context=4, latent=32,
                                hyper=hyper, seed=0, canonical_side=32)
        ft, fc = np.mean(c_true.loss_history[-10:]), np.mean(c_ctrl.loss_history[-10:])
        assert (fc - ft) / fc >= 0.20, f"CPC gap {(fc - ft) / fc:.3f}"

    def test_head_training_bit_reproducible(self):
        ds = self._motion_dataset(seed=8)
        enc = MockEncoder(width=64, input_side=32, seed=0)
        hyper = FinetuneHyper(steps=25, batch_size=24, lr=1e-3, temperature=0.1)
        a = train_dim_head(ds, enc, EmbeddingCache(), "T", "FI", hyper, seed=3, canonical_side=32)
        b = train_dim_head(ds, enc, EmbeddingCache(), "T", "FI", hyper, seed=3, canonical_side=32)
        assert a.loss_history == b.loss_history
        for (_, ta), (_, tb) in zip(a.named_tensors(), b.named_tensors()):
            assert ta.data.tobytes() == tb.data.tobytes()


class TestDeterminismAndPersistence:
    def _config(self, finetune=None):
        return ExperimentConfig(
            dataset=DatasetSpec(synth=SynthSpecModel(side=32, episodes=2, frames_per_episode=30,
                                                     sprite_size=8, buckets=4, seed=5)),
            encoder=EncoderSpec(kind="mock", width=64, input_side=32, seed=0),
            composition="FI",
            canonical_side=32,
            probe=ProbeSpec(lr=3e-3, batch_size=64, patience=3, max_epochs=25),
            finetune=finetune,
            seed=0,
        )

    def test_identical_config_and_seed_bit_identical_record(self):
        a = run_experiment(self._config())
        b = run_experiment(self._config())
        assert a.payload_bytes() == b.payload_bytes()
        ft = FinetuneSpec(kind="dim", mode="T", steps=10, batch_size=16, lr=1e-3)
        c = run_experiment(self._config(finetune=ft))
        d = run_experiment(self._config(finetune=ft))
        assert c.payload_bytes() == d.payload_bytes()

    def test_prle_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(12)
        entries = [
            (EmbeddingKey(e, f, "full"), rng.random(32).astype(np.float32))
            for e in range(3)
            for f in range(7)
        ]
        path = tmp_path / "store.prle"
        write_embeddings(path, entries)
        store = read_embeddings(path)
        for key, vec in entries:
            assert store.lookup(key).tobytes() == vec.tobytes()

    def test_prlh_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(13)
        heads = [
            AugMlpHead.create(rng, in_width=16, hidden=8, out_width=4),
            DimHead.create(rng, mode="ST", in_width=16, out_width=8),
            CpcHead.create(rng, in_width=16, latent=8, k_steps=2, context=3),
        ]
        for i, head in enumerate(heads):
            path = tmp_path / f"head{i}.prlh"
            save_head(path, head)
            loaded = load_head(path)
            for (_, ta), (_, tb) in zip(head.named_tensors(), loaded.named_tensors()):
                assert ta.data.tobytes() == tb.data.tobytes()

    def test_report_mu_column_recomputes(self, tmp_path):
        rng = np.random.default_rng(14)
        records = []
        for comp in ("FI", "FI+2x2", "4x4"):
            cats = {f"c{i}": float(rng.uniform(0.1, 0.99)) for i in range(4)}
            records.append(ResultsRecord(
                label="Pong", config={"composition": comp}, categories=cats,
                mean_f1=float(np.mean(list(cats.values()))), embedding_width=512,
            ))
        paths = render_report(records, tmp_path)
        rows = [line.split(",") for line in paths.csv.read_text().splitlines()]
        for row, rec in zip(rows[1:], records):
            values = [float(v) for v in row[2:6]]
            assert abs(float(row[6]) - np.mean(values)) < 1e-12
            assert float(row[6]) == rec.mean_f1


@pytest.mark.skipif(not EXPORT_TOOL.exists(), reason="encoder-export tool not built")
class TestCrossComponentContract:
    def test_export_files_load_in_core(self, tmp_path):
        ds = generate_synthetic(SynthSpec(side=32, episodes=1, frames_per_episode=4,
                                          sprite_size=8, buckets=4, seed=2))
        data_dir = tmp_path / "toy"
        save_dataset(ds, data_dir)
        manifest = {
            "dataset": str(data_dir),
            "canonical_side": 32,
            "embeddings": {
                "model": "seeded-projection:7",
                "width": 512,
                "input_side": 32,
                "variants": ["full", "grid2"],
                "out": str(tmp_path / "export.prle"),
            },
            "flow": {
                "model": "blockmatch",
                "block": 8,
                "radius": 4,
                "out_dir": str(tmp_path / "flow"),
            },
        }
        manifest_path = tmp_path / "manifest.json"
        manifest_path.write_text(json.dumps(manifest))
        proc = subprocess.run(
            ["node", str(EXPORT_TOOL), str(manifest_path)],
            capture_output=True, text=True, timeout=300,
        )
        assert proc.returncode == 0, proc.stderr

        store = read_embeddings(tmp_path / "export.prle")
        assert store.width == 512
        assert len(store) == 4 * (1 + 4)  # full + grid2 per frame
        expected_keys = sorted(
            EmbeddingKey(0, f, tag).text
            for f in range(4)
            for tag in ["full", "grid2:0", "grid2:1", "grid2:2", "grid2:3"]
        )
        assert store.keys() == expected_keys  # grammar + exact key match

        flow_files = sorted((tmp_path / "flow").glob("*.prlf"))
        assert len(flow_files) == 3  # n - 1 pairs
        for i, path in enumerate(flow_files, start=1):
            assert path.name == f"ep0000_fr{i:05d}.prlf"
            flow = read_flow(path)
            assert flow.grid_shape == (4, 4)  # canonical 32 / block 8
            assert flow.magnitude().max() <= 4 * np.sqrt(2) + 1e-6
