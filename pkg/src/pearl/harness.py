"""Experiment orchestration: config models, pipeline execution, results records.

A ``ResultsRecord`` carries the config snapshot, per-category F1, the mean,
and hashes of every input artifact. Everything except the ``meta`` block
(wall-clock timing) is deterministic for a given (config, seed):
``payload_bytes`` is the canonical serialization used for hashing and
bit-identity comparisons.
"""

from __future__ import annotations

import hashlib
import json
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .composer import FlowSource, compose_dataset, parse_config
from .dataset import EpisodeDataset, SynthSpec, generate_synthetic, load_dataset, save_dataset
from .encoder import (
    EmbeddingCache,
    EmbeddingKey,
    FileEncoder,
    MockEncoder,
    read_embeddings,
    write_embeddings,
)
from .finetune import (
    FinetuneHyper,
    apply_head,
    head_bytes,
    save_head,
    train_aug_head,
    train_cpc_head,
    train_dim_head,
)
from .probe import ProbeHyper, probe_suite

SCHEMA_VERSION = 1


class StageError(RuntimeError):
    """Pipeline failure labeled with the stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


class ResultsError(ValueError):
    pass


class SynthSpecModel(BaseModel):
    side: int = 64
    episodes: int = 4
    frames_per_episode: int = 64
    sprites: int = 1
    sprite_size: int = 10
    min_speed: float = 1.0
    max_speed: float = 3.0
    buckets: int = 8
    seed: int = 0

    def to_spec(self) -> SynthSpec:
        return SynthSpec(**self.model_dump())


class DatasetSpec(BaseModel):
    path: str | None = None
    synth: SynthSpecModel | None = None

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.path is None) == (self.synth is None):
            raise ValueError("dataset spec needs exactly one of 'path' or 'synth'")
        return self

    def load(self) -> EpisodeDataset:
        if self.path is not None:
            return load_dataset(self.path)
        return generate_synthetic(self.synth.to_spec())


class EncoderSpec(BaseModel):
    kind: str = "mock"  # mock | file
    width: int = 512
    input_side: int = 64
    seed: int = 0
    store_path: str | None = None

    @model_validator(mode="after")
    def _check(self):
        if self.kind not in ("mock", "file"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.kind == "file" and not self.store_path:
            raise ValueError("file-backed encoder needs store_path")
        return self

    def build(self):
        if self.kind == "mock":
            return MockEncoder(width=self.width, input_side=self.input_side, seed=self.seed)
        store = read_embeddings(self.store_path)
        return FileEncoder(store=store, path=self.store_path)


class FlowSpec(BaseModel):
    source: str = "block"  # block | files
    path: str | None = None
    block: int = 8
    radius: int = 4

    def build(self) -> FlowSource:
        return FlowSource(kind=self.source, path=self.path, block=self.block, radius=self.radius)


class FinetuneSpec(BaseModel):
    kind: str  # aug | dim | cpc
    mode: str = "T"  # dim only
    augmentations: list[str] = Field(default_factory=lambda: ["blur"])
    steps: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    temperature: float = 0.1
    k_steps: int = 3
    context: int = 8

    @model_validator(mode="after")
    def _check(self):
        if self.kind not in ("aug", "dim", "cpc"):
            raise ValueError(f"unknown finetune kind {self.kind!r}")
        return self

    def hyper(self) -> FinetuneHyper:
        return FinetuneHyper(
            steps=self.steps, batch_size=self.batch_size, lr=self.lr, temperature=self.temperature
        )


class ProbeSpec(BaseModel):
    lr: float = 3e-4
    batch_size: int = 256
    patience: int = 5
    max_epochs: int = 200
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)

    def hyper(self) -> ProbeHyper:
        return ProbeHyper(
            lr=self.lr, batch_size=self.batch_size, patience=self.patience, max_epochs=self.max_epochs
        )


class ExperimentConfig(BaseModel):
    dataset: DatasetSpec
    encoder: EncoderSpec = EncoderSpec()
    composition: str = "FI"
    canonical_side: int = 224
    normalize_units: bool = False
    flow: FlowSpec = FlowSpec()
    finetune: FinetuneSpec | None = None
    probe: ProbeSpec = ProbeSpec()
    seed: int = 0
    label: str | None = None
    output_dir: str | None = None
    save_caches: bool = True

    @model_validator(mode="after")
    def _check(self):
        parse_config(self.composition)  # fail fast on bad grammar
        return self


class ResultsRecord(BaseModel):
    schema_version: int = SCHEMA_VERSION
    label: str = ""
    config: dict
    categories: dict[str, float]
    category_details: dict[str, dict] = Field(default_factory=dict)
    mean_f1: float
    embedding_width: int
    hashes: dict[str, str] = Field(default_factory=dict)
    meta: dict = Field(default_factory=dict)

    def payload_bytes(self) -> bytes:
        """Canonical serialization of everything except timing metadata."""
        payload = self.model_dump(exclude={"meta"})
        return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")

    def record_hash(self) -> str:
        return hashlib.sha256(self.payload_bytes()).hexdigest()


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _finetune(config: ExperimentConfig, dataset, encoder, cache):
    spec = config.finetune
    common = dict(hyper=spec.hyper(), seed=config.seed, canonical_side=config.canonical_side)
    if spec.kind == "aug":
        return train_aug_head(dataset, encoder, cache, augmentations=spec.augmentations, **common)
    if spec.kind == "dim":
        return train_dim_head(dataset, encoder, cache, mode=spec.mode, config=config.composition, **common)
    return train_cpc_head(dataset, encoder, cache, k_steps=spec.k_steps, context=spec.context, **common)


def run_experiment(config: ExperimentConfig) -> ResultsRecord:
    """Run compose -> (optional finetune) -> probe and assemble the record.

    Failures are re-raised as StageError with the stage name so callers can
    report exactly where a pipeline broke.
    """
    started = time.perf_counter()
    out_dir = Path(config.output_dir) if config.output_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    with _stage("dataset"):
        dataset = config.dataset.load()
        dataset_hash = dataset.content_hash()

    with _stage("compose"):
        encoder = config.encoder.build()
        cache = EmbeddingCache()
        comp = parse_config(config.composition)
        x = compose_dataset(
            comp,
            dataset,
            encoder,
            cache,
            canonical_side=config.canonical_side,
            normalize=config.normalize_units,
            flow_source=config.flow.build(),
        )

    head = None
    head_hash = ""
    if config.finetune is not None:
        with _stage("finetune"):
            head = _finetune(config, dataset, encoder, cache)
            head_hash = hashlib.sha256(head_bytes(head)).hexdigest()
            if out_dir:
                save_head(out_dir / "head.prlh", head)
            x = apply_head(head, x)

    with _stage("probe"):
        report = probe_suite(
            dataset,
            x,
            hyper=config.probe.hyper(),
            seed=config.seed,
            ratios=tuple(config.probe.ratios),
        )

    if config.encoder.kind == "file":
        store_hash = hashlib.sha256(Path(config.encoder.store_path).read_bytes()).hexdigest()
    else:
        store_hash = hashlib.sha256(encoder.spec_string().encode()).hexdigest()

    record = ResultsRecord(
        label=config.label or dataset.name,
        config=config.model_dump(mode="json"),
        categories={c: r.f1 for c, r in report.categories.items()},
        category_details={
            c: {"best_epoch": r.best_epoch, "epochs_run": r.epochs_run, "error": r.error}
            for c, r in report.categories.items()
        },
        mean_f1=report.mean_f1,
        embedding_width=x.shape[1],
        hashes={"dataset": dataset_hash, "embedding_store": store_hash, "head": head_hash},
        meta={"wall_clock_seconds": time.perf_counter() - started},
    )

    if out_dir:
        with _stage("persist"):
            persist_results(record, out_dir / "results.json")
            if config.save_caches and config.encoder.kind == "mock":
                entries = [(k, v) for k, v in cache.items()]
                if entries:
                    write_embeddings(out_dir / "embeddings.prle", entries)
                composed = [
                    (EmbeddingKey(ref.episode, ref.index, f"composed:{_slug(config.composition)}"), row)
                    for ref, row in zip(dataset.frame_refs(), x.astype(np.float32))
                ]
                write_embeddings(out_dir / "composed.prle", composed)
    return record


def _slug(composition: str) -> str:
    return "".join(ch for ch in composition if ch.isalnum() or ch == "+")


def persist_results(record: ResultsRecord, path) -> None:
    doc = record.model_dump()
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_results(path) -> ResultsRecord:
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ResultsError(
            f"{path}: results schema version {version} unsupported (this build reads {SCHEMA_VERSION})"
        )
    record = ResultsRecord(**doc)
    scored = [
        f1
        for c, f1 in record.categories.items()
        if record.category_details.get(c, {}).get("error") is None
    ]
    expected = float(np.mean(scored)) if scored else 0.0
    if abs(expected - record.mean_f1) > 1e-12:
        raise ResultsError(
            f"{path}: mean_f1 {record.mean_f1} inconsistent with categories (expected {expected})"
        )
    return record


class DeltaTable(BaseModel):
    categories: dict[str, float]
    mean_delta: float


def compare_runs(baseline: ResultsRecord, treatment: ResultsRecord) -> DeltaTable:
    """Per-category and mean F1 differences (treatment - baseline)."""
    b_cats, t_cats = set(baseline.categories), set(treatment.categories)
    if b_cats != t_cats:
        diff = sorted(b_cats.symmetric_difference(t_cats))
        raise ResultsError(f"category sets differ; symmetric difference: {diff}")
    deltas = {c: treatment.categories[c] - baseline.categories[c] for c in sorted(b_cats)}
    return DeltaTable(categories=deltas, mean_delta=treatment.mean_f1 - baseline.mean_f1)


def synthesize_to_dir(spec: SynthSpecModel, out_dir) -> EpisodeDataset:
    """Generate a synthetic dataset and write its PNG tree."""
    dataset = generate_synthetic(spec.to_spec())
    save_dataset(dataset, out_dir)
    return dataset
