"""HTTP service exposing every pipeline stage.

Each endpoint wraps one stage of the toolkit (synth, encode, mask, compose,
finetune, probe, full run, report, compare) with pydantic request/response
models. Paths in requests refer to the server's filesystem; the bundled CLI
talks to this app either in-process or over the network, so a single server
can keep heavy embedding caches warm across many experiment requests.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .composer import FlowSource, compose_dataset, grid_patches, parse_config
from .dataset import EpisodeDataset
from .encoder import EmbeddingCache, EmbeddingKey, cached_encode, read_embeddings, write_embeddings
from .finetune import head_bytes, save_head
from .harness import (
    DatasetSpec,
    DeltaTable,
    EncoderSpec,
    ExperimentConfig,
    FinetuneSpec,
    FlowSpec,
    ProbeSpec,
    ResultsRecord,
    StageError,
    SynthSpecModel,
    _finetune,
    compare_runs,
    load_results,
    run_experiment,
    synthesize_to_dir,
)
from .imaging import block_match_flow, resize_bilinear, to_grayscale, write_flow
from .probe import probe_suite
from .report import load_reference_csv, render_report

VARIANT_GROUPS = ("full", "grid2", "grid4", "masked:diff", "masked:flow", "aug:blur", "aug:jitter", "aug:crop")


class HealthResponse(BaseModel):
    status: str
    version: str


class SynthRequest(BaseModel):
    spec: SynthSpecModel = SynthSpecModel()
    out_dir: str


class SynthResponse(BaseModel):
    path: str
    episodes: int
    frames: int
    categories: list[str]


class EncodeRequest(BaseModel):
    dataset: DatasetSpec
    encoder: EncoderSpec = EncoderSpec()
    variants: list[str] = Field(default_factory=lambda: ["full"])
    canonical_side: int = 224
    flow: FlowSpec = FlowSpec()
    seed: int = 0
    out_path: str


class EncodeResponse(BaseModel):
    path: str
    records: int
    width: int


class MaskRequest(BaseModel):
    dataset: DatasetSpec
    block: int = 8
    radius: int = 4
    canonical_side: int = 224
    out_dir: str


class MaskResponse(BaseModel):
    out_dir: str
    files: int
    grid: tuple[int, int]


class ComposeRequest(BaseModel):
    dataset: DatasetSpec
    encoder: EncoderSpec = EncoderSpec()
    composition: str = "FI"
    canonical_side: int = 224
    normalize_units: bool = False
    flow: FlowSpec = FlowSpec()
    out_path: str


class ComposeResponse(BaseModel):
    path: str
    records: int
    width: int


class FinetuneRequest(BaseModel):
    dataset: DatasetSpec
    encoder: EncoderSpec = EncoderSpec()
    composition: str = "FI"
    canonical_side: int = 224
    spec: FinetuneSpec
    seed: int = 0
    out_path: str


class FinetuneResponse(BaseModel):
    path: str
    kind: str
    final_loss: float
    steps: int
    head_hash: str


class RepresentationSpec(BaseModel):
    prle_path: str | None = None
    encoder: EncoderSpec | None = None
    composition: str = "FI"
    canonical_side: int = 224
    normalize_units: bool = False
    flow: FlowSpec = FlowSpec()


class ProbeRequest(BaseModel):
    dataset: DatasetSpec
    representations: RepresentationSpec = RepresentationSpec(encoder=EncoderSpec())
    probe: ProbeSpec = ProbeSpec()
    seed: int = 0


class CategoryScore(BaseModel):
    f1: float
    best_epoch: int
    epochs_run: int
    error: str | None = None


class ProbeResponse(BaseModel):
    categories: dict[str, CategoryScore]
    mean_f1: float


class ReportRequest(BaseModel):
    record_paths: list[str]
    out_dir: str
    name: str = "report"
    reference_csv: str | None = None  # label,config,value rows plotted alongside


class ReportResponse(BaseModel):
    csv: str
    svg: str


class CompareRequest(BaseModel):
    baseline_path: str
    treatment_path: str


app = FastAPI(title="pearl", version=__version__)


def _http_stage_error(exc: StageError) -> HTTPException:
    return HTTPException(status_code=422, detail={"stage": exc.stage, "message": str(exc.cause)})


@app.exception_handler(StageError)
async def _stage_error_handler(request, exc: StageError):
    raise _http_stage_error(exc)


def _guard(stage: str, fn):
    try:
        return fn()
    except StageError as exc:
        raise _http_stage_error(exc) from exc
    except HTTPException:
        raise
    except Exception as exc:
        raise HTTPException(status_code=422, detail={"stage": stage, "message": str(exc)}) from exc


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/synth", response_model=SynthResponse)
def synth(req: SynthRequest) -> SynthResponse:
    def work():
        dataset = synthesize_to_dir(req.spec, req.out_dir)
        return SynthResponse(
            path=req.out_dir,
            episodes=dataset.n_episodes,
            frames=dataset.n_frames,
            categories=sorted(dataset.schema),
        )

    return _guard("dataset", work)


def encode_variants(
    dataset: EpisodeDataset,
    encoder,
    variants,
    canonical_side: int,
    flow_source: FlowSource,
    seed: int,
) -> list[tuple[EmbeddingKey, np.ndarray]]:
    """Expand variant groups (full, grid2, grid4, masked:*, aug:*) into one
    embedding per frame per concrete variant tag."""
    from .attention import apply_mask, diff_mask
    from .finetune import _aug_seed, augment_frame

    for v in variants:
        if v not in VARIANT_GROUPS:
            raise ValueError(f"unknown variant group {v!r} (expected one of {VARIANT_GROUPS})")
    entries: list[tuple[EmbeddingKey, np.ndarray]] = []
    cache = EmbeddingCache()
    for e, frames in enumerate(dataset.episodes):
        for i, frame in enumerate(frames):
            curr_c = resize_bilinear(frame, canonical_side, canonical_side)
            prev_c = resize_bilinear(frames[i - 1], canonical_side, canonical_side) if i else curr_c
            for group in variants:
                if group == "full":
                    tagged = [("full", curr_c)]
                elif group in ("grid2", "grid4"):
                    n = int(group[4])
                    tagged = [(f"grid{n}:{j}", p) for j, p in enumerate(grid_patches(curr_c, n))]
                elif group == "masked:diff":
                    tagged = [("masked:diff", apply_mask(curr_c, diff_mask(prev_c, curr_c)))]
                elif group == "masked:flow":
                    mask = flow_source.mask(prev_c, curr_c, e, i)
                    tagged = [("masked:flow", apply_mask(curr_c, mask))]
                else:  # aug:*
                    kind = group.split(":")[1]
                    tagged = [
                        (f"aug:{kind}:{view}", augment_frame(curr_c, kind, _aug_seed(seed, e, i, view)))
                        for view in (0, 1)
                    ]
                for tag, image in tagged:
                    key = EmbeddingKey(e, i, tag)
                    entries.append((key, cached_encode(encoder, cache, key, image)))
    return entries


@app.post("/encode", response_model=EncodeResponse)
def encode(req: EncodeRequest) -> EncodeResponse:
    def work():
        dataset = req.dataset.load()
        encoder = req.encoder.build()
        entries = encode_variants(
            dataset, encoder, req.variants, req.canonical_side, req.flow.build(), req.seed
        )
        write_embeddings(req.out_path, entries)
        return EncodeResponse(path=req.out_path, records=len(entries), width=encoder.width)

    return _guard("encode", work)


@app.post("/mask", response_model=MaskResponse)
def mask(req: MaskRequest) -> MaskResponse:
    def work():
        dataset = req.dataset.load()
        out = Path(req.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        count = 0
        grid = (0, 0)
        for e, frames in enumerate(dataset.episodes):
            gray = [
                to_grayscale(resize_bilinear(f, req.canonical_side, req.canonical_side))
                for f in frames
            ]
            for i in range(1, len(frames)):
                flow = block_match_flow(gray[i - 1], gray[i], block=req.block, radius=req.radius)
                grid = flow.grid_shape
                write_flow(out / f"ep{e:04d}_fr{i:05d}.prlf", flow)
                count += 1
        return MaskResponse(out_dir=str(out), files=count, grid=grid)

    return _guard("mask", work)


@app.post("/compose", response_model=ComposeResponse)
def compose_endpoint(req: ComposeRequest) -> ComposeResponse:
    def work():
        dataset = req.dataset.load()
        encoder = req.encoder.build()
        config = parse_config(req.composition)
        x = compose_dataset(
            config,
            dataset,
            encoder,
            EmbeddingCache(),
            canonical_side=req.canonical_side,
            normalize=req.normalize_units,
            flow_source=req.flow.build(),
        )
        slug = "".join(ch for ch in req.composition if ch.isalnum() or ch == "+")
        entries = [
            (EmbeddingKey(ref.episode, ref.index, f"composed:{slug}"), row)
            for ref, row in zip(dataset.frame_refs(), x.astype(np.float32))
        ]
        write_embeddings(req.out_path, entries)
        return ComposeResponse(path=req.out_path, records=len(entries), width=x.shape[1])

    return _guard("compose", work)


@app.post("/finetune", response_model=FinetuneResponse)
def finetune_endpoint(req: FinetuneRequest) -> FinetuneResponse:
    def work():
        config = ExperimentConfig(
            dataset=req.dataset,
            encoder=req.encoder,
            composition=req.composition,
            canonical_side=req.canonical_side,
            finetune=req.spec,
            seed=req.seed,
        )
        dataset = req.dataset.load()
        encoder = req.encoder.build()
        head = _finetune(config, dataset, encoder, EmbeddingCache())
        save_head(req.out_path, head)
        digest = hashlib.sha256(head_bytes(head)).hexdigest()
        return FinetuneResponse(
            path=req.out_path,
            kind=head.kind,
            final_loss=head.loss_history[-1] if head.loss_history else float("nan"),
            steps=len(head.loss_history),
            head_hash=digest,
        )

    return _guard("finetune", work)


def _representations_for(dataset: EpisodeDataset, spec: RepresentationSpec) -> np.ndarray:
    if spec.prle_path:
        store = read_embeddings(spec.prle_path)
        by_frame: dict[tuple[int, int], str] = {}
        for text in store.keys():
            key = EmbeddingKey.parse(text)
            by_frame[(key.episode, key.frame)] = text
        rows = []
        for ref in dataset.frame_refs():
            text = by_frame.get((ref.episode, ref.index))
            if text is None:
                raise ValueError(f"store {spec.prle_path} has no record for episode {ref.episode} frame {ref.index}")
            rows.append(store.lookup(text).astype(np.float64))
        return np.vstack(rows)
    if spec.encoder is None:
        raise ValueError("representations need either prle_path or an encoder")
    encoder = spec.encoder.build()
    return compose_dataset(
        parse_config(spec.composition),
        dataset,
        encoder,
        EmbeddingCache(),
        canonical_side=spec.canonical_side,
        normalize=spec.normalize_units,
        flow_source=spec.flow.build(),
    )


@app.post("/probe", response_model=ProbeResponse)
def probe_endpoint(req: ProbeRequest) -> ProbeResponse:
    def work():
        dataset = req.dataset.load()
        x = _representations_for(dataset, req.representations)
        report = probe_suite(
            dataset, x, hyper=req.probe.hyper(), seed=req.seed, ratios=tuple(req.probe.ratios)
        )
        return ProbeResponse(
            categories={
                c: CategoryScore(
                    f1=r.f1, best_epoch=r.best_epoch, epochs_run=r.epochs_run, error=r.error
                )
                for c, r in report.categories.items()
            },
            mean_f1=report.mean_f1,
        )

    return _guard("probe", work)


@app.post("/run", response_model=ResultsRecord)
def run(config: ExperimentConfig) -> ResultsRecord:
    try:
        return run_experiment(config)
    except StageError as exc:
        raise _http_stage_error(exc) from exc


@app.post("/report", response_model=ReportResponse)
def report_endpoint(req: ReportRequest) -> ReportResponse:
    def work():
        records = [load_results(p) for p in req.record_paths]
        reference = load_reference_csv(req.reference_csv) if req.reference_csv else None
        paths = render_report(records, req.out_dir, name=req.name, reference=reference)
        return ReportResponse(csv=str(paths.csv), svg=str(paths.svg))

    return _guard("report", work)


@app.post("/compare", response_model=DeltaTable)
def compare(req: CompareRequest) -> DeltaTable:
    def work():
        return compare_runs(load_results(req.baseline_path), load_results(req.treatment_path))

    return _guard("compare", work)
