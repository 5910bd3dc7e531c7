"""Composition expressions and representation assembly.

A composition string like ``FI+2x2`` or ``DP5`` describes which embeddings
are concatenated for each frame: the full image, grid patches, masked
frames, or attention-selected patches. Every frame is first resized to a
canonical square so grids tile exactly; patches are later resized up to the
encoder's input side, which is what zooms them in.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attention import AttentionMask, apply_mask, diff_mask, flow_mask, score_patches, select_top_k
from .encoder import EmbeddingCache, EmbeddingKey, cached_encode
from .imaging import FlowField, read_flow, resize_bilinear

CANONICAL_SIDE = 224


class ConfigParseError(ValueError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} (at position {position})")


class CompositionError(ValueError):
    pass


@dataclass(frozen=True)
class Unit:
    """One composition unit; ``slots`` is how many embeddings it contributes."""

    kind: str  # FI | GRID | MASK | MASKPLUS | TOPK
    token: str
    n: int = 0  # grid size for GRID
    source: str = ""  # diff | flow for MASK/MASKPLUS/TOPK
    k: int = 0  # selected patches for TOPK

    @property
    def slots(self) -> int:
        if self.kind == "FI":
            return 1
        if self.kind == "GRID":
            return self.n * self.n
        if self.kind == "MASK":
            return 1
        if self.kind == "MASKPLUS":
            return 2
        return self.k + 1  # TOPK


@dataclass(frozen=True)
class CompositionConfig:
    text: str
    units: tuple[Unit, ...]

    @property
    def slot_count(self) -> int:
        return sum(u.slots for u in self.units)

    def vector_width(self, encoder_width: int) -> int:
        return self.slot_count * encoder_width

    @property
    def needs_mask_sources(self) -> tuple[str, ...]:
        return tuple(sorted({u.source for u in self.units if u.source}))

    @property
    def grid_sizes(self) -> tuple[int, ...]:
        return tuple(sorted({u.n for u in self.units if u.kind == "GRID"}))

    @property
    def has_full_image(self) -> bool:
        return any(u.kind in ("FI", "MASKPLUS", "TOPK") for u in self.units)


_BASIC_TOKENS = {
    "FI": Unit("FI", "FI"),
    "1x1": Unit("FI", "1x1"),
    "2x2": Unit("GRID", "2x2", n=2),
    "4x4": Unit("GRID", "4x4", n=4),
    "FM": Unit("MASK", "FM", source="flow"),
    "DM": Unit("MASK", "DM", source="diff"),
    "FP5": Unit("TOPK", "FP5", source="flow", k=4),
    "DP5": Unit("TOPK", "DP5", source="diff", k=4),
}

_MASKPLUS = {
    "FM": Unit("MASKPLUS", "FM+", source="flow"),
    "DM": Unit("MASKPLUS", "DM+", source="diff"),
}


def parse_config(text: str) -> CompositionConfig:
    """Parse a '+'-joined composition expression.

    Tokens: FI (alias 1x1), 2x2, 4x4, FM, DM, FM+, DM+, FP5, DP5. A trailing
    '+' after FM or DM appends the unmasked full image (the FM+/DM+ forms).
    """
    parts = text.split("+")
    units: list[Unit] = []
    pos = 0
    for idx, part in enumerate(parts):
        if part == "":
            at_end = idx == len(parts) - 1
            if at_end and units and units[-1].kind == "MASK":
                units[-1] = _MASKPLUS[units[-1].token]
                break
            raise ConfigParseError("empty composition token", pos)
        if part not in _BASIC_TOKENS:
            raise ConfigParseError(f"unknown composition token {part!r}", pos)
        units.append(_BASIC_TOKENS[part])
        pos += len(part) + 1
    if not units:
        raise ConfigParseError("empty composition", 0)
    return CompositionConfig(text=text, units=tuple(units))


def grid_patches(frame: np.ndarray, n: int) -> list[np.ndarray]:
    """Row-major n x n tiling into equally-sized non-overlapping patches."""
    if n == 1:
        return [frame]
    h, w = frame.shape[:2]
    if h % n or w % n:
        raise CompositionError(f"frame {h}x{w} not divisible into {n}x{n} patches")
    ph, pw = h // n, w // n
    return [
        frame[r * ph : (r + 1) * ph, c * pw : (c + 1) * pw]
        for r in range(n)
        for c in range(n)
    ]


class FlowSource:
    """Where flow fields come from: the internal block matcher, or a directory
    of PRLF files named ep<ep:04d>_fr<frame:05d>.prlf keyed by the current frame."""

    def __init__(self, kind: str = "block", path=None, block: int = 8, radius: int = 4):
        if kind not in ("block", "files"):
            raise CompositionError(f"unknown flow source kind {kind!r}")
        if kind == "files" and path is None:
            raise CompositionError("flow source kind 'files' requires a path")
        self.kind = kind
        self.path = Path(path) if path is not None else None
        self.block = block
        self.radius = radius

    def flow_for(self, prev: np.ndarray, curr: np.ndarray, episode: int, frame: int) -> FlowField | None:
        if self.kind == "block":
            return None  # flow_mask computes block matching itself
        if frame == 0:
            gh = curr.shape[0] // self.block
            gw = curr.shape[1] // self.block
            return FlowField(dx=np.zeros((gh, gw)), dy=np.zeros((gh, gw)))
        return read_flow(self.path / f"ep{episode:04d}_fr{frame:05d}.prlf")

    def mask(self, prev: np.ndarray, curr: np.ndarray, episode: int, frame: int) -> AttentionMask:
        return flow_mask(
            prev,
            curr,
            flow=self.flow_for(prev, curr, episode, frame),
            block=self.block,
            radius=self.radius,
        )


@dataclass(frozen=True)
class LayoutEntry:
    token: str
    start: int
    stop: int
    tags: tuple[str, ...]


@dataclass(frozen=True)
class ComposedRepresentation:
    vector: np.ndarray
    layout: tuple[LayoutEntry, ...]

    @property
    def width(self) -> int:
        return self.vector.shape[0]


def _masks_for(config, prev_c, curr_c, episode, frame, flow_source, window):
    masks = {}
    for source in config.needs_mask_sources:
        if source == "diff":
            masks["diff"] = diff_mask(prev_c, curr_c, window=window)
        else:
            masks["flow"] = flow_source.mask(prev_c, curr_c, episode, frame)
    return masks


def compose(
    config: CompositionConfig,
    prev: np.ndarray,
    curr: np.ndarray,
    encoder,
    cache: EmbeddingCache | None,
    *,
    episode: int,
    frame: int,
    canonical_side: int = CANONICAL_SIDE,
    normalize: bool = False,
    flow_source: FlowSource | None = None,
    ssim_window: int = 7,
) -> ComposedRepresentation:
    """Assemble the concatenated representation of ``curr`` (with ``prev``
    supplying temporal context for masks; pass prev=curr on the first frame
    of an episode, which yields a zero mask)."""
    if canonical_side % 4:
        raise CompositionError(f"canonical side {canonical_side} must be divisible by 4")
    curr_c = resize_bilinear(curr, canonical_side, canonical_side)
    prev_c = curr_c if prev is curr else resize_bilinear(prev, canonical_side, canonical_side)
    if flow_source is None:
        flow_source = FlowSource("block")
    masks = _masks_for(config, prev_c, curr_c, episode, frame, flow_source, ssim_window)

    slots: list[tuple[str, np.ndarray]] = []
    layout: list[LayoutEntry] = []
    for unit in config.units:
        unit_slots: list[tuple[str, np.ndarray]] = []
        if unit.kind == "FI":
            unit_slots.append(("full", curr_c))
        elif unit.kind == "GRID":
            for i, patch in enumerate(grid_patches(curr_c, unit.n)):
                unit_slots.append((f"grid{unit.n}:{i}", patch))
        elif unit.kind in ("MASK", "MASKPLUS"):
            masked = apply_mask(curr_c, masks[unit.source])
            unit_slots.append((f"masked:{unit.source}", masked))
            if unit.kind == "MASKPLUS":
                unit_slots.append(("full", curr_c))
        else:  # TOPK
            unit_slots.append(("full", curr_c))
            chosen = select_top_k(score_patches(masks[unit.source]), unit.k)
            for cand in chosen:
                patch = curr_c[cand.y : cand.y + cand.height, cand.x : cand.x + cand.width]
                unit_slots.append((cand.tag, patch))
        start = len(slots)
        slots.extend(unit_slots)
        layout.append(
            LayoutEntry(
                token=unit.token,
                start=start * encoder.width,
                stop=len(slots) * encoder.width,
                tags=tuple(tag for tag, _ in unit_slots),
            )
        )

    pieces = []
    for tag, image in slots:
        key = EmbeddingKey(episode, frame, tag)
        vec = cached_encode(encoder, cache, key, image).astype(np.float64)
        if vec.shape[0] != encoder.width:
            raise CompositionError(
                f"embedding width {vec.shape[0]} for {key.text} does not match encoder width {encoder.width}"
            )
        if normalize:
            norm = np.linalg.norm(vec)
            if norm > 0:
                vec = vec / norm
        pieces.append(vec)
    return ComposedRepresentation(vector=np.concatenate(pieces), layout=tuple(layout))


def compose_dataset(
    config: CompositionConfig,
    dataset,
    encoder,
    cache: EmbeddingCache | None = None,
    *,
    canonical_side: int = CANONICAL_SIDE,
    normalize: bool = False,
    flow_source: FlowSource | None = None,
    ssim_window: int = 7,
) -> np.ndarray:
    """Composed representations for every frame, row-aligned with
    dataset.frame_refs() order (episode-major)."""
    rows = []
    for e, frames in enumerate(dataset.episodes):
        for i, curr in enumerate(frames):
            prev = frames[i - 1] if i > 0 else curr
            rep = compose(
                config,
                prev,
                curr,
                encoder,
                cache,
                episode=e,
                frame=i,
                canonical_side=canonical_side,
                normalize=normalize,
                flow_source=flow_source,
                ssim_window=ssim_window,
            )
            rows.append(rep.vector)
    return np.vstack(rows)
