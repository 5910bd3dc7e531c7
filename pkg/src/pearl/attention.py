"""Spatio-temporal attention over consecutive frame pairs.

Difference masks come from structural similarity between grayscale frames;
flow masks from per-block displacement magnitude (computed by block matching
or imported from binary flow files). Masks either attenuate the frame
directly (mask-based attention) or score grid cells for patch selection
(patch-based attention).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import FlowField, block_match_flow, ssim_map, to_grayscale


class AttentionError(ValueError):
    pass


@dataclass(frozen=True)
class AttentionMask:
    """Per-pixel weights in [0, 1]; source is one of diff | flow | imported."""

    values: np.ndarray
    source: str

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class PatchCandidate:
    """One grid cell with its mean attention score."""

    grid: int  # 2 or 4
    cell: int  # row-major index within the grid
    y: int
    x: int
    height: int
    width: int
    score: float

    @property
    def tag(self) -> str:
        return f"grid{self.grid}:{self.cell}"


def diff_mask(prev: np.ndarray, curr: np.ndarray, window: int = 7) -> AttentionMask:
    """(1 - SSIM) / 2 on grayscale frames, edge positions take the nearest
    fully-covered window's value. Identical frames give an all-zero mask."""
    if prev.shape != curr.shape:
        raise AttentionError(f"frame shapes differ: {prev.shape} vs {curr.shape}")
    s = ssim_map(to_grayscale(prev), to_grayscale(curr), window=window)
    half = window // 2
    h, w = curr.shape[:2]
    full = np.pad(s, ((half, h - s.shape[0] - half), (half, w - s.shape[1] - half)), mode="edge")
    return AttentionMask(values=np.clip((1.0 - full) / 2.0, 0.0, 1.0), source="diff")


def flow_mask(
    prev: np.ndarray,
    curr: np.ndarray,
    flow: FlowField | None = None,
    block: int = 8,
    radius: int = 4,
) -> AttentionMask:
    """Per-pixel flow magnitude normalized to max 1 (all-zero flow stays zero).

    With no imported flow, runs the internal block matcher on grayscale
    frames. An imported grid must tile the frame exactly.
    """
    if prev.shape != curr.shape:
        raise AttentionError(f"frame shapes differ: {prev.shape} vs {curr.shape}")
    h, w = curr.shape[:2]
    source = "imported" if flow is not None else "flow"
    if flow is None:
        flow = block_match_flow(to_grayscale(prev), to_grayscale(curr), block=block, radius=radius)
    gh, gw = flow.grid_shape
    if h % gh or w % gw:
        raise AttentionError(f"flow grid {gh}x{gw} does not tile frame {h}x{w}")
    mag = flow.magnitude()
    peak = mag.max()
    if peak > 0:
        mag = mag / peak
    full = np.repeat(np.repeat(mag, h // gh, axis=0), w // gw, axis=1)
    return AttentionMask(values=full, source=source)


def apply_mask(frame: np.ndarray, mask: AttentionMask) -> np.ndarray:
    """Multiply every channel by the mask value."""
    if frame.shape[:2] != mask.values.shape:
        raise AttentionError(f"mask {mask.values.shape} does not match frame {frame.shape[:2]}")
    return frame * mask.values[:, :, None]


def score_patches(mask: AttentionMask, grids=(2, 4)) -> list[PatchCandidate]:
    """One candidate per cell of each grid; score is the mean mask value inside."""
    values = mask.values
    h, w = values.shape
    candidates = []
    for n in grids:
        if h % n or w % n:
            raise AttentionError(f"mask {h}x{w} not divisible into a {n}x{n} grid")
        ch, cw = h // n, w // n
        cell_means = values.reshape(n, ch, n, cw).mean(axis=(1, 3))
        for row in range(n):
            for col in range(n):
                candidates.append(
                    PatchCandidate(
                        grid=n,
                        cell=row * n + col,
                        y=row * ch,
                        x=col * cw,
                        height=ch,
                        width=cw,
                        score=float(cell_means[row, col]),
                    )
                )
    return candidates


def select_top_k(candidates, k: int) -> list[PatchCandidate]:
    """k highest-scoring candidates; ties break to the coarser grid, then
    row-major cell index. Output is ordered by the same rule."""
    candidates = list(candidates)
    if k > len(candidates):
        raise AttentionError(f"k={k} exceeds candidate count {len(candidates)}")
    ranked = sorted(candidates, key=lambda c: (-c.score, c.grid, c.cell))
    return ranked[:k]
