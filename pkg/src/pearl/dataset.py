"""Episode/frame storage, label schema, split protocol, and a synthetic generator.

The synthetic generator renders sprites bouncing around a frame and labels
every frame with the quantized sprite positions, which gives hermetic
end-to-end tests ground truth without any emulator.

On-disk layout: ``root/episode_<k>/frame_<i>.png`` plus ``root/labels.csv``
whose first row is ``#schema,<category>=<class_count>,...`` followed by a
``episode,frame,<category>,...`` header and one row per frame.
"""

from __future__ import annotations

import csv
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

SPRITE_PALETTE = [
    (1.0, 0.35, 0.2),
    (0.25, 1.0, 0.35),
    (0.3, 0.5, 1.0),
    (1.0, 1.0, 0.3),
    (1.0, 0.4, 1.0),
    (0.4, 1.0, 1.0),
]


class DatasetError(ValueError):
    pass


class SchemaValidationError(DatasetError):
    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(v.message for v in self.violations[:5])
        more = f" (+{len(self.violations) - 5} more)" if len(self.violations) > 5 else ""
        super().__init__(f"{len(self.violations)} schema violation(s): {lines}{more}")


@dataclass(frozen=True, order=True)
class FrameRef:
    episode: int
    index: int


@dataclass(frozen=True)
class SynthSpec:
    side: int = 64
    episodes: int = 4
    frames_per_episode: int = 64
    sprites: int = 1
    sprite_size: int = 10
    min_speed: float = 1.0
    max_speed: float = 3.0
    buckets: int = 8
    seed: int = 0

    def validate(self) -> None:
        if self.side < 8:
            raise DatasetError(f"frame side {self.side} too small (min 8)")
        if self.sprite_size < 1 or self.sprite_size >= self.side:
            raise DatasetError(f"sprite size {self.sprite_size} does not fit a {self.side}px frame")
        if self.buckets < 2:
            raise DatasetError(f"bucket count {self.buckets} must be >= 2")
        if self.episodes < 1 or self.frames_per_episode < 1 or self.sprites < 1:
            raise DatasetError("episodes, frames_per_episode, and sprites must be positive")
        if not (0 < self.min_speed <= self.max_speed):
            raise DatasetError(f"bad speed range [{self.min_speed}, {self.max_speed}]")


class EpisodeDataset:
    """Ordered episodes of frames plus per-frame categorical labels.

    Immutable after construction; episode order carries the temporal
    structure that the contrastive objectives rely on.
    """

    def __init__(self, episodes, labels, schema, name: str = "dataset"):
        self.episodes: list[list[np.ndarray]] = episodes
        self.labels: list[list[dict[str, int]]] = labels
        self.schema: dict[str, int] = dict(schema)
        self.name = name
        if len(episodes) != len(labels):
            raise DatasetError("episodes and labels disagree in episode count")
        for frames, rows in zip(episodes, labels):
            if len(frames) != len(rows):
                raise DatasetError("episodes and labels disagree in frame count")

    @property
    def n_frames(self) -> int:
        return sum(len(ep) for ep in self.episodes)

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)

    def frame_refs(self) -> list[FrameRef]:
        return [FrameRef(e, i) for e, ep in enumerate(self.episodes) for i in range(len(ep))]

    def frame(self, ref: FrameRef) -> np.ndarray:
        return self.episodes[ref.episode][ref.index]

    def label(self, ref: FrameRef, category: str) -> int:
        return self.labels[ref.episode][ref.index][category]

    def label_vector(self, category: str) -> np.ndarray:
        """Labels for one category, aligned with frame_refs() order."""
        return np.array(
            [row[category] for rows in self.labels for row in rows], dtype=np.int64
        )

    def content_hash(self) -> str:
        """sha256 over schema, pixels, and labels; stable across loads."""
        h = hashlib.sha256()
        for cat in sorted(self.schema):
            h.update(f"{cat}={self.schema[cat]};".encode())
        for ep_frames, ep_rows in zip(self.episodes, self.labels):
            for frame, row in zip(ep_frames, ep_rows):
                h.update(np.ascontiguousarray(frame, dtype=np.float32).tobytes())
                for cat in sorted(row):
                    h.update(f"{cat}:{row[cat]};".encode())
        return h.hexdigest()


def _bucket(value: float, side: int, buckets: int) -> int:
    return min(buckets - 1, int(value / side * buckets))


def generate_synthetic(spec: SynthSpec) -> EpisodeDataset:
    """Sprites with constant velocity reflecting off walls, labeled by
    quantized x and y position of each sprite's rendered center."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    size = spec.sprite_size
    side = spec.side
    limit = side - size

    categories = [f"sprite{i}_{axis}" for i in range(spec.sprites) for axis in ("x", "y")]
    schema = {cat: spec.buckets for cat in categories}

    episodes, labels = [], []
    for _ in range(spec.episodes):
        pos = rng.uniform(0.0, limit, size=(spec.sprites, 2))
        speed = rng.uniform(spec.min_speed, spec.max_speed, size=(spec.sprites, 2))
        vel = speed * rng.choice([-1.0, 1.0], size=(spec.sprites, 2))
        frames, rows = [], []
        for _ in range(spec.frames_per_episode):
            frame = np.zeros((side, side, 3), dtype=np.float32)
            row = {}
            for s in range(spec.sprites):
                px = int(round(pos[s, 0]))
                py = int(round(pos[s, 1]))
                frame[py : py + size, px : px + size] = SPRITE_PALETTE[s % len(SPRITE_PALETTE)]
                center = (size - 1) / 2.0
                row[f"sprite{s}_x"] = _bucket(px + center, side, spec.buckets)
                row[f"sprite{s}_y"] = _bucket(py + center, side, spec.buckets)
            frames.append(frame)
            rows.append(row)
            pos += vel
            for s in range(spec.sprites):
                for axis in range(2):
                    if pos[s, axis] < 0:
                        pos[s, axis] = -pos[s, axis]
                        vel[s, axis] = -vel[s, axis]
                    elif pos[s, axis] > limit:
                        pos[s, axis] = 2 * limit - pos[s, axis]
                        vel[s, axis] = -vel[s, axis]
        episodes.append(frames)
        labels.append(rows)
    return EpisodeDataset(episodes, labels, schema, name="synthetic")


def save_dataset(dataset: EpisodeDataset, root) -> None:
    """Write the PNG tree and labels.csv for a dataset."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    categories = sorted(dataset.schema)
    for e, frames in enumerate(dataset.episodes):
        ep_dir = root / f"episode_{e}"
        ep_dir.mkdir(exist_ok=True)
        for i, frame in enumerate(frames):
            img = Image.fromarray(
                np.clip(np.rint(np.asarray(frame, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8),
                mode="RGB",
            )
            img.save(ep_dir / f"frame_{i}.png")
    with open(root / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["#schema"] + [f"{c}={dataset.schema[c]}" for c in categories])
        writer.writerow(["episode", "frame"] + categories)
        for e, rows in enumerate(dataset.labels):
            for i, row in enumerate(rows):
                writer.writerow([e, i] + [row[c] for c in categories])


_EPISODE_DIR = re.compile(r"^episode_(\d+)$")
_FRAME_FILE = re.compile(r"^frame_(\d+)\.png$")


def load_dataset(root) -> EpisodeDataset:
    """Load a PNG tree; frames sorted numerically, schema from labels.csv."""
    root = Path(root)
    labels_path = root / "labels.csv"
    if not labels_path.exists():
        raise DatasetError(f"{labels_path} not found")
    with open(labels_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            schema_row = next(reader)
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{labels_path}: missing schema/header rows") from None
        if not schema_row or schema_row[0] != "#schema":
            raise DatasetError(f"{labels_path}: first row must start with #schema")
        schema = {}
        for cell in schema_row[1:]:
            if not cell:
                continue
            name, _, count = cell.partition("=")
            schema[name] = int(count)
        if header[:2] != ["episode", "frame"]:
            raise DatasetError(f"{labels_path}: header must start with episode,frame")
        categories = header[2:]
        unknown = [c for c in categories if c not in schema]
        if unknown:
            raise DatasetError(f"{labels_path}: categories {unknown} missing from #schema row")
        rows = {}
        for row in reader:
            if not row:
                continue
            e, i = int(row[0]), int(row[1])
            rows[(e, i)] = {c: int(v) for c, v in zip(categories, row[2:])}

    ep_dirs = sorted(
        ((int(m.group(1)), p) for p in root.iterdir() if p.is_dir() and (m := _EPISODE_DIR.match(p.name))),
        key=lambda t: t[0],
    )
    if not ep_dirs:
        raise DatasetError(f"{root}: no episode_<k> directories")

    episodes, labels = [], []
    dims = None
    for e, ep_dir in ep_dirs:
        frame_files = sorted(
            ((int(m.group(1)), p) for p in ep_dir.iterdir() if (m := _FRAME_FILE.match(p.name))),
            key=lambda t: t[0],
        )
        frames, ep_rows = [], []
        for i, path in frame_files:
            arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
            if dims is None:
                dims = arr.shape
            elif arr.shape != dims:
                raise DatasetError(f"{path}: frame dimensions {arr.shape} differ from {dims}")
            if (e, i) not in rows:
                raise DatasetError(f"{path}: no labels.csv row for episode {e} frame {i}")
            row = rows[(e, i)]
            for cat, value in row.items():
                if not (0 <= value < schema[cat]):
                    raise DatasetError(
                        f"{path}: label {cat}={value} outside class count {schema[cat]}"
                    )
            frames.append(arr)
            ep_rows.append(row)
        episodes.append(frames)
        labels.append(ep_rows)
    return EpisodeDataset(episodes, labels, schema, name=root.name)


def split_indices(n: int, ratios, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shuffle 0..n-1 by seed and partition by ratios (largest-remainder counts)."""
    if n < 1:
        raise DatasetError("cannot split an empty dataset")
    ratios = [float(r) for r in ratios]
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError(f"ratios {ratios} must sum to 1")
    exact = [r * n for r in ratios]
    counts = [int(x) for x in exact]
    remainder = n - sum(counts)
    by_frac = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in by_frac[:remainder]:
        counts[i] += 1
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum([0] + counts)
    return tuple(perm[bounds[i] : bounds[i + 1]] for i in range(len(counts)))


@dataclass
class SplitAssignment:
    train: list[FrameRef]
    validation: list[FrameRef]
    test: list[FrameRef]

    train_idx: np.ndarray = field(default=None, repr=False)
    validation_idx: np.ndarray = field(default=None, repr=False)
    test_idx: np.ndarray = field(default=None, repr=False)


def make_splits(dataset: EpisodeDataset, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> SplitAssignment:
    """Frame-level shuffled split; deterministic for a given seed."""
    refs = dataset.frame_refs()
    tr, va, te = split_indices(len(refs), ratios, seed)
    return SplitAssignment(
        train=[refs[i] for i in tr],
        validation=[refs[i] for i in va],
        test=[refs[i] for i in te],
        train_idx=tr,
        validation_idx=va,
        test_idx=te,
    )


@dataclass(frozen=True)
class SchemaViolation:
    ref: FrameRef
    category: str
    message: str


@dataclass
class SchemaReport:
    categories: dict[str, int]
    histograms: dict[str, list[int]]
    n_frames: int


def validate_schema(dataset: EpisodeDataset) -> SchemaReport:
    """Histogram every category; raise listing offending frames on violations."""
    histograms = {cat: [0] * count for cat, count in dataset.schema.items()}
    violations = []
    for e, rows in enumerate(dataset.labels):
        for i, row in enumerate(rows):
            ref = FrameRef(e, i)
            for cat, count in dataset.schema.items():
                if cat not in row:
                    violations.append(SchemaViolation(ref, cat, f"{ref}: missing label {cat}"))
                    continue
                value = row[cat]
                if not isinstance(value, (int, np.integer)) or not (0 <= value < count):
                    violations.append(
                        SchemaViolation(ref, cat, f"{ref}: label {cat}={value} outside 0..{count - 1}")
                    )
                else:
                    histograms[cat][value] += 1
    if violations:
        raise SchemaValidationError(violations)
    return SchemaReport(categories=dict(dataset.schema), histograms=histograms, n_frames=dataset.n_frames)
