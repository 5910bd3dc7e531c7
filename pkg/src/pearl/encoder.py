"""Pluggable frame encoders and the binary embedding store.

Two encoder kinds share one interface: a seeded deterministic projection
(``MockEncoder``) for hermetic runs, and a read-only file-backed store
(``FileEncoder``) holding embeddings produced offline by a real model.
Both yield float32 vectors of a fixed width.

Embedding file format (magic "PRLE"): version u16, width u32, record count
u64, then records of [key length u16, UTF-8 key, width x f32], all
little-endian, keys sorted ascending.
"""

from __future__ import annotations

import re
import struct
import threading
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .imaging import resize_bilinear, to_grayscale

STORE_MAGIC = b"PRLE"
STORE_VERSION = 1

DEFAULT_WIDTH = 512

# Variant tag grammar; the offline export tool must emit keys matching this.
VARIANT_RE = re.compile(
    r"^(?:full"
    r"|grid2:(?:[0-3])"
    r"|grid4:(?:[0-9]|1[0-5])"
    r"|masked:(?:diff|flow)"
    r"|aug:(?:blur|jitter|crop):\d+"
    r"|composed:[A-Za-z0-9+]+"
    r")$"
)

KEY_RE = re.compile(r"^ep(\d{4}):fr(\d{5}):(.+)$")


class EncoderError(ValueError):
    pass


class KeyGrammarError(EncoderError):
    pass


class MissingEmbeddingError(KeyError):
    """Raised when a file-backed encoder has no record for a key; the
    export tool must be rerun with the matching variants."""

    def __init__(self, key):
        self.key = key
        super().__init__(f"no stored embedding for key {key} (rerun the export tool)")

    def __str__(self):
        return self.args[0]


class StoreFormatError(EncoderError):
    pass


class StoreCorruptionError(EncoderError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class DuplicateKeyError(EncoderError):
    pass


@dataclass(frozen=True, order=True)
class EmbeddingKey:
    """(episode, frame, variant) identifying one stored vector."""

    episode: int
    frame: int
    variant: str

    def __post_init__(self):
        if not (0 <= self.episode < 10_000):
            raise KeyGrammarError(f"episode {self.episode} outside 0..9999")
        if not (0 <= self.frame < 100_000):
            raise KeyGrammarError(f"frame {self.frame} outside 0..99999")
        if not VARIANT_RE.match(self.variant):
            raise KeyGrammarError(f"variant tag {self.variant!r} not in the documented grammar")

    @property
    def text(self) -> str:
        return f"ep{self.episode:04d}:fr{self.frame:05d}:{self.variant}"

    @classmethod
    def parse(cls, text: str) -> "EmbeddingKey":
        m = KEY_RE.match(text)
        if not m:
            raise KeyGrammarError(f"key {text!r} does not match ep####:fr#####:<variant>")
        return cls(int(m.group(1)), int(m.group(2)), m.group(3))


@dataclass(frozen=True)
class MockEncoder:
    """Deterministic stand-in for a pretrained image encoder.

    Resizes to ``input_side``, converts to grayscale, flattens, applies a
    fixed seeded random projection, then tanh. A pure function of
    (seed, pixels): call order and batching never change results.
    """

    width: int = DEFAULT_WIDTH
    input_side: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.width < 8:
            raise EncoderError(f"width {self.width} too small (min 8)")
        if self.input_side % 4 or self.input_side < 8:
            raise EncoderError(f"input side {self.input_side} must be >= 8 and divisible by 4")

    @cached_property
    def _projection(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        flat = self.input_side * self.input_side
        return rng.standard_normal((flat, self.width)) / self.input_side

    def encode(self, frame: np.ndarray) -> np.ndarray:
        img = resize_bilinear(frame, self.input_side, self.input_side)
        g = to_grayscale(img).ravel()
        return np.tanh(g @ self._projection).astype(np.float32)

    def spec_string(self) -> str:
        return f"mock:{self.seed}:{self.width}:{self.input_side}"


class EmbeddingStore:
    """Read-only keyed embedding map loaded from a PRLE file."""

    def __init__(self, width: int, records: dict[str, np.ndarray]):
        self.width = width
        self._records = records

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key) -> bool:
        return _key_text(key) in self._records

    def lookup(self, key) -> np.ndarray:
        text = _key_text(key)
        if text not in self._records:
            raise MissingEmbeddingError(text)
        return self._records[text]

    def keys(self) -> list[str]:
        return list(self._records)


def _key_text(key) -> str:
    return key.text if isinstance(key, EmbeddingKey) else str(key)


def write_embeddings(path, entries) -> None:
    """Write (key, vector) pairs sorted by key; refuses duplicates."""
    pairs = entries.items() if isinstance(entries, dict) else entries
    items = [(_key_text(k), np.asarray(v)) for k, v in pairs]
    seen = set()
    for text, vec in items:
        EmbeddingKey.parse(text)
        if vec.ndim != 1:
            raise EncoderError(f"embedding for {text} must be a vector, got shape {vec.shape}")
        if text in seen:
            raise DuplicateKeyError(f"duplicate embedding key {text}")
        seen.add(text)
    widths = {v.shape[0] for _, v in items}
    if len(widths) > 1:
        raise EncoderError(f"mixed embedding widths {sorted(widths)}")
    width = widths.pop() if widths else 0
    items.sort(key=lambda kv: kv[0])
    with open(path, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<HIQ", STORE_VERSION, width, len(items)))
        for text, vec in items:
            raw = text.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())


def read_embeddings(path) -> EmbeddingStore:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != STORE_MAGIC:
        raise StoreFormatError(f"{path}: not an embedding store (bad magic)")
    if len(raw) < 18:
        raise StoreCorruptionError(f"{path}: header truncated", len(raw))
    version, width, count = struct.unpack("<HIQ", raw[4:18])
    if version != STORE_VERSION:
        raise StoreFormatError(f"{path}: unsupported version {version} (expected {STORE_VERSION})")
    records: dict[str, np.ndarray] = {}
    offset = 18
    rec_bytes = width * 4
    for _ in range(count):
        if offset + 2 > len(raw):
            raise StoreCorruptionError(f"{path}: record header truncated", offset)
        (key_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        if offset + key_len + rec_bytes > len(raw):
            raise StoreCorruptionError(f"{path}: record truncated", offset)
        text = raw[offset : offset + key_len].decode("utf-8")
        offset += key_len
        vec = np.frombuffer(raw, dtype="<f4", count=width, offset=offset).copy()
        offset += rec_bytes
        records[text] = vec
    if offset != len(raw):
        raise StoreCorruptionError(
            f"{path}: {len(raw) - offset} trailing bytes inconsistent with width {width}", offset
        )
    return EmbeddingStore(width, records)


@dataclass(frozen=True)
class FileEncoder:
    """Encoder backed entirely by precomputed embeddings; never computes."""

    store: EmbeddingStore
    path: str = ""

    @property
    def width(self) -> int:
        return self.store.width

    def spec_string(self) -> str:
        return f"file:{self.path}"


class EmbeddingCache:
    """Memoizing key -> vector map, safe under concurrent insert-or-get."""

    def __init__(self):
        self._data: dict[str, np.ndarray] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key) -> bool:
        return _key_text(key) in self._data

    def get_or_put(self, key, compute) -> np.ndarray:
        text = _key_text(key)
        with self._lock:
            if text not in self._data:
                self._data[text] = compute()
            return self._data[text]

    def items(self):
        with self._lock:
            return list(self._data.items())


def cached_encode(handle, cache: EmbeddingCache | None, key: EmbeddingKey, frame: np.ndarray) -> np.ndarray:
    """Encode through the cache: mock handles compute on miss, file-backed
    handles only look up (a miss means the export tool must be rerun)."""
    if isinstance(handle, FileEncoder):
        return handle.store.lookup(key)
    if cache is None:
        return handle.encode(frame)
    return cache.get_or_put(key, lambda: handle.encode(frame))
