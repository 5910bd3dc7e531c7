"""Self-supervised fine-tuning heads over frozen embeddings.

Three head kinds share one InfoNCE core:

- ``aug-mlp``: two augmented views per frame through an MLP, contrasted on
  cosine similarity (augmentations: gaussian blur, color jitter, random crop).
- ``dim``: bilinear scores s(x, y) = phi(x)^T W phi(y) with a shared linear
  map phi, in temporal (T), spatial (S), or spatio-temporal (ST) mode.
- ``cpc``: linear projection plus a GRU rolling up context, predicting the
  next K latents, scored by dot product against in-batch negatives.

The encoder is never trained; heads only ever see its outputs. Trained heads
serialize to "PRLH" files (JSON header + float64 little-endian tensors) and
reload bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .composer import CANONICAL_SIDE, CompositionConfig, grid_patches, parse_config
from .dataset import EpisodeDataset
from .encoder import EmbeddingCache, EmbeddingKey, cached_encode
from .imaging import color_jitter, gaussian_blur, random_crop_resize, resize_bilinear
from .tensor import Adam, Tensor, softmax_cross_entropy

HEAD_MAGIC = b"PRLH"
HEAD_VERSION = 1

AUGMENTATION_KINDS = ("blur", "jitter", "crop")


class FinetuneError(ValueError):
    pass


class ConfigurationError(FinetuneError):
    pass


class HeadFormatError(FinetuneError):
    pass


@dataclass(frozen=True)
class FinetuneHyper:
    steps: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    temperature: float = 0.1


def infonce(scores: Tensor, temperature: float) -> Tensor:
    """Mean over rows of -log softmax(s/tau) at the diagonal positive.

    Equals ln(batch) exactly when all scores are equal.
    """
    if temperature <= 0:
        raise FinetuneError(f"temperature must be positive, got {temperature}")
    scores = scores if isinstance(scores, Tensor) else Tensor(scores)
    n, m = scores.shape
    if n != m or n < 2:
        raise FinetuneError(f"scores must be square with batch >= 2, got {scores.shape}")
    return softmax_cross_entropy(scores * (1.0 / temperature), np.arange(n))


# -- embedding plumbing ----------------------------------------------------------


def _aug_seed(base_seed: int, episode: int, frame: int, view: int) -> int:
    # fixed mixing so views are stable per frame across epochs and processes
    return (base_seed * 1_000_003 + (episode * 100_000 + frame) * 2 + view) & 0x7FFFFFFF


def augment_frame(frame: np.ndarray, kind: str, seed: int) -> np.ndarray:
    if kind == "blur":
        sigma = float(np.random.default_rng(seed).uniform(0.5, 1.5))
        return gaussian_blur(frame, sigma)
    if kind == "jitter":
        return color_jitter(frame, seed)
    if kind == "crop":
        return random_crop_resize(frame, 0.6, seed)
    raise FinetuneError(f"unknown augmentation {kind!r} (expected one of {AUGMENTATION_KINDS})")


def slot_tags(config: CompositionConfig) -> list[str]:
    """Slot tags for FI/grid units, the only kinds DIM heads train on."""
    tags: list[str] = []
    for unit in config.units:
        if unit.kind == "FI":
            tags.append("full")
        elif unit.kind == "GRID":
            tags.extend(f"grid{unit.n}:{i}" for i in range(unit.n * unit.n))
        else:
            raise ConfigurationError(
                f"unit {unit.token!r} not usable for contrastive training (use FI/grid units)"
            )
    return tags


def embed_dataset_slots(
    dataset: EpisodeDataset,
    encoder,
    cache: EmbeddingCache | None,
    tags,
    canonical_side: int = CANONICAL_SIDE,
) -> dict[str, np.ndarray]:
    """Embeddings for the requested slot tags, rows in frame_refs() order."""
    columns = {tag: [] for tag in tags}
    grids = sorted({int(t[4]) for t in tags if t.startswith("grid")})
    for e, frames in enumerate(dataset.episodes):
        for i, frame in enumerate(frames):
            curr_c = resize_bilinear(frame, canonical_side, canonical_side)
            patches = {n: grid_patches(curr_c, n) for n in grids}
            for tag in tags:
                image = curr_c if tag == "full" else patches[int(tag[4])][int(tag.split(":")[1])]
                vec = cached_encode(encoder, cache, EmbeddingKey(e, i, tag), image)
                columns[tag].append(np.asarray(vec, dtype=np.float64))
    return {tag: np.vstack(col) for tag, col in columns.items()}


def embed_augmented_views(
    dataset: EpisodeDataset,
    encoder,
    cache: EmbeddingCache | None,
    augmentations,
    base_seed: int,
    canonical_side: int = CANONICAL_SIDE,
) -> tuple[np.ndarray, np.ndarray]:
    """Two fixed augmented views per frame (view index 0 and 1), encoded frozen."""
    augmentations = list(augmentations)
    if not augmentations:
        raise FinetuneError("augmentation set is empty")
    for kind in augmentations:
        if kind not in AUGMENTATION_KINDS:
            raise FinetuneError(f"unknown augmentation {kind!r} (expected one of {AUGMENTATION_KINDS})")
    views: list[list[np.ndarray]] = [[], []]
    for e, frames in enumerate(dataset.episodes):
        for i, frame in enumerate(frames):
            curr_c = resize_bilinear(frame, canonical_side, canonical_side)
            for view in (0, 1):
                kind = augmentations[view % len(augmentations)]
                img = augment_frame(curr_c, kind, _aug_seed(base_seed, e, i, view))
                vec = cached_encode(encoder, cache, EmbeddingKey(e, i, f"aug:{kind}:{view}"), img)
                views[view].append(np.asarray(vec, dtype=np.float64))
    return np.vstack(views[0]), np.vstack(views[1])


def _episode_row_offsets(dataset: EpisodeDataset) -> list[int]:
    offsets = [0]
    for frames in dataset.episodes:
        offsets.append(offsets[-1] + len(frames))
    return offsets


def _consecutive_pair_rows(dataset: EpisodeDataset) -> np.ndarray:
    """(row_t, row_t+1) for every within-episode consecutive pair."""
    offsets = _episode_row_offsets(dataset)
    pairs = [
        (offsets[e] + i, offsets[e] + i + 1)
        for e, frames in enumerate(dataset.episodes)
        for i in range(len(frames) - 1)
    ]
    if not pairs:
        raise FinetuneError("dataset has no within-episode consecutive frame pairs")
    return np.array(pairs, dtype=np.intp)


# -- heads -----------------------------------------------------------------------


def _init(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    return Tensor(rng.standard_normal(shape) / np.sqrt(fan_in), requires_grad=True)


@dataclass
class AugMlpHead:
    kind = "aug-mlp"
    in_width: int
    hidden: int
    out_width: int
    temperature: float
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    loss_history: list[float] = field(default_factory=list, repr=False)

    @classmethod
    def create(cls, rng, in_width, hidden=256, out_width=128, temperature=0.1):
        return cls(
            in_width=in_width,
            hidden=hidden,
            out_width=out_width,
            temperature=temperature,
            w1=_init(rng, in_width, (in_width, hidden)),
            b1=Tensor(np.zeros(hidden), requires_grad=True),
            w2=_init(rng, hidden, (hidden, out_width)),
            b2=Tensor(np.zeros(out_width), requires_grad=True),
        )

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def named_tensors(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]

    def hyper(self):
        return {
            "in_width": self.in_width,
            "hidden": self.hidden,
            "out_width": self.out_width,
            "temperature": self.temperature,
        }

    def project_t(self, x: Tensor) -> Tensor:
        return (x @ self.w1 + self.b1).relu() @ self.w2 + self.b2

    def project(self, x: np.ndarray) -> np.ndarray:
        h = np.maximum(x @ self.w1.data + self.b1.data, 0.0)
        return h @ self.w2.data + self.b2.data


@dataclass
class DimHead:
    kind = "dim"
    mode: str  # T | S | ST
    in_width: int
    out_width: int
    temperature: float
    phi_w: Tensor
    phi_b: Tensor
    w: Tensor
    loss_history: list[float] = field(default_factory=list, repr=False)

    @classmethod
    def create(cls, rng, mode, in_width, out_width=128, temperature=0.1):
        return cls(
            mode=mode,
            in_width=in_width,
            out_width=out_width,
            temperature=temperature,
            phi_w=_init(rng, in_width, (in_width, out_width)),
            phi_b=Tensor(np.zeros(out_width), requires_grad=True),
            w=_init(rng, out_width, (out_width, out_width)),
        )

    def params(self):
        return [self.phi_w, self.phi_b, self.w]

    def named_tensors(self):
        return [("phi_w", self.phi_w), ("phi_b", self.phi_b), ("w", self.w)]

    def hyper(self):
        return {
            "mode": self.mode,
            "in_width": self.in_width,
            "out_width": self.out_width,
            "temperature": self.temperature,
        }

    def phi_t(self, x: Tensor) -> Tensor:
        return x @ self.phi_w + self.phi_b

    def scores_t(self, x: Tensor, y: Tensor) -> Tensor:
        return (self.phi_t(x) @ self.w) @ self.phi_t(y).T

    def project(self, x: np.ndarray) -> np.ndarray:
        return x @ self.phi_w.data + self.phi_b.data


_GRU_TENSORS = ("w_xr", "w_hr", "b_r", "w_xz", "w_hz", "b_z", "w_xn", "w_hn", "b_nx", "b_nh")


@dataclass
class CpcHead:
    kind = "cpc"
    in_width: int
    latent: int
    k_steps: int
    context: int
    temperature: float
    w_in: Tensor
    b_in: Tensor
    gru: dict[str, Tensor]
    preds: list[Tensor]
    loss_history: list[float] = field(default_factory=list, repr=False)

    @classmethod
    def create(cls, rng, in_width, latent=256, k_steps=3, context=8, temperature=0.1):
        gru = {}
        for name in _GRU_TENSORS:
            if name.startswith("w_"):
                gru[name] = _init(rng, latent, (latent, latent))
            else:
                gru[name] = Tensor(np.zeros(latent), requires_grad=True)
        return cls(
            in_width=in_width,
            latent=latent,
            k_steps=k_steps,
            context=context,
            temperature=temperature,
            w_in=_init(rng, in_width, (in_width, latent)),
            b_in=Tensor(np.zeros(latent), requires_grad=True),
            gru=gru,
            preds=[_init(rng, latent, (latent, latent)) for _ in range(k_steps)],
        )

    def params(self):
        return [self.w_in, self.b_in, *self.gru.values(), *self.preds]

    def named_tensors(self):
        named = [("w_in", self.w_in), ("b_in", self.b_in)]
        named += [(f"gru.{n}", self.gru[n]) for n in _GRU_TENSORS]
        named += [(f"pred.{k}", w) for k, w in enumerate(self.preds)]
        return named

    def hyper(self):
        return {
            "in_width": self.in_width,
            "latent": self.latent,
            "k_steps": self.k_steps,
            "context": self.context,
            "temperature": self.temperature,
        }

    def latent_t(self, x: Tensor) -> Tensor:
        return x @ self.w_in + self.b_in

    def gru_step(self, z: Tensor, h: Tensor) -> Tensor:
        g = self.gru
        r = (z @ g["w_xr"] + h @ g["w_hr"] + g["b_r"]).sigmoid()
        u = (z @ g["w_xz"] + h @ g["w_hz"] + g["b_z"]).sigmoid()
        n = (z @ g["w_xn"] + r * (h @ g["w_hn"] + g["b_nh"]) + g["b_nx"]).tanh()
        return (1.0 - u) * n + u * h

    def context_t(self, steps: list[Tensor]) -> Tensor:
        h = Tensor(np.zeros((steps[0].shape[0], self.latent)))
        for z in steps:
            h = self.gru_step(z, h)
        return h

    def project(self, x: np.ndarray) -> np.ndarray:
        return x @ self.w_in.data + self.b_in.data


# -- training loops ----------------------------------------------------------------


def _cosine_scores(za: Tensor, zb: Tensor) -> Tensor:
    raw = za @ zb.T
    inv_a = (((za * za).sum(axis=1, keepdims=True) + 1e-12).log() * -0.5).exp()
    inv_b = (((zb * zb).sum(axis=1, keepdims=True) + 1e-12).log() * -0.5).exp()
    return raw * (inv_a @ inv_b.T)


def train_aug_head(
    dataset: EpisodeDataset,
    encoder,
    cache: EmbeddingCache | None = None,
    augmentations=("blur",),
    hyper: FinetuneHyper = FinetuneHyper(),
    seed: int = 0,
    canonical_side: int = CANONICAL_SIDE,
) -> AugMlpHead:
    """Contrast two augmented views of each frame through an MLP on cosine
    scores (both softmax directions averaged)."""
    z0, z1 = embed_augmented_views(dataset, encoder, cache, augmentations, seed, canonical_side)
    n = z0.shape[0]
    batch = min(hyper.batch_size, n)
    if batch < 2:
        raise FinetuneError("need at least 2 frames for in-batch negatives")
    rng = np.random.default_rng(seed)
    head = AugMlpHead.create(rng, in_width=encoder.width, temperature=hyper.temperature)
    opt = Adam(head.params(), lr=hyper.lr)
    for _ in range(hyper.steps):
        idx = rng.choice(n, size=batch, replace=False)
        za = head.project_t(Tensor(z0[idx]))
        zb = head.project_t(Tensor(z1[idx]))
        scores = _cosine_scores(za, zb)
        loss = (infonce(scores, head.temperature) + infonce(scores.T, head.temperature)) * 0.5
        head.loss_history.append(loss.item())
        opt.zero_grad()
        loss.backward()
        opt.step()
    return head


def train_dim_head(
    dataset: EpisodeDataset,
    encoder,
    cache: EmbeddingCache | None = None,
    mode: str = "T",
    config: str | CompositionConfig = "FI",
    hyper: FinetuneHyper = FinetuneHyper(),
    seed: int = 0,
    canonical_side: int = CANONICAL_SIDE,
) -> DimHead:
    """Bilinear contrastive head. Positives by mode:
    T - same unit at (t, t+1);
    S - two distinct patches of one frame;
    ST - full image at t+1 against each patch at t, losses summed.
    Temporal positives never cross episode boundaries."""
    if mode not in ("T", "S", "ST"):
        raise ConfigurationError(f"unknown DIM mode {mode!r} (expected T, S, or ST)")
    if isinstance(config, str):
        config = parse_config(config)
    tags = slot_tags(config)
    grid_tags = [t for t in tags if t.startswith("grid")]
    if mode == "S" and len(grid_tags) < 2:
        raise ConfigurationError(f"S mode needs a grid config with >= 2 patches, got {config.text!r}")
    if mode == "ST" and (not grid_tags or "full" not in tags):
        raise ConfigurationError(f"ST mode needs both a full image and grid patches, got {config.text!r}")

    z = embed_dataset_slots(dataset, encoder, cache, tags, canonical_side)
    rng = np.random.default_rng(seed)
    head = DimHead.create(rng, mode=mode, in_width=encoder.width, temperature=hyper.temperature)
    opt = Adam(head.params(), lr=hyper.lr)

    if mode in ("T", "ST"):
        pairs = _consecutive_pair_rows(dataset)
    n_frames = dataset.n_frames
    batch = min(hyper.batch_size, n_frames if mode == "S" else len(pairs))
    if batch < 2:
        raise FinetuneError("need at least 2 samples for in-batch negatives")

    for _ in range(hyper.steps):
        if mode == "T":
            rows = pairs[rng.choice(len(pairs), size=batch, replace=False)]
            tag_idx = rng.integers(0, len(tags), size=batch)
            x = np.stack([z[tags[tag_idx[j]]][rows[j, 0]] for j in range(batch)])
            y = np.stack([z[tags[tag_idx[j]]][rows[j, 1]] for j in range(batch)])
            loss = infonce(head.scores_t(Tensor(x), Tensor(y)), head.temperature)
        elif mode == "S":
            rows = rng.choice(n_frames, size=batch, replace=False)
            p = rng.integers(0, len(grid_tags), size=batch)
            q = (p + rng.integers(1, len(grid_tags), size=batch)) % len(grid_tags)
            x = np.stack([z[grid_tags[p[j]]][rows[j]] for j in range(batch)])
            y = np.stack([z[grid_tags[q[j]]][rows[j]] for j in range(batch)])
            loss = infonce(head.scores_t(Tensor(x), Tensor(y)), head.temperature)
        else:  # ST
            rows = pairs[rng.choice(len(pairs), size=batch, replace=False)]
            x = Tensor(z["full"][rows[:, 1]])
            loss = None
            for tag in grid_tags:
                term = infonce(head.scores_t(x, Tensor(z[tag][rows[:, 0]])), head.temperature)
                loss = term if loss is None else loss + term
        head.loss_history.append(loss.item())
        opt.zero_grad()
        loss.backward()
        opt.step()
    return head


def train_cpc_head(
    dataset: EpisodeDataset,
    encoder,
    cache: EmbeddingCache | None = None,
    k_steps: int = 3,
    context: int = 8,
    latent: int = 256,
    hyper: FinetuneHyper = FinetuneHyper(),
    seed: int = 0,
    canonical_side: int = CANONICAL_SIDE,
) -> CpcHead:
    """Predict the latents K steps past a GRU context, scored by InfoNCE."""
    min_len = context + k_steps + 1
    for e, frames in enumerate(dataset.episodes):
        if len(frames) < min_len:
            raise FinetuneError(
                f"episode {e} has {len(frames)} frames; CPC with context {context} "
                f"and K {k_steps} needs at least {min_len}"
            )
    z = embed_dataset_slots(dataset, encoder, cache, ["full"], canonical_side)["full"]
    offsets = _episode_row_offsets(dataset)
    windows = np.array(
        [
            (offsets[e] + t0)
            for e, frames in enumerate(dataset.episodes)
            for t0 in range(len(frames) - (context + k_steps) + 1)
        ],
        dtype=np.intp,
    )
    rng = np.random.default_rng(seed)
    head = CpcHead.create(
        rng,
        in_width=encoder.width,
        latent=latent,
        k_steps=k_steps,
        context=context,
        temperature=hyper.temperature,
    )
    opt = Adam(head.params(), lr=hyper.lr)
    batch = min(hyper.batch_size, len(windows))
    if batch < 2:
        raise FinetuneError("need at least 2 windows for in-batch negatives")

    for _ in range(hyper.steps):
        starts = windows[rng.choice(len(windows), size=batch, replace=False)]
        steps = [head.latent_t(Tensor(z[starts + j])) for j in range(context)]
        ctx = head.context_t(steps)
        loss = None
        for k in range(1, k_steps + 1):
            target = head.latent_t(Tensor(z[starts + context - 1 + k]))
            scores = (ctx @ head.preds[k - 1]) @ target.T
            term = infonce(scores, head.temperature)
            loss = term if loss is None else loss + term
        head.loss_history.append(loss.item())
        opt.zero_grad()
        loss.backward()
        opt.step()
    return head


def apply_head(head, representations: np.ndarray) -> np.ndarray:
    """Transform frozen representations with a trained head.

    aug-mlp and dim heads project each encoder-width unit independently and
    re-concatenate; cpc projects the whole frame vector (its GRU context is a
    training-time device only).
    """
    x = np.asarray(representations, dtype=np.float64)
    if x.ndim != 2:
        raise FinetuneError(f"representations must be 2-D, got shape {x.shape}")
    if head.kind == "cpc":
        if x.shape[1] != head.in_width:
            raise FinetuneError(f"width {x.shape[1]} does not match CPC head width {head.in_width}")
        return head.project(x)
    if x.shape[1] % head.in_width:
        raise FinetuneError(
            f"width {x.shape[1]} is not a multiple of the head's unit width {head.in_width}"
        )
    units = x.shape[1] // head.in_width
    outs = [head.project(x[:, u * head.in_width : (u + 1) * head.in_width]) for u in range(units)]
    return np.hstack(outs)


# -- persistence --------------------------------------------------------------------


def head_bytes(head) -> bytes:
    names = head.named_tensors()
    header = {
        "kind": head.kind,
        "hyper": head.hyper(),
        "tensors": [{"name": n, "shape": list(t.data.shape)} for n, t in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [HEAD_MAGIC, struct.pack("<HI", HEAD_VERSION, len(blob)), blob]
    parts += [np.ascontiguousarray(t.data, dtype="<f8").tobytes() for _, t in names]
    return b"".join(parts)


def save_head(path, head) -> None:
    with open(path, "wb") as fh:
        fh.write(head_bytes(head))


def load_head(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 10 or raw[:4] != HEAD_MAGIC:
        raise HeadFormatError(f"{path}: not a head file (bad magic)")
    version, header_len = struct.unpack("<HI", raw[4:10])
    if version != HEAD_VERSION:
        raise HeadFormatError(f"{path}: unsupported head version {version} (expected {HEAD_VERSION})")
    header = json.loads(raw[10 : 10 + header_len].decode("utf-8"))
    offset = 10 + header_len
    tensors = {}
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        end = offset + count * 8
        if end > len(raw):
            raise HeadFormatError(f"{path}: tensor data truncated at byte {offset}")
        tensors[spec["name"]] = Tensor(
            np.frombuffer(raw[offset:end], dtype="<f8").reshape(spec["shape"]).copy(),
            requires_grad=True,
        )
        offset = end
    if offset != len(raw):
        raise HeadFormatError(f"{path}: {len(raw) - offset} trailing bytes")

    kind = header["kind"]
    hyper = header["hyper"]
    if kind == "aug-mlp":
        return AugMlpHead(
            in_width=hyper["in_width"],
            hidden=hyper["hidden"],
            out_width=hyper["out_width"],
            temperature=hyper["temperature"],
            w1=tensors["w1"],
            b1=tensors["b1"],
            w2=tensors["w2"],
            b2=tensors["b2"],
        )
    if kind == "dim":
        return DimHead(
            mode=hyper["mode"],
            in_width=hyper["in_width"],
            out_width=hyper["out_width"],
            temperature=hyper["temperature"],
            phi_w=tensors["phi_w"],
            phi_b=tensors["phi_b"],
            w=tensors["w"],
        )
    if kind == "cpc":
        return CpcHead(
            in_width=hyper["in_width"],
            latent=hyper["latent"],
            k_steps=hyper["k_steps"],
            context=hyper["context"],
            temperature=hyper["temperature"],
            w_in=tensors["w_in"],
            b_in=tensors["b_in"],
            gru={n: tensors[f"gru.{n}"] for n in _GRU_TENSORS},
            preds=[tensors[f"pred.{k}"] for k in range(hyper["k_steps"])],
        )
    raise HeadFormatError(f"{path}: unknown head kind {kind!r}")
