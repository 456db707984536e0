"""Embedding datasets, prompt banks, clip sampling, folds, and EF binning.

Frame embeddings are stored as float32 (the on-disk precision) so a
dataset survives a write/read round trip bit-exactly; model code casts
clips to float64.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MAGIC = b"TPAE"
VERSION = 1


class DataFormatError(ValueError):
    """Raised for malformed dataset, prompt bank, or label files."""


@dataclass
class VideoRecord:
    id: str
    label: int
    frames: np.ndarray  # (T, D) float32

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise DataFormatError(f"record {self.id!r}: frames must be T x D with T >= 1")
        if not np.all(np.isfinite(self.frames)):
            raise DataFormatError(f"record {self.id!r}: non-finite frame values")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class Dataset:
    dim: int
    num_classes: int
    records: list = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for r in self.records:
            if not 0 <= r.label < self.num_classes:
                raise DataFormatError(f"record {r.id!r}: label {r.label} outside [0, {self.num_classes})")
            if r.frames.shape[1] != self.dim:
                raise DataFormatError(f"record {r.id!r}: frame width {r.frames.shape[1]} != {self.dim}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(self.dim, self.num_classes, [self.records[i] for i in indices])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if (self.dim, self.num_classes, len(self)) != (other.dim, other.num_classes, len(other)):
            return False
        return all(a.id == b.id and a.label == b.label and a.frames.shape == b.frames.shape
                   and a.frames.tobytes() == b.frames.tobytes()
                   for a, b in zip(self.records, other.records))


# -- binary dataset file ---------------------------------------------------

def write_dataset(ds: Dataset, path) -> None:
    ds.validate()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIQ", VERSION, ds.dim, ds.num_classes, len(ds.records)))
        for r in ds.records:
            ident = r.id.encode("utf-8")
            fh.write(struct.pack("<I", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<II", r.label, r.num_frames))
            fh.write(np.ascontiguousarray(r.frames, dtype="<f4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataFormatError(f"truncated file while reading {what}")
    return buf


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise DataFormatError("bad magic: not a TPAE dataset file")
        version, dim, num_classes, count = struct.unpack("<IIIQ", _read_exact(fh, 20, "header"))
        if version != VERSION:
            raise DataFormatError(f"unsupported dataset version {version}")
        records = []
        for i in range(count):
            (n,) = struct.unpack("<I", _read_exact(fh, 4, f"record {i} id length"))
            ident = _read_exact(fh, n, f"record {i} id").decode("utf-8")
            label, T = struct.unpack("<II", _read_exact(fh, 8, f"record {i} header"))
            if label >= num_classes:
                raise DataFormatError(f"record {ident!r}: label {label} >= {num_classes}")
            if T == 0:
                raise DataFormatError(f"record {ident!r}: zero frames")
            raw = _read_exact(fh, 4 * T * dim, f"record {ident!r} frames")
            frames = np.frombuffer(raw, dtype="<f4").reshape(T, dim).astype(np.float32)
            records.append(VideoRecord(ident, label, frames))
        if fh.read(1):
            raise DataFormatError("trailing bytes after last record")
    return Dataset(dim, num_classes, records)


# -- prompt banks ----------------------------------------------------------

@dataclass
class PromptEntry:
    label: int
    text: str
    embedding: np.ndarray
    variants: list = field(default_factory=list)
    variant_embeddings: Optional[np.ndarray] = None


@dataclass
class PromptBank:
    dim: int
    entries: list  # PromptEntry ordered by label

    def __post_init__(self):
        labels = [e.label for e in self.entries]
        if labels != list(range(len(labels))):
            raise DataFormatError(f"prompt bank needs exactly one entry per class 0..C-1, got {labels}")
        for e in self.entries:
            e.embedding = np.asarray(e.embedding, dtype=np.float64)
            if e.embedding.shape != (self.dim,):
                raise DataFormatError(f"class {e.label}: embedding width {e.embedding.shape} != ({self.dim},)")
            if e.variant_embeddings is not None:
                ve = np.asarray(e.variant_embeddings, dtype=np.float64)
                if ve.ndim != 2 or ve.shape[0] == 0 or ve.shape[1] != self.dim:
                    raise DataFormatError(f"class {e.label}: bad variant embeddings shape {ve.shape}")
                e.variant_embeddings = ve

    @property
    def num_classes(self) -> int:
        return len(self.entries)

    @property
    def embeddings(self) -> np.ndarray:
        return np.stack([e.embedding for e in self.entries])

    def texts(self) -> list:
        return [e.text for e in self.entries]

    def epoch_view(self, randomize: bool, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """C x D embeddings for one epoch; one sampled variant per class when randomizing."""
        if not randomize:
            return self.embeddings
        if rng is None:
            raise ValueError("prompt randomization needs an rng")
        rows = []
        for e in self.entries:
            if e.variant_embeddings is None:
                raise DataFormatError(f"class {e.label} has no variant embeddings to sample")
            rows.append(e.variant_embeddings[rng.integers(len(e.variant_embeddings))])
        return np.stack(rows)

    def check_against(self, ds: Dataset) -> None:
        if self.dim != ds.dim:
            raise DataFormatError(f"prompt bank dim {self.dim} != dataset dim {ds.dim}")
        if self.num_classes != ds.num_classes:
            raise DataFormatError(f"prompt bank has {self.num_classes} classes, dataset {ds.num_classes}")

    def to_json(self) -> dict:
        classes = []
        for e in self.entries:
            item = {"label": e.label, "text": e.text, "variants": list(e.variants),
                    "embedding": [float(v) for v in e.embedding]}
            if e.variant_embeddings is not None:
                item["variant_embeddings"] = [[float(v) for v in row] for row in e.variant_embeddings]
            classes.append(item)
        return {"dim": self.dim, "classes": classes}

    @classmethod
    def from_json(cls, doc: dict) -> "PromptBank":
        try:
            dim = int(doc["dim"])
            entries = []
            for item in sorted(doc["classes"], key=lambda c: int(c["label"])):
                if "embedding" not in item:
                    raise DataFormatError(f"class {item.get('label')} is missing an embedding")
                ve = item.get("variant_embeddings")
                entries.append(PromptEntry(int(item["label"]), str(item.get("text", "")),
                                           np.asarray(item["embedding"], dtype=np.float64),
                                           list(item.get("variants", [])),
                                           None if ve is None else np.asarray(ve, dtype=np.float64)))
        except (KeyError, TypeError) as exc:
            raise DataFormatError(f"malformed prompt bank: {exc}") from None
        return cls(dim, entries)


def save_prompt_bank(bank: PromptBank, path) -> None:
    Path(path).write_text(json.dumps(bank.to_json(), indent=1))


def load_prompt_bank(path, randomize: bool = False, rng: Optional[np.random.Generator] = None,
                     dim: Optional[int] = None):
    """Load a bank file. Returns ``(bank, view)`` where ``view`` is one epoch's C x D embeddings."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"prompt bank is not valid JSON: {exc}") from None
    bank = PromptBank.from_json(doc)
    if dim is not None and bank.dim != dim:
        raise DataFormatError(f"prompt bank dim {bank.dim} != dataset dim {dim}")
    return bank, bank.epoch_view(randomize, rng)


# -- synthetic data --------------------------------------------------------

def synth_generate(seed: int, num_classes: int = 3, n_per_class: int = 60, dim: int = 64,
                   t_range: tuple = (24, 64), separation: float = 4.0,
                   n_variants: int = 6, prompt_noise: float = 0.1,
                   static_weight: float = 0.25, wave_weight: float = 0.75):
    """Class-conditional frame sequences with matching prompt embeddings.

    Frame ``t`` of a class-``c`` video is
    ``sep * (0.5 u_c + 0.5 cos(2 pi f_c t / T + phi) Q u_c) + N(0, I)``, where
    ``u_c`` is a random unit direction, ``f_c = c + 1`` cycles per video,
    ``phi`` a per-video phase, and ``Q`` a fixed random orthogonal map. The
    prompt for class ``c`` is ``sep * u_c`` plus small noise, so the static
    part lines up with the prompt and the oscillating part carries the
    temporal signature.
    """
    if separation < 0:
        raise ValueError("separation must be >= 0")
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((num_classes, dim))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    moving = U @ Q.T
    freqs = np.arange(1, num_classes + 1, dtype=np.float64)

    records = []
    for c in range(num_classes):
        for i in range(n_per_class):
            T = int(rng.integers(t_range[0], t_range[1] + 1))
            phase = rng.uniform(0, 2 * np.pi)
            t = np.arange(T)
            wave = np.cos(2 * np.pi * freqs[c] * t / T + phase)[:, None]
            signal = separation * (static_weight * U[c] + wave_weight * wave * moving[c])
            frames = signal + rng.standard_normal((T, dim))
            records.append(VideoRecord(f"c{c}_v{i:04d}", c, frames.astype(np.float32)))
    order = rng.permutation(len(records))
    ds = Dataset(dim, num_classes, [records[i] for i in order])

    entries = []
    for c in range(num_classes):
        emb = separation * U[c] + prompt_noise * rng.standard_normal(dim)
        var = separation * U[c] + prompt_noise * rng.standard_normal((n_variants, dim))
        entries.append(PromptEntry(c, f"class {c} prompt", emb,
                                   [f"class {c} prompt variant {k}" for k in range(n_variants)], var))
    return ds, PromptBank(dim, entries)


# -- folds, clips, labels --------------------------------------------------

@dataclass
class FoldPlan:
    folds: list  # list of sorted index lists
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)

    def split(self, i: int):
        """(train indices, validation indices) for fold ``i``."""
        train = sorted(j for f, fold in enumerate(self.folds) if f != i for j in fold)
        return train, list(self.folds[i])


def stratified_folds(ds: Dataset, k: int = 5, seed: int = 0, allow_sparse: bool = False) -> FoldPlan:
    """Shuffle each class, then deal its members round-robin into ``k`` folds.

    The dealing offset rolls over between classes so fold sizes stay balanced.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    labels = ds.labels
    folds = [[] for _ in range(k)]
    offset = 0
    for c in range(ds.num_classes):
        members = np.flatnonzero(labels == c)
        if 0 < len(members) < k and not allow_sparse:
            raise DataFormatError(f"class {c} has {len(members)} samples, fewer than k={k}")
        members = rng.permutation(members)
        for j, idx in enumerate(members):
            folds[(offset + j) % k].append(int(idx))
        offset = (offset + len(members)) % k
    return FoldPlan([sorted(f) for f in folds], seed)


def clip_start(T: int, L: int, mode: str, rng: Optional[np.random.Generator] = None) -> int:
    if T <= L:
        return 0
    if mode == "eval":
        return (T - L) // 2
    if mode == "train":
        return int(rng.integers(0, T - L + 1))
    raise ValueError(f"unknown clip mode {mode!r}")


def sample_clip(rec: VideoRecord, L: int = 16, mode: str = "eval",
                rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """L consecutive frames as float64; short videos repeat their last frame."""
    if L < 1:
        raise ValueError("clip length must be >= 1")
    T = rec.num_frames
    if T < L:
        idx = np.concatenate([np.arange(T), np.full(L - T, T - 1)])
    else:
        s = clip_start(T, L, mode, rng)
        idx = np.arange(s, s + L)
    return rec.frames[idx].astype(np.float64)


def bin_ef(ef: float) -> int:
    """Ejection fraction (percent) to 0 = moderately/severely decreased,
    1 = mildly decreased, 2 = normal/hyperdynamic."""
    if not 0.0 <= ef <= 100.0:
        raise ValueError(f"ejection fraction {ef} outside [0, 100]")
    if ef < 40.0:
        return 0
    if ef <= 54.0:
        return 1
    return 2


def read_ef_table(path) -> dict:
    """Map video id to EF class from a CSV with columns ``id, ef``."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "ef"} <= set(reader.fieldnames):
            raise DataFormatError("EF table needs columns id, ef")
        for row in reader:
            out[row["id"]] = bin_ef(float(row["ef"]))
    return out
