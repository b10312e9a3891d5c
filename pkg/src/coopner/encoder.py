"""Trainable hashed-feature token encoder and external embedding dumps.

Token representations are a dense linear projection of sparse hashed
features, so the map is exactly linear in the projection matrix and its
gradient is an outer product against the feature vectors.  Feature indices
come from a seeded FNV-1a 64-bit hash reduced modulo the (power-of-two)
feature-space size, which makes checkpoints portable across platforms: the
hash function and seed fully determine the feature space.

When a context token sequence is supplied and co-occurrence features are
enabled, a token that also occurs in the context additionally fires a match
indicator plus hashed features of the context-side neighbors of each
occurrence.  Context features therefore fire only when the context actually
mentions the token, which is what makes the context-augmented view strictly
more informative on gazetteer-like evidence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence

import numpy as np

from .corpus import Token
from .errors import ConfigError, DumpFormatError

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

VIEW_ORIGINAL = "original"
VIEW_RETRIEVAL = "retrieval"

# Most occurrences of a token inside a context that contribute neighbor
# features; bounds feature counts under pathologically repetitive contexts.
MAX_CONTEXT_OCCURRENCES = 4


def fnv1a64(data: bytes, seed: int = 0) -> int:
    """Seeded FNV-1a 64-bit hash; the seed bytes are folded in first."""
    h = _FNV_OFFSET
    for b in (seed & _MASK64).to_bytes(8, "little"):
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class HashFeatureSpec:
    dims: int = 4096
    window: int = 2
    char_ngrams: tuple[int, ...] = (3,)
    hash_seed: int = 17
    context_cooccurrence: bool = True

    def __post_init__(self):
        if self.dims < 2 or self.dims & (self.dims - 1):
            raise ConfigError(f"dims must be a power of two >= 2, got {self.dims}")
        if self.window < 0:
            raise ConfigError("window must be >= 0")
        object.__setattr__(self, "char_ngrams", tuple(sorted(set(self.char_ngrams))))

    def index(self, *parts) -> int:
        key = "\x1f".join(str(p) for p in parts).encode("utf-8")
        return fnv1a64(key, self.hash_seed) & (self.dims - 1)

    def to_dict(self) -> dict:
        return {
            "dims": self.dims,
            "window": self.window,
            "char_ngrams": list(self.char_ngrams),
            "hash_seed": self.hash_seed,
            "context_cooccurrence": self.context_cooccurrence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HashFeatureSpec":
        return cls(
            dims=d["dims"],
            window=d["window"],
            char_ngrams=tuple(d["char_ngrams"]),
            hash_seed=d["hash_seed"],
            context_cooccurrence=d["context_cooccurrence"],
        )


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Per-token representation rows (n, d) tagged with the view they encode."""

    rows: np.ndarray
    view_tag: str

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        object.__setattr__(self, "rows", rows)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
            raise ConfigError(f"embedding matrix must be (n>=1, d>=1), got {rows.shape}")
        if not np.isfinite(rows).all():
            raise ConfigError("embedding matrix contains non-finite entries")
        if self.view_tag not in (VIEW_ORIGINAL, VIEW_RETRIEVAL):
            raise ConfigError(f"unknown view tag {self.view_tag!r}")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


@dataclass
class EncoderParams:
    """Dense projection (d, dims) applied to sparse hashed feature vectors."""

    projection: np.ndarray
    spec: HashFeatureSpec = field(default_factory=HashFeatureSpec)

    def __post_init__(self):
        self.projection = np.asarray(self.projection, dtype=np.float64)
        if self.projection.ndim != 2 or self.projection.shape[1] != self.spec.dims:
            raise ConfigError(
                f"projection must be (d, {self.spec.dims}), got {self.projection.shape}"
            )
        if not np.isfinite(self.projection).all():
            raise ConfigError("projection contains non-finite entries")

    @property
    def hidden_size(self) -> int:
        return self.projection.shape[0]

    @classmethod
    def init(cls, spec: HashFeatureSpec, hidden_size: int, rng, scale=0.1) -> "EncoderParams":
        return cls(projection=rng.normal(0.0, scale, size=(hidden_size, spec.dims)), spec=spec)


def featurize(
    sentence: Sequence[Token],
    position: int,
    context: Optional[Sequence[Token]],
    spec: HashFeatureSpec,
) -> dict[int, float]:
    """Sparse hashed feature counts for one token position.

    Base features: surface, normalized form, char n-grams of the normalized
    form, and windowed neighbors keyed by relative offset.  Context features
    (see module docstring) fire only when the token occurs in the context.
    """
    if not 0 <= position < len(sentence):
        raise ConfigError(f"position {position} outside sentence of {len(sentence)}")
    token = sentence[position]
    fv: dict[int, float] = {}

    def add(*parts, count=1.0):
        idx = spec.index(*parts)
        fv[idx] = fv.get(idx, 0.0) + count

    add("sfc", token.surface)
    add("nrm", token.normalized)
    for n in spec.char_ngrams:
        norm = token.normalized
        for k in range(len(norm) - n + 1):
            add(f"ng{n}", norm[k : k + n])
    for off in range(-spec.window, spec.window + 1):
        if off == 0:
            continue
        j = position + off
        if 0 <= j < len(sentence):
            add("win", off, sentence[j].normalized)

    if context is not None and spec.context_cooccurrence:
        hits = [j for j, ct in enumerate(context) if ct.normalized == token.normalized]
        hits = hits[:MAX_CONTEXT_OCCURRENCES]
        if hits:
            add("ctx_hit")
        for j in hits:
            for off in range(-spec.window, spec.window + 1):
                if off == 0:
                    continue
                k = j + off
                if 0 <= k < len(context):
                    add("ctx", off, context[k].normalized)
    return fv


def featurize_sentence(
    sentence: Sequence[Token],
    context: Optional[Sequence[Token]],
    spec: HashFeatureSpec,
) -> list[dict[int, float]]:
    return [featurize(sentence, i, context, spec) for i in range(len(sentence))]


def encode_features(features: Sequence[dict[int, float]], params: EncoderParams) -> np.ndarray:
    A = params.projection
    V = np.zeros((len(features), params.hidden_size))
    for i, fv in enumerate(features):
        if fv:  # dict keys are unique, so a fancy-indexed product is exact
            idx = list(fv.keys())
            counts = np.fromiter(fv.values(), dtype=np.float64, count=len(fv))
            V[i] = A[:, idx] @ counts
    return V


def encode(
    sentence: Sequence[Token],
    context: Optional[Sequence[Token]],
    params: EncoderParams,
) -> EmbeddingMatrix:
    """Token representations for a sentence, optionally context-conditioned."""
    feats = featurize_sentence(sentence, context, params.spec)
    view = VIEW_RETRIEVAL if context is not None else VIEW_ORIGINAL
    return EmbeddingMatrix(rows=encode_features(feats, params), view_tag=view)


def encode_backward(
    features: Sequence[dict[int, float]],
    params: EncoderParams,
    upstream: np.ndarray,
) -> np.ndarray:
    """Exact gradient of the projection: sum of upstream-row x feature outer products."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (len(features), params.hidden_size):
        raise ConfigError(
            f"upstream has shape {upstream.shape}, expected "
            f"({len(features)}, {params.hidden_size})"
        )
    if not np.isfinite(upstream).all():
        raise ConfigError("upstream gradient contains non-finite entries")
    dA = np.zeros_like(params.projection)
    for i, fv in enumerate(features):
        if fv:
            idx = list(fv.keys())
            counts = np.fromiter(fv.values(), dtype=np.float64, count=len(fv))
            dA[:, idx] += upstream[i][:, None] * counts[None, :]
    return dA


def load_embedding_dump(source: IO) -> dict[tuple[str, str], EmbeddingMatrix]:
    """Read externally computed representations from a JSON-lines stream.

    One record per (sentence, view): ``{"sentence_id": ..., "view":
    "original"|"retrieval", "rows": [[...], ...]}``.  All records must share
    one hidden size; duplicate keys and non-finite rows are rejected.
    """
    out: dict[tuple[str, str], EmbeddingMatrix] = {}
    width = None
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    for idx, line in enumerate(data.splitlines()):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DumpFormatError(f"invalid JSON: {exc}", record_index=idx)
        try:
            key = (rec["sentence_id"], rec["view"])
            rows = np.asarray(rec["rows"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise DumpFormatError(f"bad record structure: {exc}", record_index=idx)
        if key in out:
            raise DumpFormatError(f"duplicate key {key}", record_index=idx)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise DumpFormatError(f"rows must be a 2-d array, got {rows.shape}", record_index=idx)
        if not np.isfinite(rows).all():
            raise DumpFormatError("rows contain non-finite values", record_index=idx)
        if width is None:
            width = rows.shape[1]
        elif rows.shape[1] != width:
            raise DumpFormatError(
                f"hidden size {rows.shape[1]} conflicts with earlier {width}",
                record_index=idx,
            )
        try:
            out[key] = EmbeddingMatrix(rows=rows, view_tag=rec["view"])
        except ConfigError as exc:
            raise DumpFormatError(str(exc), record_index=idx)
    return out


def write_embedding_dump(sink: IO, records) -> None:
    """Inverse of load_embedding_dump; records are (sentence_id, view, rows)."""
    for sentence_id, view, rows in records:
        rec = {
            "sentence_id": sentence_id,
            "view": view,
            "rows": [[float(v) for v in row] for row in np.asarray(rows)],
        }
        sink.write(json.dumps(rec) + "\n")
