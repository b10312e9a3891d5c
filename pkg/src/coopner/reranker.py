"""Scoring retrieved texts against a sentence, ranking, and context assembly.

The primary scorer is greedy token matching over unit-normalized embedding
rows: recall averages each sentence token's best cosine match in the
candidate, precision averages each candidate token's best match in the
sentence, and texts are ranked by the harmonic mean of the two.  Variants:
inverse-document-frequency weighting of the same matches, a token-level
edit-distance score, and the search engine's own order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Callable, Optional, Sequence

import numpy as np

from .corpus import Token, normalize_token
from .encoder import EmbeddingMatrix
from .errors import ConfigError, DataError, DumpFormatError
from .retrieval import RetrievedText

DEFAULT_SEP_TOKEN = "[SEP]"
DEFAULT_TOP_L = 6
DEFAULT_MAX_VIEW_LEN = 510


@dataclass(frozen=True)
class ScoredText:
    text: RetrievedText
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class ContextBundle:
    """Selected contexts plus the assembled separator-joined token sequence."""

    selected: tuple[ScoredText, ...]
    assembled: tuple[str, ...]
    sep_token: str

    @property
    def texts(self) -> tuple[str, ...]:
        return tuple(s.text.text for s in self.selected)


def _f1(precision: float, recall: float) -> float:
    denom = precision + recall
    return 2.0 * precision * recall / denom if denom != 0 else 0.0


def _unit_rows(emb: EmbeddingMatrix | np.ndarray, side: str) -> np.ndarray:
    rows = np.asarray(getattr(emb, "rows", emb), dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise DataError(f"{side} embedding row {bad[0]} has zero norm")
    return rows / norms[:, None]


def bertscore(
    sent_emb: EmbeddingMatrix | np.ndarray, cand_emb: EmbeddingMatrix | np.ndarray
) -> dict[str, float]:
    """Greedy-matching P/R/F1 between two embedding matrices.

    Rows are unit-normalized internally, so scores are means of cosine
    maxima; F1 uses the zero-denominator convention f1 = 0.
    """
    a = _unit_rows(sent_emb, "sentence")
    b = _unit_rows(cand_emb, "candidate")
    sim = a @ b.T
    recall = float(sim.max(axis=1).mean())
    precision = float(sim.max(axis=0).mean())
    return {"P": precision, "R": recall, "F1": _f1(precision, recall)}


@dataclass(frozen=True)
class IdfTable:
    """Inverse document frequency weights over normalized tokens.

    Built over a candidate pool with the smoothed formula
    ``ln((1 + N) / (1 + df)) + 1``; unseen tokens get the df = 0 weight.
    """

    weights: dict[str, float]
    default: float

    def __post_init__(self):
        for tok, w in self.weights.items():
            if not math.isfinite(w) or w < 0:
                raise DataError(f"idf weight for {tok!r} must be finite and >= 0")
        if not math.isfinite(self.default) or self.default < 0:
            raise DataError("default idf weight must be finite and >= 0")

    def __getitem__(self, normalized: str) -> float:
        return self.weights.get(normalized, self.default)

    @classmethod
    def uniform(cls, weight: float = 1.0) -> "IdfTable":
        return cls(weights={}, default=weight)

    @classmethod
    def from_pool(cls, pool_token_lists: Sequence[Sequence[str]]) -> "IdfTable":
        n = len(pool_token_lists)
        df: dict[str, int] = {}
        for tokens in pool_token_lists:
            for norm in set(normalize_token(t) for t in tokens):
                df[norm] = df.get(norm, 0) + 1
        weights = {
            tok: math.log((1 + n) / (1 + count)) + 1.0 for tok, count in df.items()
        }
        return cls(weights=weights, default=math.log((1 + n) / 1.0) + 1.0)


def bertscore_idf(
    sent_emb,
    cand_emb,
    idf: IdfTable,
    sent_tokens: Sequence[str],
    cand_tokens: Sequence[str],
) -> dict[str, float]:
    """Greedy-matching scores with idf-weighted means.

    Each position's best-match similarity is weighted by the idf of its own
    token and the mean is normalized by the summed weights of that side.
    """
    a = _unit_rows(sent_emb, "sentence")
    b = _unit_rows(cand_emb, "candidate")
    if len(sent_tokens) != a.shape[0] or len(cand_tokens) != b.shape[0]:
        raise DataError("token lists must align with embedding rows")
    wa = np.array([idf[normalize_token(t)] for t in sent_tokens])
    wb = np.array([idf[normalize_token(t)] for t in cand_tokens])
    if wa.sum() == 0 or wb.sum() == 0:
        raise DataError("idf weights sum to zero on one side")
    sim = a @ b.T
    recall = float((sim.max(axis=1) * wa).sum() / wa.sum())
    precision = float((sim.max(axis=0) * wb).sum() / wb.sum())
    return {"P": precision, "R": recall, "F1": _f1(precision, recall)}


def fuzzy_match(sent_tokens: Sequence[str], cand_tokens: Sequence[str]) -> float:
    """1 minus the normalized token-level edit distance; both empty -> 1."""
    n, m = len(sent_tokens), len(cand_tokens)
    if n == 0 and m == 0:
        return 1.0
    a = [normalize_token(t) for t in sent_tokens]
    b = [normalize_token(t) for t in cand_tokens]
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            sub = prev[j - 1] + (a[i - 1] != b[j - 1])
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, sub)
        prev = cur
    return 1.0 - prev[m] / max(n, m)


Scorer = Callable[[RetrievedText], tuple[float, float, float]]


def engine_order_scorer() -> Scorer:
    """Preserves service order by scoring each text as 1 / (1 + rank)."""

    def score(text: RetrievedText):
        s = 1.0 / (1.0 + text.engine_rank)
        return s, s, s

    return score


def fuzzy_scorer(sentence_words: Sequence[str]) -> Scorer:
    def score(text: RetrievedText):
        s = fuzzy_match(sentence_words, text.words)
        return s, s, s

    return score


def bertscore_scorer(
    sentence_words: Sequence[str],
    encode_fn: Callable[[Sequence[str]], EmbeddingMatrix],
    idf: Optional[IdfTable] = None,
) -> Scorer:
    """Greedy-matching scorer; pass ``idf`` for the weighted variant.

    ``encode_fn`` maps a word sequence to an embedding matrix, so the same
    scorer works with the hashed encoder or external embedding dumps.
    """
    sent_emb = encode_fn(sentence_words)

    def score(text: RetrievedText):
        cand_emb = encode_fn(text.words)
        if idf is None:
            r = bertscore(sent_emb, cand_emb)
        else:
            r = bertscore_idf(sent_emb, cand_emb, idf, sentence_words, text.words)
        return r["P"], r["R"], r["F1"]

    return score


SCORER_KINDS = ("engine", "fuzzy", "bertscore", "bertscore-idf")


def rank_and_select(
    texts: Sequence[RetrievedText], scorer: Scorer, l: int
) -> list[ScoredText]:
    """Score, sort descending and keep the top l.

    Ties break by engine rank, then normalized text, so ranking is total and
    deterministic.
    """
    if l < 0:
        raise ConfigError("l must be >= 0")
    scored = []
    for text in texts:
        p, r, f1 = scorer(text)
        scored.append(ScoredText(text=text, precision=p, recall=r, f1=f1))
    scored.sort(key=lambda s: (-s.f1, s.text.engine_rank, s.text.normalized))
    return scored[:l]


def assemble_context(
    selected: Sequence[ScoredText],
    sentence_len: int,
    sep_token: str = DEFAULT_SEP_TOKEN,
    max_view_len: int = DEFAULT_MAX_VIEW_LEN,
) -> ContextBundle:
    """Join selected texts with a leading separator before each, under a budget.

    The assembled sequence plus the sentence never exceeds ``max_view_len``:
    whole lowest-ranked texts are dropped first, then tail tokens of the last
    surviving text.  A partially kept text must retain at least one token
    after its separator, otherwise it is dropped too.  With nothing selected
    the assembled view is the bare separator.
    """
    if max_view_len <= sentence_len + 1:
        raise ConfigError(
            f"max_view_len {max_view_len} leaves no room after sentence of {sentence_len}"
        )
    budget = max_view_len - sentence_len
    assembled: list[str] = [sep_token]
    for scored in selected:
        words = scored.text.words
        remaining = budget - len(assembled)
        if remaining < 2:  # no room for a separator plus one token
            break
        if len(words) + 1 <= remaining:
            assembled.append(sep_token)
            assembled.extend(words)
        else:
            assembled.append(sep_token)
            assembled.extend(words[: remaining - 1])
            break
    return ContextBundle(
        selected=tuple(selected), assembled=tuple(assembled), sep_token=sep_token
    )


def bundle_tokens(bundle: ContextBundle) -> tuple[Token, ...]:
    return tuple(Token.make(w) for w in bundle.assembled)


def write_context_dump(sink: IO, records, header: Optional[dict] = None) -> None:
    """JSON-lines context dump: optional header record, then one per sentence.

    Record shape: ``{"sentence_id": ..., "contexts": [{"text": ..., "f1": ...}]}``.
    """
    if header is not None:
        sink.write(json.dumps({"_header": header}) + "\n")
    for sentence_id, scored_texts in records:
        rec = {
            "sentence_id": sentence_id,
            "contexts": [
                {"text": s.text.text if isinstance(s, ScoredText) else s[0],
                 "f1": float(s.f1 if isinstance(s, ScoredText) else s[1])}
                for s in scored_texts
            ],
        }
        sink.write(json.dumps(rec) + "\n")


def read_context_dump(source: IO) -> tuple[dict, dict[str, list[tuple[str, float]]]]:
    """Returns (header, sentence_id -> [(text, f1), ...])."""
    header: dict = {}
    contexts: dict[str, list[tuple[str, float]]] = {}
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
        if "_header" in rec:
            header = rec["_header"]
            continue
        try:
            sid = rec["sentence_id"]
            items = [(c["text"], float(c["f1"])) for c in rec["contexts"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise DumpFormatError(f"bad record structure: {exc}", record_index=idx)
        if sid in contexts:
            raise DumpFormatError(f"duplicate sentence_id {sid!r}", record_index=idx)
        contexts[sid] = items
    return header, contexts


def bundle_from_dump_entry(
    items: Sequence[tuple[str, float]],
    sentence_len: int,
    sep_token: str = DEFAULT_SEP_TOKEN,
    max_view_len: int = DEFAULT_MAX_VIEW_LEN,
) -> ContextBundle:
    """Rebuild a ContextBundle from dumped (text, f1) pairs."""
    scored = [
        ScoredText(
            text=RetrievedText(text=text, origin_query="", engine_rank=rank),
            precision=f1,
            recall=f1,
            f1=f1,
        )
        for rank, (text, f1) in enumerate(items)
    ]
    return assemble_context(scored, sentence_len, sep_token, max_view_len)
