"""Fetching related texts for a sentence and alternative context providers.

Long sentences are chunked at punctuation into sub-sentence queries, each
query keeps at most k service results, and results are merged in (query
order, service rank) order with duplicate texts removed.  A fixture cache in
JSON-lines form makes every experiment replayable offline; a generic HTTP
client covers live services that answer a query with an ordered list of
title/snippet records.
"""

from __future__ import annotations

import json
import random
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence

from .corpus import Dataset, LabeledSentence
from .errors import ConfigError, DataError, DumpFormatError, RetrievalError

DEFAULT_QUERY_WORD_LIMIT = 30
DEFAULT_MAX_RESULTS = 20
DEFAULT_PUNCTUATION = frozenset({".", ",", ";", ":", "!", "?"})


def normalize_text(text: str) -> str:
    """Whitespace-collapsed, case-folded form used for matching and dedup."""
    return " ".join(text.split()).casefold()


@dataclass(frozen=True)
class SearchResult:
    title: str
    snippet: str
    engine_rank: int

    def __post_init__(self):
        if not (normalize_text(self.title) or normalize_text(self.snippet)):
            raise DataError("search result needs a non-empty title or snippet")


@dataclass(frozen=True)
class RetrievedText:
    text: str
    origin_query: str
    engine_rank: int

    def __post_init__(self):
        if not normalize_text(self.text):
            raise DataError("retrieved text is empty after normalization")

    @property
    def normalized(self) -> str:
        return normalize_text(self.text)

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(self.text.split())


@dataclass(frozen=True)
class RetrievalConfig:
    query_word_limit: int = DEFAULT_QUERY_WORD_LIMIT
    max_results_per_query: int = DEFAULT_MAX_RESULTS
    leak_filter: bool = True

    def __post_init__(self):
        if self.query_word_limit < 1:
            raise ConfigError("query_word_limit must be >= 1")
        if self.max_results_per_query < 1:
            raise ConfigError("max_results_per_query must be >= 1")


def chunk_query(
    words: Sequence[str],
    limit: int = DEFAULT_QUERY_WORD_LIMIT,
    punctuation: frozenset[str] = DEFAULT_PUNCTUATION,
) -> list[str]:
    """Split a sentence into queries of at most ``limit`` words.

    Sentences within the limit pass through whole.  Longer ones are cut into
    sub-sentences ending at punctuation tokens, punctuation-free runs longer
    than the limit are hard-split every ``limit`` words, and adjacent pieces
    are re-merged greedily while they fit.
    """
    if limit < 1:
        raise ConfigError("limit must be >= 1")
    words = list(words)
    if not words:
        return []
    if len(words) <= limit:
        return [" ".join(words)]

    atoms: list[list[str]] = []
    cur: list[str] = []
    for w in words:
        cur.append(w)
        if w in punctuation:
            atoms.append(cur)
            cur = []
    if cur:
        atoms.append(cur)

    pieces: list[list[str]] = []
    for atom in atoms:
        for k in range(0, len(atom), limit):
            pieces.append(atom[k : k + limit])

    chunks: list[list[str]] = []
    for piece in pieces:
        if chunks and len(chunks[-1]) + len(piece) <= limit:
            chunks[-1].extend(piece)
        else:
            chunks.append(list(piece))
    return [" ".join(c) for c in chunks]


def result_to_text(result: SearchResult) -> Optional[str]:
    """Snippet when present, else title; None signals a skippable result."""
    if normalize_text(result.snippet):
        return result.snippet
    if normalize_text(result.title):
        return result.title
    return None


class SearchClient(Protocol):
    def search(self, query: str) -> list[SearchResult]: ...


class FixtureSearchClient:
    """Replays recorded responses; any cache miss is a retrieval error.

    Fixture format is JSON-lines, one ``{"query": ..., "results": [{"title":
    ..., "snippet": ...}, ...]}`` record per query; the file is append-only
    and the last record for a query wins.
    """

    def __init__(self, path):
        self._path = Path(path)
        self._cache: dict[str, list[SearchResult]] = {}
        if self._path.exists():
            self._load()

    def _load(self):
        for idx, line in enumerate(self._path.read_text(encoding="utf-8").splitlines()):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                query = rec["query"]
                results = [
                    SearchResult(
                        title=r.get("title", ""),
                        snippet=r.get("snippet", ""),
                        engine_rank=rank,
                    )
                    for rank, r in enumerate(rec["results"])
                ]
            except (json.JSONDecodeError, KeyError, TypeError, DataError) as exc:
                raise DumpFormatError(f"bad fixture record: {exc}", record_index=idx)
            self._cache[query] = results

    def __contains__(self, query: str) -> bool:
        return query in self._cache

    def search(self, query: str) -> list[SearchResult]:
        if query not in self._cache:
            raise RetrievalError(f"no fixture entry for query {query!r}", query=query)
        return self._cache[query]


class CachingSearchClient:
    """Consults the fixture first and records every live response into it.

    Appends are serialized by a lock so concurrent per-sentence retrieval
    keeps the single-writer contract on the fixture file.
    """

    def __init__(self, live: SearchClient, fixture_path):
        self._live = live
        self._path = Path(fixture_path)
        self._fixture = FixtureSearchClient(fixture_path)
        self._lock = threading.Lock()

    def search(self, query: str) -> list[SearchResult]:
        with self._lock:
            if query in self._fixture:
                return self._fixture.search(query)
        results = self._live.search(query)
        record = {
            "query": query,
            "results": [{"title": r.title, "snippet": r.snippet} for r in results],
        }
        with self._lock:
            with self._path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")
            self._fixture._cache[query] = results
        return results


class HttpSearchClient:
    """Generic HTTP search service: GET endpoint?q=... returning JSON results.

    Accepts either ``{"results": [{"title": ..., "snippet": ...}, ...]}`` or a
    bare list of such records.
    """

    def __init__(self, endpoint: str, timeout: float = 10.0, session=None):
        import requests

        self._endpoint = endpoint
        self._timeout = timeout
        self._session = session or requests.Session()

    def search(self, query: str) -> list[SearchResult]:
        try:
            resp = self._session.get(
                self._endpoint, params={"q": query}, timeout=self._timeout
            )
            resp.raise_for_status()
            payload = resp.json()
        except Exception as exc:
            raise RetrievalError(
                f"search request failed for query {query!r}: {exc}", query=query
            )
        if isinstance(payload, dict):
            payload = payload.get("results", [])
        results = []
        for rank, rec in enumerate(payload):
            try:
                results.append(
                    SearchResult(
                        title=str(rec.get("title", "")),
                        snippet=str(rec.get("snippet", "")),
                        engine_rank=rank,
                    )
                )
            except DataError:
                continue  # wholly empty records are dropped at the source
        return results


def retrieve(
    sentence: LabeledSentence,
    client: SearchClient,
    config: RetrievalConfig = RetrievalConfig(),
) -> list[RetrievedText]:
    """All related texts for one sentence, deduplicated, in stable order."""
    texts: list[RetrievedText] = []
    seen: set[str] = set()
    for query in chunk_query(sentence.words, config.query_word_limit):
        results = client.search(query)[: config.max_results_per_query]
        for result in results:
            text = result_to_text(result)
            if text is None:
                continue
            candidate = RetrievedText(
                text=text, origin_query=query, engine_rank=result.engine_rank
            )
            if candidate.normalized in seen:
                continue
            seen.add(candidate.normalized)
            texts.append(candidate)
    return texts


def retrieve_all(
    sentences: Sequence[LabeledSentence],
    client: SearchClient,
    config: RetrievalConfig = RetrievalConfig(),
    parallelism: int = 4,
) -> dict[str, list[RetrievedText]]:
    """Per-sentence retrieval, optionally over a bounded worker pool."""
    if parallelism <= 1 or len(sentences) <= 1:
        return {s.id: retrieve(s, client, config) for s in sentences}
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        results = list(pool.map(lambda s: retrieve(s, client, config), sentences))
    return {s.id: r for s, r in zip(sentences, results)}


def leak_filter(
    texts: Sequence[RetrievedText],
    corpora: Sequence[Dataset],
    ngram: Optional[int] = None,
) -> list[RetrievedText]:
    """Drop texts that contain any full dataset sentence as a substring.

    Matching is on whitespace-normalized, case-folded forms.  ``ngram``
    optionally tightens the filter to shared token n-grams of that size.
    """
    needles = [
        normalize_text(sent.text) for ds in corpora for sent in ds.sentences
    ]
    needles = [n for n in needles if n]
    grams: set[tuple[str, ...]] = set()
    if ngram is not None:
        if ngram < 1:
            raise ConfigError("ngram must be >= 1")
        for ds in corpora:
            for sent in ds.sentences:
                toks = normalize_text(sent.text).split()
                for k in range(len(toks) - ngram + 1):
                    grams.add(tuple(toks[k : k + ngram]))

    kept = []
    for text in texts:
        hay = text.normalized
        if any(needle in hay for needle in needles):
            continue
        if grams:
            toks = hay.split()
            if any(
                tuple(toks[k : k + ngram]) in grams
                for k in range(len(toks) - ngram + 1)
            ):
                continue
        kept.append(text)
    return kept


def document_contexts(
    sentence: LabeledSentence, dataset: Dataset, budget: int
) -> list[RetrievedText]:
    """Neighboring sentences of the same document as contexts, under a budget.

    Expansion alternates after/before with growing distance and stops at the
    first neighbor that does not fit in the remaining word budget.
    """
    index = None
    for i, s in enumerate(dataset.sentences):
        if s.id == sentence.id:
            index = i
            break
    if index is None:
        raise DataError(f"sentence {sentence.id!r} not in dataset split {dataset.split!r}")
    lo, hi = dataset.document_of(index)
    out: list[RetrievedText] = []
    remaining = budget
    distance = 1
    while True:
        candidates = []
        if index + distance < hi:
            candidates.append(index + distance)
        if index - distance >= lo:
            candidates.append(index - distance)
        if not candidates:
            break
        for j in candidates:
            neighbor = dataset.sentences[j]
            if len(neighbor) > remaining:
                return out
            out.append(
                RetrievedText(
                    text=neighbor.text,
                    origin_query=f"doc:{sentence.id}",
                    engine_rank=len(out),
                )
            )
            remaining -= len(neighbor)
        distance += 1
    return out


def random_contexts(
    mode: str, pool: Sequence, count: int, seed: int
) -> list[RetrievedText]:
    """Sample contexts uniformly without replacement, deterministically.

    ``from_retrieved`` samples RetrievedText items; ``from_data`` samples
    sentences and uses their token text.
    """
    if mode not in ("from_retrieved", "from_data"):
        raise ConfigError(f"unknown random context mode {mode!r}")
    if not pool:
        raise DataError("random context pool is empty")
    rng = random.Random(seed)
    picks = rng.sample(range(len(pool)), min(count, len(pool)))
    out = []
    for rank, i in enumerate(picks):
        # both RetrievedText and LabeledSentence expose .text
        out.append(
            RetrievedText(
                text=pool[i].text, origin_query=f"random-{mode}:{seed}", engine_rank=rank
            )
        )
    return out
