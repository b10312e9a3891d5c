"""Sentence/label data model, CoNLL I/O, span extraction and entity-level F1."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence

from .errors import AlignmentError, ConllParseError, DataError

DOCSTART = "-DOCSTART-"


def normalize_token(surface: str) -> str:
    """Canonical form of a token: whitespace-trimmed and lowercased."""
    return surface.strip().lower()


@dataclass(frozen=True)
class Token:
    surface: str
    normalized: str = field(default="")

    def __post_init__(self):
        if not self.surface:
            raise DataError("token surface must be non-empty")
        if not self.normalized:
            object.__setattr__(self, "normalized", normalize_token(self.surface))

    @classmethod
    def make(cls, surface: str) -> "Token":
        return cls(surface=surface)


def tokens_from_strings(words: Iterable[str]) -> tuple[Token, ...]:
    return tuple(Token.make(w) for w in words)


@dataclass(frozen=True)
class LabeledSentence:
    """A token sequence with an optional aligned BIO tag sequence."""

    id: str
    tokens: tuple[Token, ...]
    labels: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise DataError(f"sentence {self.id!r} has no tokens")
        if self.labels is not None and len(self.labels) != len(self.tokens):
            raise AlignmentError(
                f"sentence {self.id!r}: {len(self.labels)} labels for "
                f"{len(self.tokens)} tokens"
            )

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(t.surface for t in self.tokens)

    @property
    def text(self) -> str:
        return " ".join(self.words)


@dataclass(frozen=True)
class EntitySpan:
    """Half-open token span [start, end) carrying an entity type."""

    start: int
    end: int
    type: str

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise DataError(f"invalid span ({self.start}, {self.end})")


@dataclass(frozen=True)
class Dataset:
    """An immutable split of sentences plus the ordered tag inventory.

    ``doc_starts`` holds indices of sentences that open a new document.  When
    the source carries no document markers the whole split is one document.
    """

    split: str
    sentences: tuple[LabeledSentence, ...]
    label_set: tuple[str, ...]
    doc_starts: tuple[int, ...] = ()

    def __post_init__(self):
        if self.split not in ("train", "dev", "test", "unlabeled"):
            raise DataError(f"unknown split {self.split!r}")
        known = set(self.label_set)
        for sent in self.sentences:
            if self.split == "unlabeled":
                if sent.labels is not None:
                    raise DataError(f"unlabeled split contains labels ({sent.id!r})")
            elif sent.labels is not None:
                unknown = [lb for lb in sent.labels if lb not in known]
                if unknown:
                    raise DataError(
                        f"sentence {sent.id!r} uses labels outside label_set: {unknown}"
                    )

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def document_of(self, index: int) -> tuple[int, int]:
        """Half-open sentence-index range of the document containing ``index``."""
        starts = sorted(set(self.doc_starts) | {0})
        pos = bisect.bisect_right(starts, index) - 1
        lo = starts[pos]
        hi = starts[pos + 1] if pos + 1 < len(starts) else len(self.sentences)
        return lo, hi


def read_conll(
    source: IO,
    token_column: int = 0,
    label_column: Optional[int] = 1,
    split: str = "train",
) -> Dataset:
    """Parse whitespace-separated CoNLL columns into a Dataset.

    Blank lines separate sentences; ``-DOCSTART-`` lines mark document
    boundaries and are not tokens.  ``label_column=None`` reads an unlabeled
    split.  Sentence ids are ``{split}-{ordinal}``.
    """
    if token_column < 0 or (label_column is not None and label_column < 0):
        raise ConllParseError("column indices must be non-negative")
    needed = max(token_column, label_column if label_column is not None else 0) + 1

    sentences: list[LabeledSentence] = []
    doc_starts: list[int] = []
    label_order: dict[str, None] = {}
    cur_words: list[str] = []
    cur_labels: list[str] = []
    pending_doc_start = False

    def flush():
        nonlocal pending_doc_start
        if not cur_words:
            return
        if pending_doc_start:
            doc_starts.append(len(sentences))
            pending_doc_start = False
        labels = tuple(cur_labels) if label_column is not None else None
        sentences.append(
            LabeledSentence(
                id=f"{split}-{len(sentences)}",
                tokens=tokens_from_strings(cur_words),
                labels=labels,
            )
        )
        cur_words.clear()
        cur_labels.clear()

    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    for lineno, raw in enumerate(data.splitlines(), start=1):
        line = raw.strip()
        if not line:
            flush()
            continue
        cols = line.split()
        if cols[0] == DOCSTART:
            flush()
            pending_doc_start = True
            continue
        if len(cols) < needed:
            raise ConllParseError(
                f"expected at least {needed} columns, got {len(cols)}: {raw!r}",
                line_number=lineno,
            )
        cur_words.append(cols[token_column])
        if label_column is not None:
            label = cols[label_column]
            cur_labels.append(label)
            label_order.setdefault(label, None)
    flush()

    return Dataset(
        split=split,
        sentences=tuple(sentences),
        label_set=tuple(label_order),
        doc_starts=tuple(doc_starts),
    )


def write_conll(dataset: Dataset, sink: IO, extra_labels: Optional[Sequence[Sequence[str]]] = None) -> None:
    """Write token/label columns back out, one token per line.

    ``extra_labels``, when given, is appended as a final column per token
    (used by ``predict`` to add model output next to the gold column).
    """
    if extra_labels is not None and len(extra_labels) != len(dataset.sentences):
        raise AlignmentError("extra_labels must align with dataset sentences")
    doc_starts = set(dataset.doc_starts)
    for idx, sent in enumerate(dataset.sentences):
        if idx in doc_starts:
            sink.write(f"{DOCSTART} O\n\n")
        for pos, token in enumerate(sent.tokens):
            cols = [token.surface]
            if sent.labels is not None:
                cols.append(sent.labels[pos])
            if extra_labels is not None:
                cols.append(extra_labels[idx][pos])
            sink.write(" ".join(cols) + "\n")
        sink.write("\n")


def _split_tag(tag: str) -> tuple[str, Optional[str]]:
    if tag == "O":
        return "O", None
    if len(tag) > 1 and tag[1] == "-" and tag[0] in ("B", "I"):
        return tag[0], tag[2:]
    # Anything unrecognized is treated as O, mirroring lenient NER scorers.
    return "O", None


def extract_spans(labels: Sequence[str]) -> list[EntitySpan]:
    """Maximal BIO entity spans with the conlleval repair policy.

    An ``I-T`` that does not continue a ``B-T``/``I-T`` of the same type
    opens a new span, so every tag sequence yields a valid segmentation.
    """
    spans: list[EntitySpan] = []
    start = None
    cur_type = None
    for i, tag in enumerate(labels):
        prefix, etype = _split_tag(tag)
        continues = prefix == "I" and cur_type is not None and etype == cur_type
        if cur_type is not None and not continues:
            spans.append(EntitySpan(start, i, cur_type))
            start, cur_type = None, None
        if prefix == "B" or (prefix == "I" and not continues):
            start, cur_type = i, etype
    if cur_type is not None:
        spans.append(EntitySpan(start, len(labels), cur_type))
    return spans


def entity_f1(
    gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]
) -> dict[str, float]:
    """Micro-averaged precision/recall/F1 over exact (start, end, type) matches.

    Ratios with a zero denominator are defined as 0.
    """
    if len(gold) != len(pred):
        raise AlignmentError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    n_gold = n_pred = n_match = 0
    for k, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise AlignmentError(f"sentence {k}: {len(g)} gold tags vs {len(p)} predicted")
        gset = set((s.start, s.end, s.type) for s in extract_spans(g))
        pset = set((s.start, s.end, s.type) for s in extract_spans(p))
        n_gold += len(gset)
        n_pred += len(pset)
        n_match += len(gset & pset)
    precision = n_match / n_pred if n_pred else 0.0
    recall = n_match / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}
