"""Corpus data model, CoNLL round-trips, span extraction, entity F1."""

import io
import random

import pytest
from hypothesis import given, strategies as st

from coopner.corpus import (
    Dataset,
    EntitySpan,
    LabeledSentence,
    Token,
    entity_f1,
    extract_spans,
    read_conll,
    tokens_from_strings,
    write_conll,
)
from coopner.errors import AlignmentError, ConllParseError, DataError

from conlleval_ref import conlleval_scores


def bio_sequences(labels=("PER", "LOC")):
    tag_pool = ["O"] + [f"{p}-{t}" for t in labels for p in ("B", "I")]
    return st.lists(st.sampled_from(tag_pool), min_size=1, max_size=12)


class TestReadConll:
    def test_two_line_sentence(self):
        ds = read_conll(io.StringIO("EU B-ORG\nrejects O\n\n"))
        assert len(ds) == 1
        assert ds.sentences[0].words == ("EU", "rejects")
        assert ds.sentences[0].labels == ("B-ORG", "O")
        assert ds.label_set == ("B-ORG", "O")

    def test_empty_stream(self):
        ds = read_conll(io.StringIO(""))
        assert len(ds) == 0

    def test_docstart_marks_boundary(self):
        text = (
            "-DOCSTART- -X- O O\n\n"
            "a O\n\n"
            "b O\n\n"
            "c O\n\n"
        )
        ds = read_conll(io.StringIO(text))
        assert len(ds) == 3
        assert ds.doc_starts == (0,)
        assert ds.document_of(2) == (0, 3)

    def test_multiple_documents(self):
        text = "-DOCSTART-\n\na O\n\nb O\n\n-DOCSTART-\n\nc O\n\nd O\n\n"
        ds = read_conll(io.StringIO(text))
        assert ds.doc_starts == (0, 2)
        assert ds.document_of(1) == (0, 2)
        assert ds.document_of(2) == (2, 4)

    def test_malformed_line_reports_number(self):
        with pytest.raises(ConllParseError) as err:
            read_conll(io.StringIO("EU B-ORG\nrejects\n\n"))
        assert "line 2" in str(err.value)

    def test_unlabeled_split(self):
        ds = read_conll(io.StringIO("hello\nworld\n\n"), label_column=None, split="unlabeled")
        assert ds.sentences[0].labels is None
        assert ds.label_set == ()

    def test_custom_columns(self):
        ds = read_conll(io.StringIO("1 EU NNP B-ORG\n"), token_column=1, label_column=3)
        assert ds.sentences[0].words == ("EU",)
        assert ds.sentences[0].labels == ("B-ORG",)

    def test_round_trip(self):
        text = "-DOCSTART- O\n\nEU B-ORG\nrejects O\n\nGerman B-MISC\ncall O\n\n"
        ds = read_conll(io.StringIO(text))
        out = io.StringIO()
        write_conll(ds, out)
        ds2 = read_conll(io.StringIO(out.getvalue()))
        assert [s.words for s in ds2] == [s.words for s in ds]
        assert [s.labels for s in ds2] == [s.labels for s in ds]
        assert ds2.doc_starts == ds.doc_starts


class TestDataModel:
    def test_token_normalization(self):
        assert Token.make("Hello ").normalized == "hello"

    def test_empty_token_rejected(self):
        with pytest.raises(DataError):
            Token.make("")

    def test_label_alignment_checked(self):
        with pytest.raises(AlignmentError):
            LabeledSentence("s", tokens_from_strings(["a", "b"]), labels=("O",))

    def test_dataset_rejects_foreign_labels(self):
        sent = LabeledSentence("s", tokens_from_strings(["a"]), labels=("B-X",))
        with pytest.raises(DataError):
            Dataset(split="train", sentences=(sent,), label_set=("O",))

    def test_invalid_span(self):
        with pytest.raises(DataError):
            EntitySpan(2, 2, "PER")


class TestExtractSpans:
    def test_no_entities(self):
        assert extract_spans(["O", "O", "O"]) == []

    def test_basic_spans(self):
        spans = extract_spans(["B-PER", "I-PER", "O", "B-LOC"])
        assert [(s.start, s.end, s.type) for s in spans] == [(0, 2, "PER"), (3, 4, "LOC")]

    def test_orphan_inside_opens_span(self):
        spans = extract_spans(["I-PER", "I-LOC"])
        assert [(s.start, s.end, s.type) for s in spans] == [(0, 1, "PER"), (1, 2, "LOC")]

    def test_b_after_b_splits(self):
        spans = extract_spans(["B-PER", "B-PER"])
        assert [(s.start, s.end, s.type) for s in spans] == [(0, 1, "PER"), (1, 2, "PER")]

    @given(bio_sequences())
    def test_spans_disjoint_and_sorted(self, labels):
        spans = extract_spans(labels)
        for a, b in zip(spans, spans[1:]):
            assert a.end <= b.start
        assert all(0 <= s.start < s.end <= len(labels) for s in spans)

    @given(bio_sequences())
    def test_spans_cover_every_non_o_tag(self, labels):
        covered = set()
        for s in extract_spans(labels):
            covered.update(range(s.start, s.end))
        expected = {i for i, tag in enumerate(labels) if tag != "O"}
        assert covered == expected


class TestEntityF1:
    def test_identity(self):
        gold = [["B-PER", "I-PER", "O"]]
        scores = entity_f1(gold, gold)
        assert scores == {"precision": 1.0, "recall": 1.0, "f1": 1.0}

    def test_half_match(self):
        gold = [["B-PER", "O", "B-LOC"]]
        pred = [["B-PER", "O", "B-ORG"]]
        scores = entity_f1(gold, pred)
        assert scores == {"precision": 0.5, "recall": 0.5, "f1": 0.5}

    def test_empty_prediction(self):
        gold = [["B-PER", "O"]]
        pred = [["O", "O"]]
        assert entity_f1(gold, pred) == {"precision": 0.0, "recall": 0.0, "f1": 0.0}

    def test_no_gold_spans_convention(self):
        gold = [["O"]]
        assert entity_f1(gold, gold) == {"precision": 0.0, "recall": 0.0, "f1": 0.0}

    def test_length_mismatch(self):
        with pytest.raises(AlignmentError):
            entity_f1([["O", "O"]], [["O"]])

    def test_agrees_with_conlleval_reference(self):
        rng = random.Random(1234)
        tags = ["O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG"]
        gold, pred = [], []
        for _ in range(300):
            n = rng.randint(1, 15)
            g = [rng.choice(tags) for _ in range(n)]
            p = list(g)
            for i in range(n):  # inject substitutions, deletions, boundary noise
                r = rng.random()
                if r < 0.12:
                    p[i] = rng.choice(tags)
                elif r < 0.18:
                    p[i] = "O"
            gold.append(g)
            pred.append(p)
        ours = entity_f1(gold, pred)
        ref = conlleval_scores(gold, pred)
        assert ours["precision"] == pytest.approx(ref["precision"], abs=1e-12)
        assert ours["recall"] == pytest.approx(ref["recall"], abs=1e-12)
        assert ours["f1"] == pytest.approx(ref["f1"], abs=1e-12)


def test_write_read_write_is_byte_stable():
    text = "-DOCSTART- O\n\nEU B-ORG\nrejects O\n\nGerman B-MISC\ncall O\n\n"
    ds = read_conll(io.StringIO(text))
    first = io.StringIO()
    write_conll(ds, first)
    ds2 = read_conll(io.StringIO(first.getvalue()))
    second = io.StringIO()
    write_conll(ds2, second)
    assert first.getvalue() == second.getvalue()
