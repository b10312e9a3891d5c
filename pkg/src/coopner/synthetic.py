"""Generated gazetteer-disambiguation corpus for end-to-end experiments.

Every sentence mentions one made-up entity name whose type (person vs place)
is mostly not decidable from the sentence itself: the templates are
type-neutral and the name surfaces are opaque symbols except for a weak,
configurable morphological cue (a typed suffix present on a fraction of the
names).  Each sentence comes with one gazetteer-style context that states the
entity's type right next to the name, so the context-conditioned view can
generalize to names never seen in training while the bare view must memorize
surfaces and exploit the weak cue.  Dev sentences draw half their names from
the training pool and half from a held-out pool, and the unlabeled pool uses
the held-out names, which is what makes consistency training on unlabeled
data pay off.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .corpus import Dataset, LabeledSentence, tokens_from_strings
from .reranker import (
    DEFAULT_MAX_VIEW_LEN,
    DEFAULT_SEP_TOKEN,
    ContextBundle,
    ScoredText,
    assemble_context,
)
from .retrieval import RetrievedText

TYPES = ("PER", "LOC")
LABEL_SET = ("O", "B-PER", "B-LOC")

_TEMPLATES = (
    ("folks", "mentioned", None, "again"),
    ("the", None, "report", "arrived"),
    ("we", "discussed", None, "yesterday"),
    ("everyone", "remembers", None, "somehow"),
    ("they", "covered", None, "twice"),
)

_TYPE_WORDS = {"PER": "person", "LOC": "place"}


@dataclass
class SyntheticTask:
    train: Dataset
    dev: Dataset
    unlabeled: Dataset
    bundles: dict[str, ContextBundle]
    name_types: dict[str, str] = field(default_factory=dict)


def _gazetteer_bundle(name, etype, sentence_words, sep_token, max_view_len):
    # the entry names the type next to the entity and echoes the sentence, the
    # way retrieved snippets echo their query; the echo makes every position
    # of the retrieval view genuinely context-conditioned
    word = _TYPE_WORDS[etype]
    text = f"{name} {word} record : " + " ".join(sentence_words)
    scored = ScoredText(
        text=RetrievedText(text=text, origin_query=name, engine_rank=0),
        precision=1.0,
        recall=1.0,
        f1=1.0,
    )
    return assemble_context([scored], len(sentence_words), sep_token, max_view_len)


_SUFFIXES = {"PER": "son", "LOC": "ton"}


def make_ambiguity_task(
    n_train: int = 1600,
    n_dev: int = 400,
    n_unlabeled: int = 0,
    n_train_names: int = 80,
    n_novel_names: int = 60,
    seed: int = 0,
    hint_reliability: float = 0.7,
    dev_seen_fraction: float = 0.3,
    label_noise: float = 0.0,
    sep_token: str = DEFAULT_SEP_TOKEN,
    max_view_len: int = DEFAULT_MAX_VIEW_LEN,
) -> SyntheticTask:
    """Build the corpus; names are split into a training pool and a novel pool.

    Dev mixes pools per ``dev_seen_fraction`` so both memorization and
    context-driven generalization are measured; unlabeled sentences use novel
    names only.  ``hint_reliability`` is the fraction of names whose surface
    ends with a type-specific suffix, the only type signal available to the
    bare view on unseen names.  ``label_noise`` flips the entity type of that
    fraction of training labels (dev stays clean), the regime where soft
    consistency targets beat the raw annotations.
    """
    rng = random.Random(seed)

    def make_name(pool_tag, i):
        etype = rng.choice(TYPES)
        suffix = _SUFFIXES[etype] if rng.random() < hint_reliability else "mix"
        return f"xq{seed % 97}{pool_tag}{i:03d}{suffix}", etype

    train_named = [make_name("a", i) for i in range(n_train_names)]
    novel_named = [make_name("b", i) for i in range(n_novel_names)]
    train_names = [n for n, _ in train_named]
    novel_names = [n for n, _ in novel_named]
    name_types = dict(train_named + novel_named)

    bundles: dict[str, ContextBundle] = {}

    def build_sentence(split, idx, name, labeled=True, noise=0.0):
        template = _TEMPLATES[rng.randrange(len(_TEMPLATES))]
        words = [name if w is None else w for w in template]
        pos = template.index(None)
        labels = None
        if labeled:
            etype = name_types[name]
            if noise > 0 and rng.random() < noise:
                etype = TYPES[1 - TYPES.index(etype)]
            labels = tuple(
                f"B-{etype}" if i == pos else "O" for i in range(len(words))
            )
        sent = LabeledSentence(
            id=f"{split}-{idx}", tokens=tokens_from_strings(words), labels=labels
        )
        bundles[sent.id] = _gazetteer_bundle(
            name, name_types[name], words, sep_token, max_view_len
        )
        return sent

    train_sents = tuple(
        build_sentence(
            "train", i, train_names[rng.randrange(n_train_names)], noise=label_noise
        )
        for i in range(n_train)
    )
    n_dev_seen = int(round(n_dev * dev_seen_fraction))
    dev_sents = tuple(
        build_sentence(
            "dev",
            i,
            train_names[rng.randrange(n_train_names)]
            if i < n_dev_seen
            else novel_names[rng.randrange(n_novel_names)],
        )
        for i in range(n_dev)
    )
    unl_sents = tuple(
        build_sentence(
            "unlabeled", i, train_names[rng.randrange(n_train_names)], labeled=False
        )
        for i in range(n_unlabeled)
    )

    return SyntheticTask(
        train=Dataset(split="train", sentences=train_sents, label_set=LABEL_SET),
        dev=Dataset(split="dev", sentences=dev_sents, label_set=LABEL_SET),
        unlabeled=Dataset(split="unlabeled", sentences=unl_sents, label_set=()),
        bundles=bundles,
        name_types=name_types,
    )
