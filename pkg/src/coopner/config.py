"""Flat key-value run configuration with section-prefixed keys.

A config file holds ``section.key = value`` lines (``#`` comments allowed);
command-line flags override file values.  Unknown keys are rejected up front
so typos fail fast instead of silently using defaults.
"""

from __future__ import annotations

from typing import Optional

from .encoder import HashFeatureSpec
from .errors import ConfigError
from .retrieval import RetrievalConfig
from .trainer import TrainConfig


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("on", "true", "1", "yes"):
        return True
    if low in ("off", "false", "0", "no"):
        return False
    raise ConfigError(f"expected on/off, got {text!r}")


def _opt_float(text: str) -> Optional[float]:
    low = str(text).strip().lower()
    return None if low in ("none", "") else float(text)


def _opt_int(text: str) -> Optional[int]:
    low = str(text).strip().lower()
    return None if low in ("none", "") else int(text)


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in str(text).replace(",", " ").split())


def _choice(*options):
    def parse(text: str) -> str:
        if text not in options:
            raise ConfigError(f"expected one of {options}, got {text!r}")
        return text

    return parse


# key -> (parser, default)
SCHEMA = {
    "seed": (int, 0),
    "corpus.token_col": (int, 0),
    "corpus.label_col": (_opt_int, 1),
    "retrieval.fixture": (str, ""),
    "retrieval.endpoint": (str, ""),
    "retrieval.k": (int, 20),
    "retrieval.query_word_limit": (int, 30),
    "retrieval.leak_filter": (_bool, True),
    "retrieval.leak_ngram": (_opt_int, None),
    "retrieval.parallelism": (int, 4),
    "retrieval.timeout": (float, 10.0),
    "retrieval.context_source": (
        _choice("search", "document", "random-retrieved", "random-data"),
        "search",
    ),
    "retrieval.doc_budget": (int, 100),
    "reranker.scorer": (
        _choice("engine", "fuzzy", "bertscore", "bertscore-idf"),
        "bertscore",
    ),
    "reranker.l": (int, 6),
    "reranker.sep_token": (str, "[SEP]"),
    "reranker.max_view_len": (int, 510),
    "encoder.kind": (_choice("hash", "external"), "hash"),
    "encoder.hash_dims": (int, 4096),
    "encoder.window": (int, 2),
    "encoder.char_ngrams": (_int_tuple, (3,)),
    "encoder.hash_seed": (int, 17),
    "encoder.cooccurrence": (_bool, True),
    "encoder.hidden": (int, 16),
    "encoder.embedding_dump": (str, ""),
    "train.mode": (
        _choice("wo_context", "w_context", "joint_no_cl", "cl_l2", "cl_kl", "cl_both"),
        "cl_kl",
    ),
    "train.encoder_lr": (float, 5e-6),
    "train.crf_lr": (float, 0.05),
    "train.batch_size": (int, 4),
    "train.epochs": (int, 10),
    "train.weight_decay": (float, 0.0),
    "train.unlabeled_ratio": (str, "1:1"),
    "train.init_scale": (float, 0.1),
    "train.clip_norm": (_opt_float, None),
    "train.strict_contexts": (_bool, False),
    "train.bio_mask": (_bool, False),
    "train.weight_nll": (float, 1.0),
    "train.weight_nll_ext": (float, 1.0),
    "train.weight_cl": (float, 1.0),
}

# named bundles of overrides; the large-corpus preset shortens training the
# way bigger datasets warrant
PRESETS = {
    "large-corpus": {"train.epochs": "5"},
}


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


class RunConfig:
    """Typed view over the merged (defaults, file, overrides) key space."""

    def __init__(self, values: Optional[dict] = None):
        self._values = {key: default for key, (_, default) in SCHEMA.items()}
        if values:
            self.update(values)

    def update(self, raw_values: dict) -> "RunConfig":
        unknown = sorted(set(raw_values) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for key, raw in raw_values.items():
            parser, _ = SCHEMA[key]
            if raw is None:
                continue
            try:
                self._values[key] = parser(raw) if isinstance(raw, str) else raw
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {key}: {raw!r} ({exc})")
        return self

    def apply_preset(self, name: str) -> "RunConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return self.update(PRESETS[name])

    def __getitem__(self, key: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        return self._values[key]

    def as_dict(self) -> dict:
        return dict(self._values)

    def hash_spec(self) -> HashFeatureSpec:
        return HashFeatureSpec(
            dims=self["encoder.hash_dims"],
            window=self["encoder.window"],
            char_ngrams=self["encoder.char_ngrams"],
            hash_seed=self["encoder.hash_seed"],
            context_cooccurrence=self["encoder.cooccurrence"],
        )

    def retrieval_config(self) -> RetrievalConfig:
        return RetrievalConfig(
            query_word_limit=self["retrieval.query_word_limit"],
            max_results_per_query=self["retrieval.k"],
            leak_filter=self["retrieval.leak_filter"],
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            mode=self["train.mode"],
            encoder_lr=self["train.encoder_lr"],
            crf_lr=self["train.crf_lr"],
            batch_size=self["train.batch_size"],
            epochs=self["train.epochs"],
            weight_decay=self["train.weight_decay"],
            seed=self["seed"],
            unlabeled_ratio=self["train.unlabeled_ratio"],
            hidden_size=self["encoder.hidden"],
            init_scale=self["train.init_scale"],
            hash_spec=self.hash_spec(),
            sep_token=self["reranker.sep_token"],
            max_view_len=self["reranker.max_view_len"],
            clip_norm=self["train.clip_norm"],
            strict_contexts=self["train.strict_contexts"],
            bio_mask=self["train.bio_mask"],
            weight_nll=self["train.weight_nll"],
            weight_nll_ext=self["train.weight_nll_ext"],
            weight_cl=self["train.weight_cl"],
        )
