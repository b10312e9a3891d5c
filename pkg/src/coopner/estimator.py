"""Estimator-style front end so the tagger composes with sklearn pipelines.

``CooperativeTagger`` follows the fit/predict/score conventions: ``X`` is a
sequence of token-string sequences, ``y`` aligned tag sequences, and optional
``contexts`` an aligned sequence of retrieved-text lists.  All hyperparameters
are plain constructor arguments, so ``get_params``/``set_params``, cloning
and grid search work as usual.
"""

from __future__ import annotations

from typing import Optional, Sequence

from sklearn.base import BaseEstimator

from .corpus import Dataset, LabeledSentence, entity_f1, tokens_from_strings
from .encoder import HashFeatureSpec
from .errors import DataError
from .reranker import bundle_from_dump_entry
from .trainer import TrainConfig, evaluate, predict_labels, train


def _validate_tokens(X, name="X"):
    if not isinstance(X, Sequence) or isinstance(X, (str, bytes)):
        raise DataError(f"{name} must be a sequence of token sequences")
    for i, tokens in enumerate(X):
        if isinstance(tokens, (str, bytes)) or len(tokens) < 1:
            raise DataError(f"{name}[{i}] must be a non-empty token sequence")
        if not all(isinstance(t, str) and t for t in tokens):
            raise DataError(f"{name}[{i}] contains non-string or empty tokens")


def _validate_aligned(X, other, name):
    if other is None:
        return
    if len(other) != len(X):
        raise DataError(f"{name} must align with X: {len(other)} vs {len(X)}")


class CooperativeTagger(BaseEstimator):
    """Sequence tagger trained on one or both input views.

    Parameters mirror the training configuration; see ``fit`` for the data
    contract.  After fitting, ``checkpoint_`` holds the selected model and
    ``metrics_`` the per-epoch evaluation log.
    """

    def __init__(
        self,
        mode: str = "cl_kl",
        hidden_size: int = 16,
        hash_dims: int = 4096,
        window: int = 2,
        char_ngrams: tuple[int, ...] = (3,),
        hash_seed: int = 17,
        context_cooccurrence: bool = True,
        encoder_lr: float = 5e-6,
        crf_lr: float = 0.05,
        batch_size: int = 4,
        epochs: int = 10,
        weight_decay: float = 0.0,
        unlabeled_ratio: str = "1:1",
        sep_token: str = "[SEP]",
        max_view_len: int = 510,
        bio_mask: bool = False,
        seed: int = 0,
    ):
        self.mode = mode
        self.hidden_size = hidden_size
        self.hash_dims = hash_dims
        self.window = window
        self.char_ngrams = char_ngrams
        self.hash_seed = hash_seed
        self.context_cooccurrence = context_cooccurrence
        self.encoder_lr = encoder_lr
        self.crf_lr = crf_lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.weight_decay = weight_decay
        self.unlabeled_ratio = unlabeled_ratio
        self.sep_token = sep_token
        self.max_view_len = max_view_len
        self.bio_mask = bio_mask
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            mode=self.mode,
            encoder_lr=self.encoder_lr,
            crf_lr=self.crf_lr,
            batch_size=self.batch_size,
            epochs=self.epochs,
            weight_decay=self.weight_decay,
            seed=self.seed,
            unlabeled_ratio=self.unlabeled_ratio,
            hidden_size=self.hidden_size,
            hash_spec=HashFeatureSpec(
                dims=self.hash_dims,
                window=self.window,
                char_ngrams=tuple(self.char_ngrams),
                hash_seed=self.hash_seed,
                context_cooccurrence=self.context_cooccurrence,
            ),
            sep_token=self.sep_token,
            max_view_len=self.max_view_len,
            bio_mask=self.bio_mask,
        )

    def _dataset(self, X, y, split, start=0):
        sentences = []
        label_order: dict[str, None] = {}
        for i, tokens in enumerate(X):
            labels = None
            if y is not None:
                labels = tuple(y[i])
                if len(labels) != len(tokens):
                    raise DataError(
                        f"y[{i}] has {len(labels)} tags for {len(tokens)} tokens"
                    )
                for lb in labels:
                    label_order.setdefault(lb, None)
            sentences.append(
                LabeledSentence(
                    id=f"{split}-{start + i}",
                    tokens=tokens_from_strings(tokens),
                    labels=labels,
                )
            )
        return Dataset(
            split=split, sentences=tuple(sentences), label_set=tuple(label_order)
        ), list(label_order)

    def _bundles(self, dataset, contexts):
        if contexts is None:
            return {}
        bundles = {}
        for sent, texts in zip(dataset.sentences, contexts):
            items = [(text, 1.0 / (1 + rank)) for rank, text in enumerate(texts)]
            bundles[sent.id] = bundle_from_dump_entry(
                items, len(sent), self.sep_token, self.max_view_len
            )
        return bundles

    def fit(
        self,
        X,
        y,
        contexts=None,
        dev: Optional[tuple] = None,
        unlabeled=None,
        unlabeled_contexts=None,
    ):
        """Train on token sequences ``X`` with tag sequences ``y``.

        ``contexts`` is an aligned sequence of lists of retrieved texts.
        ``dev`` is an optional ``(X, y)`` or ``(X, y, contexts)`` tuple used
        for checkpoint selection; by default the training data is reused.
        ``unlabeled`` (with ``unlabeled_contexts``) enables the alternating
        semi-supervised schedule under a consistency mode.
        """
        _validate_tokens(X)
        _validate_aligned(X, y, "y")
        _validate_aligned(X, contexts, "contexts")
        train_set, _ = self._dataset(X, y, "train")
        bundles = self._bundles(train_set, contexts)

        if dev is not None:
            dev_x, dev_y = dev[0], dev[1]
            _validate_tokens(dev_x, "dev X")
            dev_set, _ = self._dataset(dev_x, dev_y, "dev")
            dev_contexts = dev[2] if len(dev) > 2 else None
            _validate_aligned(dev_x, dev_contexts, "dev contexts")
            bundles.update(self._bundles(dev_set, dev_contexts))
        else:
            dev_set = Dataset(
                split="dev", sentences=tuple(
                    LabeledSentence(id=s.id.replace("train-", "dev-", 1),
                                    tokens=s.tokens, labels=s.labels)
                    for s in train_set.sentences
                ), label_set=train_set.label_set,
            )
            for s, d in zip(train_set.sentences, dev_set.sentences):
                if s.id in bundles:
                    bundles[d.id] = bundles[s.id]

        unl_set = None
        if unlabeled is not None:
            _validate_tokens(unlabeled, "unlabeled")
            unl_set, _ = self._dataset(unlabeled, None, "unlabeled")
            _validate_aligned(unlabeled, unlabeled_contexts, "unlabeled contexts")
            bundles.update(self._bundles(unl_set, unlabeled_contexts))

        result = train(
            train_set,
            dev_set,
            contexts=bundles if (contexts is not None or self.mode != "wo_context") else None,
            unlabeled=unl_set,
            config=self._train_config(),
        )
        self.checkpoint_ = result.checkpoint
        self.metrics_ = result.metrics
        self.labels_ = list(result.checkpoint.labels)
        return self

    def _check_fitted(self):
        if not hasattr(self, "checkpoint_"):
            raise DataError("estimator is not fitted; call fit first")

    def predict(self, X, contexts=None):
        """Tag sequences for ``X``; uses the context view when contexts given."""
        self._check_fitted()
        _validate_tokens(X)
        _validate_aligned(X, contexts, "contexts")
        dataset, _ = self._dataset(X, None, "test")
        view = "w_context" if contexts is not None else "wo_context"
        bundles = self._bundles(dataset, contexts) if contexts is not None else None
        return predict_labels(
            dataset, bundles, self.checkpoint_, view, bio_mask=self.bio_mask
        )

    def score(self, X, y, contexts=None) -> float:
        """Entity-level micro F1 on exact span matches."""
        self._check_fitted()
        preds = self.predict(X, contexts=contexts)
        return entity_f1([list(tags) for tags in y], preds)["f1"]

    def evaluate(self, X, y, contexts=None) -> dict[str, float]:
        """Full precision/recall/F1 record under the matching view."""
        self._check_fitted()
        _validate_tokens(X)
        dataset, _ = self._dataset(X, y, "test")
        view = "w_context" if contexts is not None else "wo_context"
        bundles = self._bundles(dataset, contexts) if contexts is not None else None
        return evaluate(dataset, bundles, self.checkpoint_, view, bio_mask=self.bio_mask)
