"""Two-view training loop: label losses, consistency losses, evaluation.

One model is trained on two input views of each sentence: the bare token
sequence, and the same tokens conditioned on retrieved contexts.  Besides the
usual sequence negative log-likelihood on either view, a consistency term can
tie the views together, either as a squared distance between the two token
representation matrices or as a cross-entropy between the two sets of CRF
marginal distributions.  The context-conditioned side of the consistency term
is always treated as a constant teacher: its value depends on the retrieval
view but no gradient flows back through that path.  The retrieval view still
learns normally through its own label loss.

Semi-supervised training alternates labeled steps (full loss) with unlabeled
steps that minimize only the consistency term.
"""

from __future__ import annotations

import json
import random
import struct
from dataclasses import dataclass, field
from typing import IO, Optional

import numpy as np

from .corpus import Dataset, LabeledSentence, entity_f1
from .crf import (
    CrfParams,
    MarginalTable,
    ScoreLattice,
    bio_transition_penalties,
    forward_backward,
    log_marginals_vjp,
    marginals,
    nll_with_backward,
    score_lattice,
    viterbi,
)
from .encoder import (
    EncoderParams,
    HashFeatureSpec,
    encode_backward,
    encode_features,
    featurize_sentence,
)
from .errors import ConfigError, DataError
from .optim import AdamW, clip_by_global_norm
from .reranker import (
    DEFAULT_MAX_VIEW_LEN,
    DEFAULT_SEP_TOKEN,
    ContextBundle,
    assemble_context,
    bundle_from_dump_entry,
    bundle_tokens,
)

MODES = ("wo_context", "w_context", "joint_no_cl", "cl_l2", "cl_kl", "cl_both")
CL_MODES = ("cl_l2", "cl_kl", "cl_both")
CONTEXT_MODES = ("w_context", "joint_no_cl", "cl_l2", "cl_kl", "cl_both")
VIEW_WO, VIEW_W = "wo_context", "w_context"

_CL_KIND = {
    "wo_context": "none",
    "w_context": "none",
    "joint_no_cl": "none",
    "cl_l2": "l2",
    "cl_kl": "kl",
    "cl_both": "l2+kl",
}


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "cl_kl"
    encoder_lr: float = 5e-6
    crf_lr: float = 0.05
    batch_size: int = 4
    epochs: int = 10
    weight_decay: float = 0.0
    seed: int = 0
    unlabeled_ratio: str = "1:1"
    hidden_size: int = 16
    init_scale: float = 0.1
    hash_spec: HashFeatureSpec = field(default_factory=HashFeatureSpec)
    sep_token: str = DEFAULT_SEP_TOKEN
    max_view_len: int = DEFAULT_MAX_VIEW_LEN
    clip_norm: Optional[float] = None
    strict_contexts: bool = False
    bio_mask: bool = False
    # optional component weights; the defaults leave the plain summed loss
    weight_nll: float = 1.0
    weight_nll_ext: float = 1.0
    weight_cl: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose one of {MODES}")
        if self.encoder_lr <= 0 or self.crf_lr <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        self.ratio  # validate eagerly

    @property
    def ratio(self) -> tuple[int, int]:
        try:
            a, b = (int(x) for x in self.unlabeled_ratio.split(":"))
        except ValueError:
            raise ConfigError(f"bad alternation ratio {self.unlabeled_ratio!r}")
        if a < 1 or b < 1:
            raise ConfigError("alternation ratio parts must be >= 1")
        return a, b

    def to_dict(self) -> dict:
        d = {
            k: getattr(self, k)
            for k in (
                "mode", "encoder_lr", "crf_lr", "batch_size", "epochs",
                "weight_decay", "seed", "unlabeled_ratio", "hidden_size",
                "init_scale", "sep_token", "max_view_len", "clip_norm",
                "strict_contexts", "bio_mask", "weight_nll", "weight_nll_ext",
                "weight_cl",
            )
        }
        d["hash_spec"] = self.hash_spec.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "hash_spec" in d:
            d["hash_spec"] = HashFeatureSpec.from_dict(d["hash_spec"])
        return cls(**d)


@dataclass
class LossReport:
    nll: float = 0.0
    nll_ext: float = 0.0
    cl: float = 0.0
    cl_kind: str = "none"
    total: float = 0.0
    cl_l2: float = 0.0
    cl_kl: float = 0.0

    def as_dict(self) -> dict:
        return {
            "nll": self.nll,
            "nll_ext": self.nll_ext,
            "cl": self.cl,
            "cl_kind": self.cl_kind,
            "total": self.total,
        }


@dataclass(frozen=True)
class ViewPair:
    """Aligned representation matrices of the two views, (n, d) each."""

    V: np.ndarray
    V_ext: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "V", np.asarray(self.V, dtype=np.float64))
        object.__setattr__(self, "V_ext", np.asarray(self.V_ext, dtype=np.float64))
        if self.V.shape != self.V_ext.shape:
            raise ConfigError(
                f"view shapes differ: {self.V.shape} vs {self.V_ext.shape}"
            )


@dataclass(frozen=True)
class TeacherSignals:
    """Externally fixed teacher quantities for the consistency losses.

    When absent, the teacher defaults to the model's own retrieval view at
    the current parameters.  Supplying them explicitly makes the
    stop-gradient semantics literal (the teacher is a constant) and allows
    distilling from an entirely separate model.
    """

    V_ext: Optional[np.ndarray] = None
    marginals: Optional[MarginalTable] = None


def cl_l2_loss(pair: ViewPair) -> tuple[float, np.ndarray]:
    """Squared distance between views; gradient flows to the plain view only.

    The retrieval-view matrix acts as the constant teacher, so the returned
    gradient is d loss / d V and there is deliberately no V_ext gradient.
    """
    diff = pair.V - pair.V_ext
    return float((diff * diff).sum()), 2.0 * diff


def cl_kl_loss(
    teacher: MarginalTable, student_lattice: ScoreLattice
) -> tuple[float, np.ndarray, np.ndarray]:
    """Cross-entropy from constant teacher marginals to student marginals.

    Minimizing this equals minimizing the per-position KL divergence because
    the teacher entropy is constant under the stop-gradient contract.
    Returns (loss, d emit_scores, d trans_scores) on the student lattice.
    """
    q = np.asarray(teacher.q, dtype=np.float64)
    n, t = student_lattice.emit_scores.shape
    if q.shape != (n, t):
        raise ConfigError(f"teacher shape {q.shape} does not match lattice ({n}, {t})")
    sums = q.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-6:
        raise DataError("teacher marginal rows must sum to 1 within 1e-6")
    la, lb, log_z = forward_backward(student_lattice)
    lq = la + lb - log_z
    loss = float(-(q * lq).sum())
    d_emit, d_trans = log_marginals_vjp(student_lattice, -q, messages=(la, lb))
    return loss, d_emit, d_trans


def zero_grads(enc: EncoderParams, crf: CrfParams) -> dict[str, np.ndarray]:
    return {
        "projection": np.zeros_like(enc.projection),
        "emission": np.zeros_like(crf.emission),
        "transition": np.zeros_like(crf.transition),
    }


class _SentenceState:
    """Cached pure per-sentence quantities: features/frozen rows, gold indices.

    With an embedding dump the representations are fixed inputs instead of
    hashed features, and the encoder gets no gradient.
    """

    def __init__(self, sentence, bundle, crf_labels, spec, need_gold, embeddings=None):
        self.sentence = sentence
        self.feats_o = self.feats_e = None
        self.frozen_V = self.frozen_V_ext = None
        if embeddings is not None:
            key = (sentence.id, "original")
            if key not in embeddings:
                raise DataError(f"embedding dump has no entry for {key}")
            self.frozen_V = embeddings[key].rows
            ext = embeddings.get((sentence.id, "retrieval"))
            if ext is not None:
                if ext.rows.shape != self.frozen_V.shape:
                    raise DataError(
                        f"embedding views disagree in shape for {sentence.id!r}"
                    )
                self.frozen_V_ext = ext.rows
        else:
            self.feats_o = featurize_sentence(sentence.tokens, None, spec)
            ctx = bundle_tokens(bundle) if bundle is not None else None
            if ctx is not None:
                self.feats_e = featurize_sentence(sentence.tokens, ctx, spec)
        self.gold = None
        if need_gold:
            if sentence.labels is None:
                raise DataError(f"sentence {sentence.id!r} has no labels")
            index = {lb: i for i, lb in enumerate(crf_labels)}
            unknown = [lb for lb in sentence.labels if lb not in index]
            if unknown:
                raise DataError(
                    f"sentence {sentence.id!r} uses labels unknown to the model: {unknown}"
                )
            self.gold = np.array([index[lb] for lb in sentence.labels], dtype=np.intp)

    @property
    def has_ext_view(self) -> bool:
        return self.feats_e is not None or self.frozen_V_ext is not None


def _lattice(V, crf, bio_pen):
    lat = score_lattice(V, crf)
    if bio_pen is not None:
        lat.trans_scores += bio_pen
    return lat


def _loss_and_grads(
    state: _SentenceState,
    enc: EncoderParams,
    crf: CrfParams,
    config: TrainConfig,
    labeled: bool,
    teacher: Optional[TeacherSignals] = None,
) -> tuple[LossReport, dict[str, np.ndarray]]:
    mode = config.mode
    needs_ctx = mode in CONTEXT_MODES
    if needs_ctx and not state.has_ext_view:
        raise ConfigError(f"mode {mode!r} requires a context bundle")
    bio_pen = bio_transition_penalties(crf.labels) if config.bio_mask else None
    frozen = state.frozen_V is not None

    report = LossReport(cl_kind=_CL_KIND[mode])
    grads = zero_grads(enc, crf)
    W = crf.emission

    V = state.frozen_V if frozen else encode_features(state.feats_o, enc)
    dV = np.zeros_like(V)
    lat_o = _lattice(V, crf, bio_pen) if (labeled or mode in CL_MODES) else None

    V_ext = dV_ext = lat_e = None
    if needs_ctx:
        V_ext = state.frozen_V_ext if frozen else encode_features(state.feats_e, enc)
        dV_ext = np.zeros_like(V_ext)
        lat_e = _lattice(V_ext, crf, bio_pen)

    if labeled and mode != "w_context":
        w = config.weight_nll
        value, d_emit, d_trans = nll_with_backward(lat_o, state.gold)
        report.nll = w * value
        grads["emission"] += w * (d_emit.T @ V)
        grads["transition"] += w * d_trans
        dV += w * (d_emit @ W)

    if labeled and mode != "wo_context":
        w = config.weight_nll_ext
        value, d_emit, d_trans = nll_with_backward(lat_e, state.gold)
        report.nll_ext = w * value
        grads["emission"] += w * (d_emit.T @ V_ext)
        grads["transition"] += w * d_trans
        dV_ext += w * (d_emit @ W)

    if mode in ("cl_l2", "cl_both"):
        w = config.weight_cl
        ref = V_ext
        if teacher is not None and teacher.V_ext is not None:
            ref = teacher.V_ext
        value, g = cl_l2_loss(ViewPair(V=V, V_ext=ref))
        report.cl_l2 = w * value
        dV += w * g

    if mode in ("cl_kl", "cl_both"):
        w = config.weight_cl
        t_marg = None
        if teacher is not None and teacher.marginals is not None:
            t_marg = teacher.marginals
        if t_marg is None:
            t_marg = marginals(lat_e)
        value, d_emit, d_trans = cl_kl_loss(t_marg, lat_o)
        report.cl_kl = w * value
        grads["emission"] += w * (d_emit.T @ V)
        grads["transition"] += w * d_trans
        dV += w * (d_emit @ W)

    if not frozen:
        if dV.any():
            grads["projection"] += encode_backward(state.feats_o, enc, dV)
        if dV_ext is not None and dV_ext.any():
            grads["projection"] += encode_backward(state.feats_e, enc, dV_ext)

    report.cl = report.cl_l2 + report.cl_kl
    report.total = report.nll + report.nll_ext + report.cl
    return report, grads


def total_loss(
    sentence: LabeledSentence,
    bundle: Optional[ContextBundle],
    enc: EncoderParams,
    crf: CrfParams,
    config: TrainConfig,
    teacher: Optional[TeacherSignals] = None,
) -> tuple[LossReport, dict[str, np.ndarray]]:
    """Supervised loss of one sentence under the configured mode, with gradients.

    Gradients cover all three parameter arrays and respect the stop-gradient
    contract: consistency terms never differentiate through the
    context-conditioned teacher, while the retrieval view's own label loss
    updates everything it touches.
    """
    state = _SentenceState(sentence, bundle, crf.labels, enc.spec, need_gold=True)
    return _loss_and_grads(state, enc, crf, config, labeled=True, teacher=teacher)


def unlabeled_step(
    sentence: LabeledSentence,
    bundle: Optional[ContextBundle],
    enc: EncoderParams,
    crf: CrfParams,
    config: TrainConfig,
    teacher: Optional[TeacherSignals] = None,
) -> tuple[LossReport, dict[str, np.ndarray]]:
    """Consistency-only loss for a sentence without labels."""
    if config.mode not in CL_MODES:
        raise ConfigError(f"unlabeled steps require a CL mode, not {config.mode!r}")
    state = _SentenceState(sentence, bundle, crf.labels, enc.spec, need_gold=False)
    return _loss_and_grads(state, enc, crf, config, labeled=False, teacher=teacher)


@dataclass
class Checkpoint:
    """Model parameters plus everything needed to reload them bit-exactly."""

    encoder: EncoderParams
    crf: CrfParams
    config: dict

    @property
    def labels(self) -> tuple[str, ...]:
        return self.crf.labels


CHECKPOINT_MAGIC = b"CPNR"
CHECKPOINT_VERSION = 1


def save_checkpoint(sink: IO, checkpoint: Checkpoint) -> None:
    """Binary container: magic, version byte, JSON header, raw float64 arrays."""
    arrays = [
        ("projection", checkpoint.encoder.projection),
        ("emission", checkpoint.crf.emission),
        ("transition", checkpoint.crf.transition),
    ]
    header = {
        "labels": list(checkpoint.crf.labels),
        "hash_spec": checkpoint.encoder.spec.to_dict(),
        "config": checkpoint.config,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    sink.write(CHECKPOINT_MAGIC)
    sink.write(bytes([CHECKPOINT_VERSION]))
    sink.write(struct.pack("<Q", len(blob)))
    sink.write(blob)
    for _, arr in arrays:
        sink.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(source: IO) -> Checkpoint:
    magic = source.read(4)
    if magic != CHECKPOINT_MAGIC:
        raise DataError(f"not a checkpoint file (magic {magic!r})")
    version = source.read(1)
    if version != bytes([CHECKPOINT_VERSION]):
        raise DataError(f"unsupported checkpoint version {version!r}")
    (blob_len,) = struct.unpack("<Q", source.read(8))
    header = json.loads(source.read(blob_len).decode("utf-8"))
    arrays = {}
    for meta in header["arrays"]:
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        buf = source.read(8 * count)
        arrays[meta["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    spec = HashFeatureSpec.from_dict(header["hash_spec"])
    enc = EncoderParams(projection=arrays["projection"], spec=spec)
    crf = CrfParams(
        emission=arrays["emission"],
        transition=arrays["transition"],
        labels=tuple(header["labels"]),
    )
    return Checkpoint(encoder=enc, crf=crf, config=header["config"])


def build_bundles(
    dataset: Dataset,
    dumped: dict[str, list[tuple[str, float]]],
    config: TrainConfig,
) -> dict[str, ContextBundle]:
    """Assemble per-sentence bundles from dumped (text, f1) context lists.

    Sentences without a dump entry get an empty bundle unless strict context
    coverage is requested.
    """
    bundles = {}
    for sent in dataset.sentences:
        if sent.id in dumped:
            bundles[sent.id] = bundle_from_dump_entry(
                dumped[sent.id], len(sent), config.sep_token, config.max_view_len
            )
        elif config.strict_contexts:
            raise DataError(f"no contexts for sentence {sent.id!r} in strict mode")
        else:
            bundles[sent.id] = assemble_context(
                [], len(sent), config.sep_token, config.max_view_len
            )
    return bundles


def predict_labels(
    dataset: Dataset,
    bundles: Optional[dict[str, ContextBundle]],
    checkpoint: Checkpoint,
    view: str,
    bio_mask: bool = False,
    embeddings=None,
) -> list[list[str]]:
    """Viterbi tag sequences for every sentence under the requested view.

    With ``embeddings`` (a loaded dump) the representations come from the
    dump's matching view instead of the hashed encoder.
    """
    if view not in (VIEW_WO, VIEW_W):
        raise ConfigError(f"view must be {VIEW_WO!r} or {VIEW_W!r}, got {view!r}")
    if view == VIEW_W and bundles is None and embeddings is None:
        raise ConfigError("w_context evaluation requires context bundles")
    enc, crf = checkpoint.encoder, checkpoint.crf
    bio_pen = bio_transition_penalties(crf.labels) if bio_mask else None
    out = []
    for sent in dataset.sentences:
        if embeddings is not None:
            key = (sent.id, "retrieval" if view == VIEW_W else "original")
            if key not in embeddings:
                raise DataError(f"embedding dump has no entry for {key}")
            V = embeddings[key].rows
        else:
            ctx = None
            if view == VIEW_W:
                bundle = bundles.get(sent.id)
                if bundle is None:
                    bundle = assemble_context([], len(sent))
                ctx = bundle_tokens(bundle)
            feats = featurize_sentence(sent.tokens, ctx, enc.spec)
            V = encode_features(feats, enc)
        lat = _lattice(V, crf, bio_pen)
        path = viterbi(lat)
        out.append([crf.labels[y] for y in path])
    return out


def evaluate(
    dataset: Dataset,
    bundles: Optional[dict[str, ContextBundle]],
    checkpoint: Checkpoint,
    view: str,
    bio_mask: bool = False,
    embeddings=None,
) -> dict[str, float]:
    """Entity-level P/R/F1 of Viterbi predictions under one view.

    Works on any dataset whose labels are covered by the checkpoint, which is
    all cross-domain transfer amounts to.
    """
    known = set(checkpoint.labels)
    unknown = sorted(
        {lb for s in dataset.sentences for lb in (s.labels or ()) if lb not in known}
    )
    if unknown:
        raise DataError(f"dataset uses labels unknown to the checkpoint: {unknown}")
    gold = []
    for sent in dataset.sentences:
        if sent.labels is None:
            raise DataError(f"sentence {sent.id!r} has no gold labels to score")
        gold.append(list(sent.labels))
    pred = predict_labels(dataset, bundles, checkpoint, view, bio_mask, embeddings)
    return entity_f1(gold, pred)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list[dict]


def _batches(indices: list[int], size: int) -> list[list[int]]:
    return [indices[k : k + size] for k in range(0, len(indices), size)]


def train(
    train_set: Dataset,
    dev_set: Dataset,
    contexts: Optional[dict[str, ContextBundle]] = None,
    unlabeled: Optional[Dataset] = None,
    config: TrainConfig = TrainConfig(),
    metrics_sink: Optional[IO] = None,
    embeddings=None,
) -> TrainResult:
    """Train under the configured mode and keep the best-dev checkpoint.

    ``contexts`` maps sentence ids (train, dev and unlabeled) to bundles.
    Labeled and unlabeled batches alternate by the configured ratio, with
    unlabeled batches cycling within an epoch to fill the schedule.  Both
    views are evaluated on dev each epoch when contexts are available; model
    selection uses the retrieval view for pure context training and the
    original view otherwise.  ``embeddings`` (a loaded dump) switches to
    frozen externally computed representations.  Runs are bit-reproducible
    for a fixed seed.
    """
    if len(train_set) == 0:
        raise DataError("empty training set")
    if config.mode in CONTEXT_MODES and contexts is None and embeddings is None:
        raise ConfigError(f"mode {config.mode!r} requires contexts")
    if unlabeled is not None and config.mode not in CL_MODES:
        raise ConfigError("unlabeled data requires a CL mode")

    labels = train_set.label_set
    if not labels:
        raise DataError("training set has no labels")
    rng_np = np.random.default_rng(config.seed)
    rng_py = random.Random(config.seed)
    hidden = config.hidden_size
    if embeddings is not None:
        if not embeddings:
            raise DataError("embedding dump is empty")
        hidden = next(iter(embeddings.values())).d
    enc = EncoderParams.init(config.hash_spec, hidden, rng_np, config.init_scale)
    crf = CrfParams.init(labels, hidden, rng_np, config.init_scale)
    optimizer = AdamW(
        params={
            "projection": enc.projection,
            "emission": crf.emission,
            "transition": crf.transition,
        },
        learning_rates={
            "projection": config.encoder_lr,
            "emission": config.crf_lr,
            "transition": config.crf_lr,
        },
        weight_decay=config.weight_decay,
    )

    def bundle_for(sent):
        if contexts is None:
            return None
        bundle = contexts.get(sent.id)
        if bundle is None:
            if config.strict_contexts:
                raise DataError(f"no contexts for sentence {sent.id!r} in strict mode")
            bundle = assemble_context([], len(sent), config.sep_token, config.max_view_len)
        return bundle

    state_cache: dict[str, _SentenceState] = {}

    def state_for(sent, need_gold):
        st = state_cache.get(sent.id)
        if st is None or (need_gold and st.gold is None):
            st = _SentenceState(
                sent, bundle_for(sent), labels, config.hash_spec, need_gold,
                embeddings=embeddings,
            )
            state_cache[sent.id] = st
        return st

    def run_batch(sents, labeled):
        batch_grads = zero_grads(enc, crf)
        report_sum = LossReport(cl_kind=_CL_KIND[config.mode])
        for sent in sents:
            report, grads = _loss_and_grads(
                state_for(sent, labeled), enc, crf, config, labeled
            )
            for key in batch_grads:
                batch_grads[key] += grads[key]
            report_sum.nll += report.nll
            report_sum.nll_ext += report.nll_ext
            report_sum.cl_l2 += report.cl_l2
            report_sum.cl_kl += report.cl_kl
        scale = 1.0 / len(sents)
        for key in batch_grads:
            batch_grads[key] *= scale
        if config.clip_norm is not None:
            clip_by_global_norm(batch_grads, config.clip_norm)
        optimizer.step(batch_grads)
        report_sum.cl = report_sum.cl_l2 + report_sum.cl_kl
        report_sum.total = report_sum.nll + report_sum.nll_ext + report_sum.cl
        return report_sum, len(sents)

    selection_view = VIEW_W if config.mode == "w_context" else VIEW_WO
    metrics: list[dict] = []
    best_f1 = -1.0
    best = Checkpoint(
        encoder=EncoderParams(enc.projection.copy(), enc.spec),
        crf=CrfParams(crf.emission.copy(), crf.transition.copy(), crf.labels),
        config=config.to_dict(),
    )

    def emit(record):
        metrics.append(record)
        if metrics_sink is not None:
            metrics_sink.write(json.dumps(record, sort_keys=True) + "\n")

    for epoch in range(config.epochs):
        order = list(range(len(train_set)))
        rng_py.shuffle(order)
        labeled_batches = _batches(order, config.batch_size)

        unlabeled_batches: list[list[int]] = []
        if unlabeled is not None and len(unlabeled) > 0:
            uorder = list(range(len(unlabeled)))
            rng_py.shuffle(uorder)
            unlabeled_batches = _batches(uorder, config.batch_size)

        loss_totals: dict[str, float] = {"nll": 0.0, "nll_ext": 0.0, "cl": 0.0, "total": 0.0}
        labeled_count = 0
        a, b = config.ratio
        li, ui = 0, 0
        # pattern: a labeled batches, then b unlabeled ones, until labeled data
        # is exhausted; unlabeled batches cycle to fill the schedule
        while li < len(labeled_batches):
            for _ in range(a):
                if li >= len(labeled_batches):
                    break
                batch = [train_set.sentences[i] for i in labeled_batches[li]]
                report, n_sent = run_batch(batch, labeled=True)
                for key in loss_totals:
                    loss_totals[key] += getattr(report, key)
                labeled_count += n_sent
                li += 1
            for _ in range(b if unlabeled_batches else 0):
                batch_idx = unlabeled_batches[ui % len(unlabeled_batches)]
                batch = [unlabeled.sentences[i] for i in batch_idx]
                run_batch(batch, labeled=False)
                ui += 1

        mean = {k: (v / max(labeled_count, 1)) for k, v in loss_totals.items()}
        has_ext_eval = contexts is not None or (
            embeddings is not None
            and any(k[1] == "retrieval" for k in embeddings)
        )
        views = [VIEW_WO] + ([VIEW_W] if has_ext_eval else [])
        for view in views:
            scores = evaluate(dev_set, contexts, best_current(enc, crf, config), view,
                              bio_mask=config.bio_mask, embeddings=embeddings)
            emit(
                {
                    "epoch": epoch,
                    "split": "dev",
                    "view": view,
                    "precision": scores["precision"],
                    "recall": scores["recall"],
                    "f1": scores["f1"],
                    "loss_components": mean,
                }
            )
            if view == selection_view and scores["f1"] > best_f1:
                best_f1 = scores["f1"]
                best = Checkpoint(
                    encoder=EncoderParams(enc.projection.copy(), enc.spec),
                    crf=CrfParams(crf.emission.copy(), crf.transition.copy(), crf.labels),
                    config=config.to_dict(),
                )
    return TrainResult(checkpoint=best, metrics=metrics)


def best_current(enc: EncoderParams, crf: CrfParams, config: TrainConfig) -> Checkpoint:
    """Wrap live parameters as a checkpoint view without copying."""
    return Checkpoint(encoder=enc, crf=crf, config=config.to_dict())
