"""Linear-chain CRF in log space: likelihood, marginals, decoding, gradients.

Scores decompose per position into an emission term (label weight vector
dotted with the token representation) and a transition term from the previous
label, with a dedicated start row standing in for the label before the first
position.  The path score of ``y`` is ``sum_i trans[y_{i-1}, y_i] +
emit[i, y_i]`` and all quantities below are normalized sums over the ``t^n``
paths, computed with forward/backward recursions under log-sum-exp.

Every gradient here is exact (expected counts, or reverse-mode through the
forward-backward recursions) and is validated against brute-force path
enumeration and finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError


def logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    """Stable log(sum(exp(a))) along ``axis``; tolerates all -inf slices."""
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())


def softmax(a: np.ndarray, axis=-1) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    e = np.exp(a - np.where(np.isfinite(m), m, 0.0))
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass
class CrfParams:
    """Emission matrix (t, d) and transition table (t+1, t); row t is the start row."""

    emission: np.ndarray
    transition: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        self.emission = np.asarray(self.emission, dtype=np.float64)
        self.transition = np.asarray(self.transition, dtype=np.float64)
        t = len(self.labels)
        if self.emission.ndim != 2 or self.emission.shape[0] != t:
            raise ConfigError(
                f"emission must be ({t}, d), got {self.emission.shape}"
            )
        if self.transition.shape != (t + 1, t):
            raise ConfigError(
                f"transition must be ({t + 1}, {t}), got {self.transition.shape}"
            )
        if not (np.isfinite(self.emission).all() and np.isfinite(self.transition).all()):
            raise ConfigError("CRF parameters must be finite")

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    @property
    def hidden_size(self) -> int:
        return self.emission.shape[1]

    @classmethod
    def init(cls, labels, hidden_size, rng, scale=0.1) -> "CrfParams":
        t = len(labels)
        return cls(
            emission=rng.normal(0.0, scale, size=(t, hidden_size)),
            transition=np.zeros((t + 1, t)),
            labels=tuple(labels),
        )


@dataclass
class ScoreLattice:
    """Per-position emission scores (n, t) plus the transition table (t+1, t)."""

    emit_scores: np.ndarray
    trans_scores: np.ndarray

    def __post_init__(self):
        self.emit_scores = np.asarray(self.emit_scores, dtype=np.float64)
        self.trans_scores = np.asarray(self.trans_scores, dtype=np.float64)
        n, t = self.emit_scores.shape
        if n < 1 or self.trans_scores.shape != (t + 1, t):
            raise ConfigError(
                f"lattice shapes disagree: emit {self.emit_scores.shape}, "
                f"trans {self.trans_scores.shape}"
            )

    @property
    def n(self) -> int:
        return self.emit_scores.shape[0]

    @property
    def t(self) -> int:
        return self.emit_scores.shape[1]


@dataclass
class MarginalTable:
    """Per-position posterior label probabilities, shape (n, t)."""

    q: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)

    def to_lists(self) -> list[list[float]]:
        return [[float(v) for v in row] for row in self.q]


def score_lattice(V: np.ndarray, params: CrfParams) -> ScoreLattice:
    """Emission scores for every (position, label) pair plus the transition table."""
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[1] != params.hidden_size:
        raise ConfigError(
            f"embeddings ({V.shape}) do not match hidden size {params.hidden_size}"
        )
    return ScoreLattice(
        emit_scores=V @ params.emission.T,
        trans_scores=params.transition.copy(),
    )


def _forward(lattice: ScoreLattice) -> np.ndarray:
    """Log forward messages la[i, y] = log sum over prefixes ending in y at i."""
    emit, trans = lattice.emit_scores, lattice.trans_scores
    n, t = emit.shape
    la = np.empty((n, t))
    la[0] = trans[t] + emit[0]
    for i in range(1, n):
        # la[i-1, y'] + trans[y', y], reduced over y'
        la[i] = emit[i] + logsumexp(la[i - 1][:, None] + trans[:t], axis=0)
    return la


def _backward(lattice: ScoreLattice) -> np.ndarray:
    """Log backward messages lb[i, y] = log sum over suffixes after i given y."""
    emit, trans = lattice.emit_scores, lattice.trans_scores
    n, t = emit.shape
    lb = np.zeros((n, t))
    for i in range(n - 2, -1, -1):
        lb[i] = logsumexp(trans[:t] + (emit[i + 1] + lb[i + 1])[None, :], axis=1)
    return lb


def forward_backward(lattice: ScoreLattice) -> tuple[np.ndarray, np.ndarray, float]:
    """Both message tables plus the log partition, computed once.

    Callers that need several posterior quantities share these instead of
    re-running the recursions.
    """
    la = _forward(lattice)
    lb = _backward(lattice)
    return la, lb, float(logsumexp(la[-1]))


def log_partition(lattice: ScoreLattice) -> float:
    """log of the summed exp path scores over all t^n label sequences."""
    return float(logsumexp(_forward(lattice)[-1]))


def gold_path_score(lattice: ScoreLattice, gold) -> float:
    emit, trans = lattice.emit_scores, lattice.trans_scores
    n, t = emit.shape
    gold = _check_gold(gold, n, t)
    score = trans[t, gold[0]] + emit[0, gold[0]]
    for i in range(1, n):
        score += trans[gold[i - 1], gold[i]] + emit[i, gold[i]]
    return float(score)


def _check_gold(gold, n: int, t: int) -> np.ndarray:
    gold = np.asarray(gold, dtype=np.intp)
    if gold.shape != (n,):
        raise DataError(f"gold labels have shape {gold.shape}, expected ({n},)")
    if gold.min() < 0 or gold.max() >= t:
        raise DataError(f"gold label index out of range [0, {t})")
    return gold


def nll(lattice: ScoreLattice, gold) -> float:
    """Negative log-probability of the gold path; >= 0 up to rounding."""
    return log_partition(lattice) - gold_path_score(lattice, gold)


def marginals(lattice: ScoreLattice) -> MarginalTable:
    """Per-position posteriors via forward-backward, exponentiated at the end."""
    la = _forward(lattice)
    lb = _backward(lattice)
    log_z = logsumexp(la[-1])
    return MarginalTable(q=np.exp(la + lb - log_z))


def log_marginals(lattice: ScoreLattice) -> np.ndarray:
    la = _forward(lattice)
    lb = _backward(lattice)
    return la + lb - logsumexp(la[-1])


def pairwise_marginals(lattice: ScoreLattice) -> np.ndarray:
    """Joint posteriors P(y_i = a, y_{i+1} = b), shape (n-1, t, t)."""
    emit, trans = lattice.emit_scores, lattice.trans_scores
    n, t = emit.shape
    la = _forward(lattice)
    lb = _backward(lattice)
    log_z = logsumexp(la[-1])
    pair = np.empty((max(n - 1, 0), t, t))
    for i in range(n - 1):
        pair[i] = np.exp(
            la[i][:, None] + trans[:t] + (emit[i + 1] + lb[i + 1])[None, :] - log_z
        )
    return pair


def expected_transition_counts(lattice: ScoreLattice) -> np.ndarray:
    """Expected use count of every transition cell, including the start row."""
    n, t = lattice.emit_scores.shape
    counts = np.zeros((t + 1, t))
    q = marginals(lattice).q
    counts[t] = q[0]
    if n > 1:
        counts[:t] = pairwise_marginals(lattice).sum(axis=0)
    return counts


def viterbi(lattice: ScoreLattice) -> list[int]:
    """Highest-scoring label sequence; ties resolve to the lower label index."""
    emit, trans = lattice.emit_scores, lattice.trans_scores
    n, t = emit.shape
    score = trans[t] + emit[0]
    back = np.zeros((n, t), dtype=np.intp)
    for i in range(1, n):
        cand = score[:, None] + trans[:t]  # (prev, cur)
        back[i] = np.argmax(cand, axis=0)
        score = cand[back[i], np.arange(t)] + emit[i]
    path = [int(np.argmax(score))]
    for i in range(n - 1, 0, -1):
        path.append(int(back[i, path[-1]]))
    path.reverse()
    return path


def viterbi_score(lattice: ScoreLattice) -> float:
    return gold_path_score(lattice, viterbi(lattice))


def nll_with_backward(
    lattice: ScoreLattice, gold
) -> tuple[float, np.ndarray, np.ndarray]:
    """The nll value and its exact lattice-score gradients in one DP pass.

    Gradient = expected counts minus gold counts, with the expected pairwise
    counts assembled from shared forward/backward messages.
    """
    emit, trans = lattice.emit_scores, lattice.trans_scores
    n, t = emit.shape
    gold = _check_gold(gold, n, t)
    la, lb, log_z = forward_backward(lattice)
    value = log_z - gold_path_score(lattice, gold)

    d_emit = np.exp(la + lb - log_z)
    d_emit[np.arange(n), gold] -= 1.0

    d_trans = np.zeros((t + 1, t))
    d_trans[t] = np.exp(la[0] + lb[0] - log_z)
    for i in range(1, n):
        d_trans[:t] += np.exp(
            la[i - 1][:, None] + trans[:t] + (emit[i] + lb[i])[None, :] - log_z
        )
    d_trans[t, gold[0]] -= 1.0
    for i in range(1, n):
        d_trans[gold[i - 1], gold[i]] -= 1.0
    return float(value), d_emit, d_trans


def nll_backward(lattice: ScoreLattice, gold) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of nll w.r.t. lattice scores: expected counts minus gold counts."""
    _, d_emit, d_trans = nll_with_backward(lattice, gold)
    return d_emit, d_trans


def log_marginals_vjp(
    lattice: ScoreLattice,
    upstream: np.ndarray,
    messages: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact vector-Jacobian product of the log-marginals.

    Given ``upstream[i, y] = dL/d log q[i, y]`` this reverse-modes through the
    forward-backward recursions and returns (dL/d emit_scores,
    dL/d trans_scores).  It is the gradient engine for losses defined on
    marginal distributions, such as the cross-view distillation term.
    ``messages`` lets callers pass already-computed (forward, backward)
    tables.
    """
    emit, trans = lattice.emit_scores, lattice.trans_scores
    n, t = emit.shape
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (n, t):
        raise ConfigError(f"upstream has shape {upstream.shape}, expected ({n}, {t})")

    la, lb = messages if messages is not None else (_forward(lattice), _backward(lattice))

    d_emit = np.zeros((n, t))
    d_trans = np.zeros((t + 1, t))
    # log q[i] = la[i] + lb[i] - logZ
    d_la = upstream.copy()
    d_lb = upstream.copy()
    d_logz = -float(upstream.sum())
    # logZ = LSE_y la[n-1, y]
    d_la[n - 1] += d_logz * softmax(la[n - 1])

    # lb[i] = LSE_{y'}(trans[y, y'] + emit[i+1, y'] + lb[i+1, y']), i = n-2..0;
    # adjoints propagate in increasing i so d_lb[i] is complete when consumed.
    for i in range(0, n - 1):
        m2 = trans[:t] + (emit[i + 1] + lb[i + 1])[None, :]
        s2 = d_lb[i][:, None] * softmax(m2, axis=1)
        d_trans[:t] += s2
        col = s2.sum(axis=0)
        d_emit[i + 1] += col
        d_lb[i + 1] += col

    # la[i] = emit[i] + LSE_{y'}(la[i-1, y'] + trans[y', y]), i = 1..n-1;
    # adjoints propagate in decreasing i.
    for i in range(n - 1, 0, -1):
        d_emit[i] += d_la[i]
        m1 = la[i - 1][:, None] + trans[:t]
        s1 = softmax(m1, axis=0) * d_la[i][None, :]
        d_trans[:t] += s1
        d_la[i - 1] += s1.sum(axis=1)

    # la[0] = trans[start] + emit[0]
    d_emit[0] += d_la[0]
    d_trans[t] += d_la[0]
    return d_emit, d_trans


def bio_transition_penalties(labels, penalty: float = -1e4) -> np.ndarray:
    """Additive penalties forbidding I-T after anything but B-T/I-T.

    Returned table has the lattice transition shape (t+1, t) with 0 on allowed
    cells; add it to ``trans_scores`` to enforce BIO-consistent decoding.
    """
    t = len(labels)
    pen = np.zeros((t + 1, t))
    for j, dst in enumerate(labels):
        if not dst.startswith("I-"):
            continue
        etype = dst[2:]
        for i in range(t + 1):
            src = labels[i] if i < t else None  # row t is the start row
            if src is None or src not in (f"B-{etype}", f"I-{etype}"):
                pen[i, j] = penalty
    return pen
