"""Retrieval-augmented sequence labeling with cooperative two-view training.

The pipeline: retrieve texts related to a sentence through a search service,
re-rank them by greedy token-matching similarity, concatenate the top ones
into a context-augmented view, tag with a linear-chain CRF over hashed
features, and train one model so that both the bare and the augmented view
predict well, optionally exploiting unlabeled text.
"""

from .corpus import (
    Dataset,
    EntitySpan,
    LabeledSentence,
    Token,
    entity_f1,
    extract_spans,
    read_conll,
    write_conll,
)
from .crf import (
    CrfParams,
    MarginalTable,
    ScoreLattice,
    log_partition,
    marginals,
    nll,
    score_lattice,
    viterbi,
)
from .encoder import (
    EmbeddingMatrix,
    EncoderParams,
    HashFeatureSpec,
    encode,
    featurize,
    load_embedding_dump,
)
from .errors import ConfigError, CoopnerError, DataError, ServiceError
from .estimator import CooperativeTagger
from .reranker import (
    ContextBundle,
    IdfTable,
    ScoredText,
    assemble_context,
    bertscore,
    bertscore_idf,
    fuzzy_match,
    rank_and_select,
)
from .retrieval import (
    RetrievalConfig,
    RetrievedText,
    SearchResult,
    chunk_query,
    document_contexts,
    leak_filter,
    random_contexts,
    result_to_text,
    retrieve,
)
from .trainer import (
    Checkpoint,
    LossReport,
    TrainConfig,
    cl_kl_loss,
    cl_l2_loss,
    evaluate,
    load_checkpoint,
    predict_labels,
    save_checkpoint,
    total_loss,
    train,
    unlabeled_step,
)

__version__ = "0.1.0"
