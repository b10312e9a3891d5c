"""Command-line entry point: retrieve, rerank, train, eval, predict, matrix.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 service error.
Every command is deterministic given identical inputs and seed, and re-running
overwrites its outputs with identical bytes.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .config import PRESETS, RunConfig, parse_config_text
from .corpus import read_conll, write_conll
from .crf import marginals, score_lattice
from .encoder import (
    EncoderParams,
    encode,
    encode_features,
    featurize_sentence,
    load_embedding_dump,
)
from .errors import ConfigError, DataError, ServiceError
from .reranker import (
    IdfTable,
    assemble_context,
    bertscore_scorer,
    bundle_tokens,
    engine_order_scorer,
    fuzzy_scorer,
    rank_and_select,
    read_context_dump,
    write_context_dump,
)
from .retrieval import (
    CachingSearchClient,
    FixtureSearchClient,
    HttpSearchClient,
    document_contexts,
    leak_filter,
    random_contexts,
    retrieve_all,
)
from .trainer import (
    build_bundles,
    evaluate,
    load_checkpoint,
    predict_labels,
    save_checkpoint,
    train,
)

MATRIX_MODES = ("wo_context", "w_context", "joint_no_cl", "cl_both", "cl_l2", "cl_kl")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are exit code 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise ConfigError(message)


# (flag, config key, metavar/choices note)
_FLAG_MAP = [
    ("--token-col", "corpus.token_col"),
    ("--label-col", "corpus.label_col"),
    ("--retrieval-fixture", "retrieval.fixture"),
    ("--endpoint", "retrieval.endpoint"),
    ("--k", "retrieval.k"),
    ("--query-word-limit", "retrieval.query_word_limit"),
    ("--leak-filter", "retrieval.leak_filter"),
    ("--leak-ngram", "retrieval.leak_ngram"),
    ("--parallelism", "retrieval.parallelism"),
    ("--timeout", "retrieval.timeout"),
    ("--context-source", "retrieval.context_source"),
    ("--doc-budget", "retrieval.doc_budget"),
    ("--scorer", "reranker.scorer"),
    ("--l", "reranker.l"),
    ("--sep-token", "reranker.sep_token"),
    ("--max-view-len", "reranker.max_view_len"),
    ("--encoder", "encoder.kind"),
    ("--hash-dims", "encoder.hash_dims"),
    ("--window", "encoder.window"),
    ("--char-ngrams", "encoder.char_ngrams"),
    ("--hash-seed", "encoder.hash_seed"),
    ("--cooccurrence", "encoder.cooccurrence"),
    ("--hidden", "encoder.hidden"),
    ("--embedding-dump", "encoder.embedding_dump"),
    ("--mode", "train.mode"),
    ("--encoder-lr", "train.encoder_lr"),
    ("--crf-lr", "train.crf_lr"),
    ("--batch-size", "train.batch_size"),
    ("--epochs", "train.epochs"),
    ("--weight-decay", "train.weight_decay"),
    ("--unlabeled-ratio", "train.unlabeled_ratio"),
    ("--init-scale", "train.init_scale"),
    ("--clip-norm", "train.clip_norm"),
    ("--strict-contexts", "train.strict_contexts"),
    ("--bio-mask", "train.bio_mask"),
    ("--seed", "seed"),
]


def _add_common(parser):
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--preset", help=f"named preset: {sorted(PRESETS)}")
    parser.add_argument("--out", help="output directory")
    for flag, key in _FLAG_MAP:
        parser.add_argument(flag, dest=key, default=None, metavar="V")


def build_parser() -> _Parser:
    parser = _Parser(prog="coopner", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("retrieve", parents=[], help="fetch, filter, rank and dump contexts")
    p.add_argument("--data", required=True, help="CoNLL dataset to retrieve contexts for")
    p.add_argument("--split", default="train")
    p.add_argument("--leak-data", action="append", default=[],
                   help="additional CoNLL files whose sentences must not leak")
    _add_common(p)

    p = sub.add_parser("rerank", help="re-rank cached retrievals with another scorer")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--leak-data", action="append", default=[])
    _add_common(p)

    p = sub.add_parser("train", help="train a tagger")
    p.add_argument("--data", required=True, help="training CoNLL file")
    p.add_argument("--dev", required=True, help="development CoNLL file")
    p.add_argument("--contexts", action="append", default=[],
                   help="context dump(s) covering train/dev/unlabeled ids")
    p.add_argument("--unlabeled", help="unlabeled CoNLL file (tokens only)")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--view", choices=("wo_context", "w_context"), default="wo_context")
    p.add_argument("--contexts", action="append", default=[])
    _add_common(p)

    p = sub.add_parser("predict", help="tag a dataset and emit CoNLL with predictions")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--view", choices=("wo_context", "w_context"), default="wo_context")
    p.add_argument("--contexts", action="append", default=[])
    p.add_argument("--dump-marginals", help="write per-sentence marginal tables here")
    _add_common(p)

    p = sub.add_parser("matrix", help="run an ablation grid of training modes")
    p.add_argument("--matrix", default="table5", choices=("table5",))
    p.add_argument("--data", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--contexts", action="append", default=[])
    _add_common(p)

    return parser


def _run_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        cfg.update(parse_config_text(path.read_text(encoding="utf-8")))
    if getattr(args, "preset", None):
        cfg.apply_preset(args.preset)
    overrides = {
        key: getattr(args, key)
        for _, key in _FLAG_MAP
        if getattr(args, key, None) is not None
    }
    cfg.update(overrides)
    return cfg


def _read_dataset(path, cfg, split):
    p = Path(path)
    if not p.exists():
        raise DataError(f"dataset file not found: {p}")
    with p.open("r", encoding="utf-8") as fh:
        return read_conll(
            fh,
            token_column=cfg["corpus.token_col"],
            label_column=cfg["corpus.label_col"],
            split=split,
        )


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_context_dumps(paths) -> dict:
    merged: dict = {}
    for path in paths:
        p = Path(path)
        if not p.exists():
            raise DataError(f"context dump not found: {p}")
        with p.open("r", encoding="utf-8") as fh:
            _, contexts = read_context_dump(fh)
        overlap = set(merged) & set(contexts)
        if overlap:
            raise DataError(f"duplicate sentence ids across context dumps: {sorted(overlap)[:5]}")
        merged.update(contexts)
    return merged


def _hash_encode_fn(cfg):
    spec = cfg.hash_spec()
    rng = np.random.default_rng(cfg["seed"])
    params = EncoderParams.init(spec, cfg["encoder.hidden"], rng)

    def encode_words(words):
        return encode(corpus_mod.tokens_from_strings(words), None, params)

    return encode_words


def _scorer_factory(cfg):
    """Returns scorer(sentence_words, candidate_pool) for the configured kind."""
    kind = cfg["reranker.scorer"]
    if kind == "engine":
        return lambda words, pool: engine_order_scorer()
    if kind == "fuzzy":
        return lambda words, pool: fuzzy_scorer(words)
    if cfg["encoder.kind"] != "hash":
        raise ConfigError(
            "similarity scoring from the command line needs the hash encoder; "
            "external dumps cannot embed arbitrary candidate texts"
        )
    encode_fn = _hash_encode_fn(cfg)

    def make(words, pool):
        idf = None
        if kind == "bertscore-idf":
            idf = IdfTable.from_pool([t.words for t in pool])
        return bertscore_scorer(words, encode_fn, idf=idf)

    return make


def _gather_contexts(dataset, cfg, args, allow_live):
    """sentence id -> list of RetrievedText per the configured context source."""
    source = cfg["retrieval.context_source"]
    if source == "document":
        return {
            s.id: document_contexts(s, dataset, cfg["retrieval.doc_budget"])
            for s in dataset.sentences
        }
    if source == "random-data":
        pools = {
            s.id: [x for x in dataset.sentences if x.id != s.id]
            for s in dataset.sentences
        }
        return {
            sid: random_contexts("from_data", pool, cfg["reranker.l"], cfg["seed"] + i)
            for i, (sid, pool) in enumerate(sorted(pools.items()))
        }

    fixture = cfg["retrieval.fixture"]
    endpoint = cfg["retrieval.endpoint"]
    if not fixture and not (allow_live and endpoint):
        raise ConfigError("this command needs --retrieval-fixture (or --endpoint)")
    if allow_live and endpoint:
        live = HttpSearchClient(endpoint, timeout=cfg["retrieval.timeout"])
        client = CachingSearchClient(live, fixture) if fixture else live
    else:
        client = FixtureSearchClient(fixture)

    retrieved = retrieve_all(
        dataset.sentences,
        client,
        cfg.retrieval_config(),
        parallelism=cfg["retrieval.parallelism"],
    )
    if cfg["retrieval.leak_filter"]:
        leak_sets = [dataset] + [
            _read_dataset(p, cfg, "test") for p in getattr(args, "leak_data", [])
        ]
        ngram = cfg["retrieval.leak_ngram"]
        retrieved = {
            sid: leak_filter(texts, leak_sets, ngram=ngram)
            for sid, texts in retrieved.items()
        }
    if source == "random-retrieved":
        pool = [t for texts in retrieved.values() for t in texts]
        return {
            s.id: random_contexts("from_retrieved", pool, cfg["reranker.l"], cfg["seed"] + i)
            if pool
            else []
            for i, s in enumerate(dataset.sentences)
        }
    return retrieved


def cmd_retrieve(args, allow_live=True) -> int:
    cfg = _run_config(args)
    dataset = _read_dataset(args.data, cfg, args.split)
    candidates = _gather_contexts(dataset, cfg, args, allow_live)

    out = _out_dir(args)
    make_scorer = _scorer_factory(cfg)
    records = []
    empty_ids = []
    for sent in dataset.sentences:
        texts = candidates.get(sent.id, [])
        selected = rank_and_select(texts, make_scorer(sent.words, texts), cfg["reranker.l"])
        if not selected:
            empty_ids.append(sent.id)
        records.append((sent.id, selected))

    header = {
        "k": cfg["retrieval.k"],
        "l": cfg["reranker.l"],
        "scorer": cfg["reranker.scorer"],
        "query_word_limit": cfg["retrieval.query_word_limit"],
        "sep_token": cfg["reranker.sep_token"],
        "max_view_len": cfg["reranker.max_view_len"],
        "context_source": cfg["retrieval.context_source"],
        "seed": cfg["seed"],
    }
    with (out / "contexts.jsonl").open("w", encoding="utf-8") as fh:
        write_context_dump(fh, records, header=header)
    coverage = {
        "total": len(dataset.sentences),
        "with_contexts": len(dataset.sentences) - len(empty_ids),
        "empty": len(empty_ids),
        "empty_ids": empty_ids,
    }
    (out / "coverage.json").write_text(
        json.dumps(coverage, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(json.dumps({"contexts": str(out / "contexts.jsonl"), **coverage},
                     sort_keys=True))
    return 0


def cmd_rerank(args) -> int:
    return cmd_retrieve(args, allow_live=False)


def _load_embeddings(cfg):
    if cfg["encoder.kind"] != "external":
        return None
    path = cfg["encoder.embedding_dump"]
    if not path:
        raise ConfigError("--encoder external requires --embedding-dump")
    if not Path(path).exists():
        raise DataError(f"embedding dump not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return load_embedding_dump(fh)


def _load_ckpt(path):
    p = Path(path)
    if not p.exists():
        raise DataError(f"checkpoint not found: {p}")
    with p.open("rb") as fh:
        return load_checkpoint(fh)


def cmd_train(args) -> int:
    cfg = _run_config(args)
    train_set = _read_dataset(args.data, cfg, "train")
    dev_set = _read_dataset(args.dev, cfg, "dev")
    config = cfg.train_config()
    embeddings = _load_embeddings(cfg)

    contexts = None
    dumped = _load_context_dumps(args.contexts) if args.contexts else None
    if dumped is not None:
        contexts = {}
        contexts.update(build_bundles(train_set, dumped, config))
        contexts.update(build_bundles(dev_set, dumped, config))

    unlabeled = None
    if args.unlabeled:
        unlabeled = _read_dataset_unlabeled(args.unlabeled, cfg)
        if dumped is not None:
            contexts.update(build_bundles(unlabeled, dumped, config))

    out = _out_dir(args)
    with (out / "metrics.jsonl").open("w", encoding="utf-8") as sink:
        result = train(
            train_set, dev_set, contexts=contexts, unlabeled=unlabeled,
            config=config, metrics_sink=sink, embeddings=embeddings,
        )
    with (out / "checkpoint.bin").open("wb") as fh:
        save_checkpoint(fh, result.checkpoint)
    best = max((m["f1"] for m in result.metrics), default=0.0)
    print(json.dumps({
        "checkpoint": str(out / "checkpoint.bin"),
        "metrics": str(out / "metrics.jsonl"),
        "epochs": config.epochs,
        "best_dev_f1": best,
    }, sort_keys=True))
    return 0


def _read_dataset_unlabeled(path, cfg):
    p = Path(path)
    if not p.exists():
        raise DataError(f"dataset file not found: {p}")
    with p.open("r", encoding="utf-8") as fh:
        return read_conll(fh, token_column=cfg["corpus.token_col"],
                          label_column=None, split="unlabeled")


def _bundles_for(dataset, args, cfg):
    if not args.contexts:
        return None
    dumped = _load_context_dumps(args.contexts)
    return build_bundles(dataset, dumped, cfg.train_config())


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    dataset = _read_dataset(args.data, cfg, args.split)
    checkpoint = _load_ckpt(args.checkpoint)
    bundles = _bundles_for(dataset, args, cfg)
    embeddings = _load_embeddings(cfg)
    if args.view == "w_context" and bundles is None and embeddings is None:
        raise ConfigError(
            "w_context evaluation needs --contexts; run the retrieve command first"
        )
    scores = evaluate(dataset, bundles, checkpoint, args.view,
                      bio_mask=cfg["train.bio_mask"], embeddings=embeddings)
    record = {"split": args.split, "view": args.view, **scores}
    print(json.dumps(record, sort_keys=True))
    if args.out:
        out = _out_dir(args)
        (out / "eval.json").write_text(
            json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return 0


def cmd_predict(args) -> int:
    cfg = _run_config(args)
    dataset = _read_dataset(args.data, cfg, args.split)
    checkpoint = _load_ckpt(args.checkpoint)
    bundles = _bundles_for(dataset, args, cfg)
    embeddings = _load_embeddings(cfg)
    if args.view == "w_context" and bundles is None and embeddings is None:
        raise ConfigError(
            "w_context prediction needs --contexts; run the retrieve command first"
        )
    preds = predict_labels(dataset, bundles, checkpoint, args.view,
                           bio_mask=cfg["train.bio_mask"], embeddings=embeddings)

    if args.dump_marginals:
        with open(args.dump_marginals, "w", encoding="utf-8") as fh:
            for sent in dataset.sentences:
                if embeddings is not None:
                    key = (sent.id, "retrieval" if args.view == "w_context" else "original")
                    V = embeddings[key].rows
                else:
                    ctx = None
                    if args.view == "w_context":
                        bundle = bundles.get(sent.id) or assemble_context([], len(sent))
                        ctx = bundle_tokens(bundle)
                    feats = featurize_sentence(sent.tokens, ctx, checkpoint.encoder.spec)
                    V = encode_features(feats, checkpoint.encoder)
                table = marginals(score_lattice(V, checkpoint.crf))
                fh.write(json.dumps(
                    {"sentence_id": sent.id, "marginals": table.to_lists()}
                ) + "\n")

    out_path = None
    if args.out:
        out_path = _out_dir(args) / "predictions.conll"
        with out_path.open("w", encoding="utf-8") as fh:
            write_conll(dataset, fh, extra_labels=preds)
        print(json.dumps({"predictions": str(out_path)}, sort_keys=True))
    else:
        write_conll(dataset, sys.stdout, extra_labels=preds)
    return 0


def cmd_matrix(args) -> int:
    cfg = _run_config(args)
    train_set = _read_dataset(args.data, cfg, "train")
    dev_set = _read_dataset(args.dev, cfg, "dev")
    base = cfg.train_config()
    dumped = _load_context_dumps(args.contexts) if args.contexts else {}
    contexts = {}
    contexts.update(build_bundles(train_set, dumped, base))
    contexts.update(build_bundles(dev_set, dumped, base))

    from dataclasses import replace

    grid = {}
    for mode in MATRIX_MODES:
        config = replace(base, mode=mode)
        result = train(train_set, dev_set, contexts=contexts, config=config)
        grid[mode] = {
            "wo_context": evaluate(dev_set, contexts, result.checkpoint,
                                   "wo_context", bio_mask=config.bio_mask)["f1"],
            "w_context": evaluate(dev_set, contexts, result.checkpoint,
                                  "w_context", bio_mask=config.bio_mask)["f1"],
        }

    header = f"{'mode':<14} {'wo_context':>12} {'w_context':>12}"
    print(header)
    for mode in MATRIX_MODES:
        row = grid[mode]
        print(f"{mode:<14} {row['wo_context']:>12.4f} {row['w_context']:>12.4f}")
    if args.out:
        out = _out_dir(args)
        (out / "matrix.json").write_text(
            json.dumps(grid, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return 0


_COMMANDS = {
    "retrieve": cmd_retrieve,
    "rerank": cmd_rerank,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "matrix": cmd_matrix,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ServiceError as exc:
        print(f"service error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
