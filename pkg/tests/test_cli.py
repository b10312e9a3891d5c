"""Command-line pipeline: retrieve, rerank, train, eval, predict, matrix."""

import json

import pytest

from coopner.cli import main
from coopner.corpus import entity_f1, read_conll

TRAIN_CONLL = """\
the O
apple B-X
appeared O

the O
bank B-X
appeared O

the O
cloud B-X
appeared O

the O
drum B-X
appeared O
"""

UNLABELED_CONLL = """\
the
eagle
appeared
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "train.conll").write_text(TRAIN_CONLL, encoding="utf-8")
    (tmp_path / "dev.conll").write_text(TRAIN_CONLL, encoding="utf-8")
    (tmp_path / "unl.conll").write_text(UNLABELED_CONLL, encoding="utf-8")
    fixture_lines = []
    for sid, noun in enumerate(["apple", "bank", "cloud", "drum", "eagle"]):
        fixture_lines.append(json.dumps({
            "query": f"the {noun} appeared",
            "results": [
                {"title": f"{noun} guide", "snippet": f"{noun} is well known"},
                {"title": "unrelated", "snippet": "something else entirely"},
            ],
        }))
    (tmp_path / "fixture.jsonl").write_text(
        "\n".join(fixture_lines) + "\n", encoding="utf-8"
    )
    return tmp_path


def run(argv):
    return main([str(a) for a in argv])


FAST_TRAIN = [
    "--hash-dims", "64", "--hidden", "4", "--encoder-lr", "0.05",
    "--crf-lr", "0.1", "--epochs", "6", "--seed", "0",
]


def retrieve_contexts(workdir, split, data, out_name, extra=()):
    out = workdir / out_name
    code = run([
        "retrieve", "--data", data, "--split", split,
        "--retrieval-fixture", workdir / "fixture.jsonl",
        "--scorer", "fuzzy", "--out", out, *extra,
    ])
    assert code == 0
    return out / "contexts.jsonl"


class TestRetrieve:
    def test_writes_dump_and_coverage(self, workdir, capsys):
        out = workdir / "ret"
        code = run([
            "retrieve", "--data", workdir / "train.conll",
            "--retrieval-fixture", workdir / "fixture.jsonl",
            "--scorer", "fuzzy", "--out", out,
        ])
        assert code == 0
        lines = (out / "contexts.jsonl").read_text().splitlines()
        header = json.loads(lines[0])["_header"]
        assert header["k"] == 20 and header["l"] == 6
        coverage = json.loads((out / "coverage.json").read_text())
        assert coverage["total"] == 4 and coverage["empty"] == 0

    def test_deterministic_reruns_byte_identical(self, workdir):
        out = workdir / "ret"
        args = [
            "retrieve", "--data", workdir / "train.conll",
            "--retrieval-fixture", workdir / "fixture.jsonl",
            "--scorer", "bertscore", "--out", out, "--seed", "3",
        ]
        assert run(args) == 0
        first = (out / "contexts.jsonl").read_bytes()
        assert run(args) == 0
        assert (out / "contexts.jsonl").read_bytes() == first

    def test_missing_fixture_is_service_error(self, workdir):
        code = run([
            "retrieve", "--data", workdir / "train.conll",
            "--retrieval-fixture", workdir / "nope.jsonl",
            "--scorer", "fuzzy", "--out", workdir / "x",
        ])
        assert code == 3

    def test_no_fixture_flag_is_config_error(self, workdir):
        code = run([
            "retrieve", "--data", workdir / "train.conll",
            "--scorer", "fuzzy", "--out", workdir / "x",
        ])
        assert code == 1

    def test_missing_data_is_data_error(self, workdir):
        code = run([
            "retrieve", "--data", workdir / "absent.conll",
            "--retrieval-fixture", workdir / "fixture.jsonl",
            "--out", workdir / "x",
        ])
        assert code == 2

    def test_document_context_source_needs_no_fixture(self, workdir):
        out = workdir / "doc"
        code = run([
            "retrieve", "--data", workdir / "train.conll",
            "--context-source", "document", "--scorer", "engine", "--out", out,
        ])
        assert code == 0

    def test_rerank_uses_fixture_only(self, workdir):
        out = workdir / "rr"
        code = run([
            "rerank", "--data", workdir / "train.conll",
            "--retrieval-fixture", workdir / "fixture.jsonl",
            "--scorer", "engine", "--out", out,
            "--endpoint", "http://127.0.0.1:1/never-used",
        ])
        assert code == 0


class TestTrainEvalPredict:
    def test_full_pipeline(self, workdir, capsys):
        ctx_train = retrieve_contexts(
            workdir, "train", workdir / "train.conll", "ctx_train"
        )
        ctx_dev = retrieve_contexts(workdir, "dev", workdir / "dev.conll", "ctx_dev")
        out = workdir / "run"
        code = run([
            "train", "--data", workdir / "train.conll", "--dev", workdir / "dev.conll",
            "--contexts", ctx_train, "--contexts", ctx_dev,
            "--mode", "cl_kl", *FAST_TRAIN, "--out", out,
        ])
        assert code == 0
        assert (out / "checkpoint.bin").exists()
        assert (out / "metrics.jsonl").exists()
        capsys.readouterr()

        code = run([
            "eval", "--data", workdir / "dev.conll", "--split", "dev",
            "--checkpoint", out / "checkpoint.bin", "--view", "wo_context",
        ])
        assert code == 0
        eval_record = json.loads(capsys.readouterr().out.strip())
        assert set(eval_record) >= {"precision", "recall", "f1"}

        pred_out = workdir / "pred"
        code = run([
            "predict", "--data", workdir / "dev.conll", "--split", "dev",
            "--checkpoint", out / "checkpoint.bin", "--view", "wo_context",
            "--out", pred_out,
            "--dump-marginals", workdir / "marg.jsonl",
        ])
        assert code == 0
        capsys.readouterr()

        # predicted column scores identically to the eval command path
        with (pred_out / "predictions.conll").open() as fh:
            ds = read_conll(fh, token_column=0, label_column=1, split="dev")
        with (pred_out / "predictions.conll").open() as fh:
            preds = read_conll(fh, token_column=0, label_column=2, split="dev")
        scores = entity_f1(
            [list(s.labels) for s in ds], [list(s.labels) for s in preds]
        )
        assert scores["f1"] == pytest.approx(eval_record["f1"], abs=1e-12)

        marg_lines = (workdir / "marg.jsonl").read_text().splitlines()
        assert len(marg_lines) == 4
        rec = json.loads(marg_lines[0])
        assert len(rec["marginals"]) == 3  # one row per token
        for row in rec["marginals"]:
            assert sum(row) == pytest.approx(1.0, abs=1e-9)

    def test_wo_context_eval_needs_no_contexts(self, workdir, capsys):
        out = workdir / "run2"
        code = run([
            "train", "--data", workdir / "train.conll", "--dev", workdir / "dev.conll",
            "--mode", "wo_context", *FAST_TRAIN, "--out", out,
        ])
        assert code == 0
        capsys.readouterr()
        code = run([
            "eval", "--data", workdir / "dev.conll", "--split", "dev",
            "--checkpoint", out / "checkpoint.bin", "--view", "wo_context",
        ])
        assert code == 0

    def test_w_context_eval_without_contexts_is_config_error(self, workdir, capsys):
        out = workdir / "run3"
        run([
            "train", "--data", workdir / "train.conll", "--dev", workdir / "dev.conll",
            "--mode", "wo_context", *FAST_TRAIN, "--out", out,
        ])
        capsys.readouterr()
        code = run([
            "eval", "--data", workdir / "dev.conll", "--split", "dev",
            "--checkpoint", out / "checkpoint.bin", "--view", "w_context",
        ])
        assert code == 1

    def test_context_mode_without_dump_names_retrieve(self, workdir, capsys):
        code = run([
            "train", "--data", workdir / "train.conll", "--dev", workdir / "dev.conll",
            "--mode", "cl_kl", *FAST_TRAIN, "--out", workdir / "run4",
        ])
        assert code == 1

    def test_train_metrics_are_deterministic(self, workdir, capsys):
        ctx = retrieve_contexts(workdir, "train", workdir / "train.conll", "ctx_d")
        ctx_dev = retrieve_contexts(workdir, "dev", workdir / "dev.conll", "ctx_dd")
        blobs = []
        for out_name in ("da", "db"):
            out = workdir / out_name
            code = run([
                "train", "--data", workdir / "train.conll",
                "--dev", workdir / "dev.conll",
                "--contexts", ctx, "--contexts", ctx_dev,
                "--mode", "cl_l2", *FAST_TRAIN, "--out", out,
            ])
            assert code == 0
            blobs.append(
                ((out / "metrics.jsonl").read_bytes(),
                 (out / "checkpoint.bin").read_bytes())
            )
        assert blobs[0] == blobs[1]
        capsys.readouterr()

    def test_semi_supervised_cli_path(self, workdir, capsys):
        ctx = retrieve_contexts(workdir, "train", workdir / "train.conll", "ctx_s")
        ctx_dev = retrieve_contexts(workdir, "dev", workdir / "dev.conll", "ctx_sd")
        ctx_unl = retrieve_contexts(
            workdir, "unlabeled", workdir / "unl.conll", "ctx_su",
            extra=("--label-col", "none"),
        )
        code = run([
            "train", "--data", workdir / "train.conll", "--dev", workdir / "dev.conll",
            "--unlabeled", workdir / "unl.conll",
            "--contexts", ctx, "--contexts", ctx_dev, "--contexts", ctx_unl,
            "--mode", "cl_kl", *FAST_TRAIN, "--out", workdir / "semi",
        ])
        assert code == 0
        capsys.readouterr()


class TestMatrix:
    def test_table5_grid(self, workdir, capsys):
        ctx = retrieve_contexts(workdir, "train", workdir / "train.conll", "ctx_m")
        ctx_dev = retrieve_contexts(workdir, "dev", workdir / "dev.conll", "ctx_md")
        out = workdir / "mx"
        code = run([
            "matrix", "--matrix", "table5",
            "--data", workdir / "train.conll", "--dev", workdir / "dev.conll",
            "--contexts", ctx, "--contexts", ctx_dev,
            "--hash-dims", "64", "--hidden", "4", "--encoder-lr", "0.05",
            "--crf-lr", "0.1", "--epochs", "2", "--seed", "0", "--out", out,
        ])
        assert code == 0
        printed = capsys.readouterr().out
        grid = json.loads((out / "matrix.json").read_text())
        assert set(grid) == {
            "wo_context", "w_context", "joint_no_cl", "cl_both", "cl_l2", "cl_kl"
        }
        for mode, row in grid.items():
            assert set(row) == {"wo_context", "w_context"}
            assert mode in printed


class TestUsageErrors:
    def test_unknown_flag_value(self, workdir):
        code = run([
            "train", "--data", workdir / "train.conll", "--dev", workdir / "dev.conll",
            "--mode", "bogus", "--out", workdir / "x",
        ])
        assert code == 1

    def test_config_file_and_override(self, workdir, capsys):
        cfg = workdir / "run.cfg"
        cfg.write_text("train.epochs = 1\nencoder.hash_dims = 64\nencoder.hidden = 4\n")
        out = workdir / "cfgrun"
        code = run([
            "train", "--data", workdir / "train.conll", "--dev", workdir / "dev.conll",
            "--mode", "wo_context", "--config", cfg,
            "--encoder-lr", "0.05", "--crf-lr", "0.1", "--out", out,
        ])
        assert code == 0
        summary = json.loads(capsys.readouterr().out.strip())
        assert summary["epochs"] == 1

    def test_unknown_config_key(self, workdir):
        cfg = workdir / "bad.cfg"
        cfg.write_text("nonsense.key = 1\n")
        code = run([
            "train", "--data", workdir / "train.conll", "--dev", workdir / "dev.conll",
            "--config", cfg, "--out", workdir / "x",
        ])
        assert code == 1


class TestContextSources:
    def test_random_data_source(self, workdir):
        out = workdir / "rd"
        code = run([
            "retrieve", "--data", workdir / "train.conll",
            "--context-source", "random-data", "--scorer", "engine",
            "--seed", "5", "--out", out,
        ])
        assert code == 0
        lines = (out / "contexts.jsonl").read_text().splitlines()
        assert len(lines) == 5  # header + 4 sentences
        rec = json.loads(lines[1])
        assert rec["contexts"]  # sampled sentences as contexts

    def test_random_retrieved_source(self, workdir):
        out = workdir / "rr2"
        code = run([
            "retrieve", "--data", workdir / "train.conll",
            "--context-source", "random-retrieved",
            "--retrieval-fixture", workdir / "fixture.jsonl",
            "--scorer", "engine", "--seed", "5", "--out", out,
        ])
        assert code == 0


class TestExternalEncoderCli:
    def test_train_and_eval_with_embedding_dump(self, workdir, capsys):
        import numpy as np
        from coopner.corpus import read_conll as rc
        from coopner.encoder import write_embedding_dump

        with (workdir / "train.conll").open() as fh:
            ds = rc(fh, split="train")
        with (workdir / "dev.conll").open() as fh:
            dev = rc(fh, split="dev")
        rng = np.random.default_rng(3)
        records = []
        for split_ds in (ds, dev):
            for sent in split_ds:
                rows = rng.normal(size=(len(sent), 4))
                records.append((sent.id, "original", rows))
                records.append((sent.id, "retrieval", rows + 0.1))
        dump = workdir / "emb.jsonl"
        with dump.open("w", encoding="utf-8") as fh:
            write_embedding_dump(fh, records)

        out = workdir / "ext"
        code = run([
            "train", "--data", workdir / "train.conll", "--dev", workdir / "dev.conll",
            "--encoder", "external", "--embedding-dump", dump,
            "--mode", "cl_kl", "--crf-lr", "0.1", "--epochs", "4",
            "--seed", "0", "--out", out,
        ])
        assert code == 0
        capsys.readouterr()
        code = run([
            "eval", "--data", workdir / "dev.conll", "--split", "dev",
            "--checkpoint", out / "checkpoint.bin", "--view", "w_context",
            "--encoder", "external", "--embedding-dump", dump,
        ])
        assert code == 0
        record = json.loads(capsys.readouterr().out.strip())
        assert "f1" in record

    def test_external_without_dump_is_config_error(self, workdir):
        code = run([
            "train", "--data", workdir / "train.conll", "--dev", workdir / "dev.conll",
            "--encoder", "external", "--mode", "wo_context",
            "--out", workdir / "x",
        ])
        assert code == 1
