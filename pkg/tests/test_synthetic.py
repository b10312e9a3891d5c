"""Synthetic gazetteer-disambiguation corpus generator."""

from coopner.synthetic import LABEL_SET, make_ambiguity_task


class TestMakeAmbiguityTask:
    def test_sizes_and_splits(self):
        task = make_ambiguity_task(n_train=50, n_dev=20, n_unlabeled=10, seed=0)
        assert len(task.train) == 50
        assert len(task.dev) == 20
        assert len(task.unlabeled) == 10
        assert task.train.label_set == LABEL_SET
        assert all(s.labels is None for s in task.unlabeled)

    def test_every_sentence_has_a_context_bundle(self):
        task = make_ambiguity_task(n_train=30, n_dev=10, n_unlabeled=5, seed=1)
        for ds in (task.train, task.dev, task.unlabeled):
            for sent in ds:
                bundle = task.bundles[sent.id]
                assert bundle.assembled[0] == "[SEP]"
                assert len(bundle.assembled) > 1

    def test_context_states_the_type(self):
        task = make_ambiguity_task(n_train=40, n_dev=10, seed=2)
        for sent in task.train:
            pos = next(i for i, lb in enumerate(sent.labels) if lb != "O")
            name = sent.tokens[pos].surface
            etype = task.name_types[name]
            ctx = " ".join(task.bundles[sent.id].assembled)
            assert name in ctx
            assert ("person" in ctx) == (etype == "PER")

    def test_deterministic_under_seed(self):
        a = make_ambiguity_task(n_train=25, n_dev=10, seed=7)
        b = make_ambiguity_task(n_train=25, n_dev=10, seed=7)
        assert [s.words for s in a.train] == [s.words for s in b.train]
        assert [s.labels for s in a.train] == [s.labels for s in b.train]
        assert a.name_types == b.name_types

    def test_seed_changes_corpus(self):
        a = make_ambiguity_task(n_train=25, n_dev=10, seed=7)
        b = make_ambiguity_task(n_train=25, n_dev=10, seed=8)
        assert [s.words for s in a.train] != [s.words for s in b.train]

    def test_label_noise_flips_some_types(self):
        clean = make_ambiguity_task(n_train=300, n_dev=10, seed=3, label_noise=0.0)
        noisy = make_ambiguity_task(n_train=300, n_dev=10, seed=3, label_noise=0.3)

        def flipped(task):
            count = 0
            for sent in task.train:
                pos = next(i for i, lb in enumerate(sent.labels) if lb != "O")
                name = sent.tokens[pos].surface
                if sent.labels[pos] != f"B-{task.name_types[name]}":
                    count += 1
            return count

        assert flipped(clean) == 0
        assert 40 <= flipped(noisy) <= 140  # ~30% of 300

    def test_dev_seen_fraction(self):
        task = make_ambiguity_task(
            n_train=100, n_dev=40, seed=4, dev_seen_fraction=0.5,
            n_train_names=10, n_novel_names=10,
        )
        train_names = {
            s.tokens[next(i for i, lb in enumerate(s.labels) if lb != "O")].surface
            for s in task.train
        }
        seen = sum(
            1
            for s in task.dev
            if s.tokens[next(i for i, lb in enumerate(s.labels) if lb != "O")].surface
            in train_names
        )
        assert 20 <= seen <= 40  # at least the seen half, possibly more by chance
