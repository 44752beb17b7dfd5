from collections import Counter

import numpy as np
import pytest

from sslreg.synthetic import gen_synthetic, make_task, sample_examples
from sslreg.text import load_corpus, load_lexicon


def bag_of_words_predict(task, examples):
    """Independent oracle: argmax count of each class's signature words."""
    preds = []
    for e in examples:
        scores = [sum(1 for w in e.tokens if w in set(task.signature_words[c]))
                  for c in range(task.num_classes)]
        preds.append(int(np.argmax(scores)))
    return preds


class TestTask:
    def test_pools_are_disjoint(self):
        task = make_task(3, 90)
        sig = [set(p) for p in task.signature_words]
        filler = set(task.filler_words)
        for i, a in enumerate(sig):
            assert not a & filler
            for b in sig[i + 1:]:
                assert not a & b

    def test_lexicon_groups_only_filler(self):
        task = make_task(2, 80)
        filler = set(task.filler_words)
        for group in task.lexicon.synsets:
            assert len(group) >= 2
            assert set(group) <= filler

    def test_vocab_too_small_rejected(self):
        with pytest.raises(ValueError):
            make_task(4, 10)


class TestSampling:
    def test_zero_noise_is_separable(self):
        task = make_task(2, 100)
        examples = sample_examples(task, 300, 0.0, np.random.default_rng(0))
        preds = bag_of_words_predict(task, examples)
        assert all(p == e.label for p, e in zip(preds, examples))

    def test_full_noise_is_unlearnable(self):
        task = make_task(2, 100)
        examples = sample_examples(task, 600, 1.0, np.random.default_rng(1))
        preds = bag_of_words_predict(task, examples)
        acc = np.mean([p == e.label for p, e in zip(preds, examples)])
        assert abs(acc - 0.5) < 0.15

    def test_noise_controls_filler_fraction(self):
        task = make_task(2, 100)
        examples = sample_examples(task, 200, 0.3, np.random.default_rng(2))
        filler = set(task.filler_words)
        frac = np.mean([w in filler for e in examples for w in e.tokens])
        assert 0.25 < frac < 0.35

    def test_labels_roughly_balanced(self):
        task = make_task(3, 120)
        examples = sample_examples(task, 900, 0.2, np.random.default_rng(3))
        counts = Counter(e.label for e in examples)
        for c in range(3):
            assert 240 < counts[c] < 360

    def test_deterministic(self):
        task = make_task(2, 80)
        a = sample_examples(task, 50, 0.4, np.random.default_rng(7))
        b = sample_examples(task, 50, 0.4, np.random.default_rng(7))
        assert a == b


class TestGenSynthetic:
    def test_files_parse_and_have_requested_sizes(self, tmp_path):
        paths = gen_synthetic(tmp_path, 500, 50, 100, 2, 120, 0.3, seed=0)
        train = load_corpus(paths["train"])
        assert len(train) == 500
        assert len(load_corpus(paths["dev"])) == 50
        assert len(load_corpus(paths["test"])) == 100
        lex = load_lexicon(paths["lexicon"])
        assert all(len(g) >= 2 for g in lex.synsets)
        assert paths["train"].read_text().count("\n") == 500

    def test_splits_differ_but_share_task(self, tmp_path):
        paths = gen_synthetic(tmp_path, 50, 50, 50, 2, 120, 0.3, seed=0)
        train = load_corpus(paths["train"])
        dev = load_corpus(paths["dev"])
        assert train != dev
        train_words = {w for e in train for w in e.tokens}
        dev_words = {w for e in dev for w in e.tokens}
        assert len(train_words & dev_words) > 20

    def test_same_seed_same_files(self, tmp_path):
        p1 = gen_synthetic(tmp_path / "a", 40, 10, 10, 2, 100, 0.5, seed=9)
        p2 = gen_synthetic(tmp_path / "b", 40, 10, 10, 2, 100, 0.5, seed=9)
        assert p1["train"].read_bytes() == p2["train"].read_bytes()
        assert p1["lexicon"].read_bytes() == p2["lexicon"].read_bytes()
