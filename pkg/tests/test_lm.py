"""N-gram and recurrent language models."""

import math

import numpy as np
import pytest

from altkit.lexicon import UNK, make_unk_model, parse_lexicon
from altkit.lm import (BOS, EOS, NGramModel, OOVError, RecurrentLM, RNNLMConfig, attach_unk, load_arpa,
                       parse_arpa, perplexity, read_corpus, train_ngram, train_rnnlm)
from altkit.lm import rnnlm as rnn

TINY = [["A", "B"], ["A", "B"], ["A", "C"]]


def _normalization(model, history):
    words = model.words() + [EOS]
    return sum(math.exp(model.score(history, w)) for w in words)


class TestMaximumLikelihood:
    @pytest.fixture
    def ml(self):
        return train_ngram(TINY, 2, smoothing="ml")

    def test_hand_counts(self, ml):
        assert math.exp(ml.score(("A",), "B")) == pytest.approx(2 / 3, abs=1e-15)
        assert math.exp(ml.score(("A",), "C")) == pytest.approx(1 / 3, abs=1e-15)
        assert math.exp(ml.score((BOS,), "A")) == pytest.approx(1.0, abs=1e-15)
        assert math.exp(ml.score(("B",), EOS)) == pytest.approx(1.0, abs=1e-15)
        assert math.exp(ml.score(("C",), EOS)) == pytest.approx(1.0, abs=1e-15)
        # unigram counts: A 3, B 2, C 1, </s> 3 out of 9
        assert math.exp(ml.score((), "A")) == pytest.approx(3 / 9, abs=1e-15)
        assert math.exp(ml.score((), "C")) == pytest.approx(1 / 9, abs=1e-15)

    def test_higher_order_fits_training_data_at_least_as_well(self):
        corpus = [["A", "B", "C", "A"], ["B", "C", "A", "B"], ["A", "B", "A", "C"]]
        p3 = perplexity(train_ngram(corpus, 3, smoothing="ml"), corpus)
        p4 = perplexity(train_ngram(corpus, 4, smoothing="ml"), corpus)
        assert p4 <= p3 + 1e-12

    def test_beats_uniform_on_training_data(self):
        corpus = [["A", "B", "C"], ["A", "B"], ["B", "C"]] * 3
        ml = train_ngram(corpus, 2, smoothing="ml")
        assert perplexity(ml, corpus) < 4            # uniform over A, B, C, </s>


class TestKneserNey:
    @pytest.fixture
    def kn(self):
        return train_ngram(TINY, 2, discount=0.75)

    def test_hand_computed_backoff(self, kn):
        # continuation counts: A 1, B 1, C 1, </s> 2 (total 5); floor mass 0.75 * 4 / 5 spread over 4 words
        assert math.exp(kn.score((), "C")) == pytest.approx(0.2)
        assert math.exp(kn.score((), EOS)) == pytest.approx(0.4)
        # history B: one type, count 2 -> P(</s>|B) = 1.25/2 + 0.375 * 0.4
        assert math.exp(kn.score(("B",), EOS)) == pytest.approx(0.775)
        assert math.exp(kn.backoffs[("B",)]) == pytest.approx(0.375)
        # unseen bigram (B, C): beta(B) * P(C)
        assert math.exp(kn.score(("B",), "C")) == pytest.approx(0.375 * 0.2)

    def test_history_truncation(self):
        kn = train_ngram([["A", "B", "C", "A"], ["B", "C", "A"]], 3)
        assert kn.score(("C", "A", "B", "C"), "A") == kn.score(("B", "C"), "A")

    def test_oov(self, kn):
        with pytest.raises(OOVError):
            kn.score(("A",), "ZZZ")

    @pytest.mark.parametrize("order", [2, 3, 4])
    def test_every_seen_history_normalizes(self, order):
        corpus = [["A", "B", "C"], ["B", "C", "A", "A"], ["C", "A", "B", "B", "C"]]
        kn = train_ngram(corpus, order, vocab=["D"])
        histories = {g[:-1] for k in range(2, order + 1) for g in kn.probs[k]}
        for h in histories | {()}:
            assert _normalization(kn, h) == pytest.approx(1.0, abs=1e-9)

    def test_uniform_unigram_perplexity(self):
        words = ["A", "B", "C", "D"]
        lp = math.log(1 / 5)
        probs = {1: {(w,): lp for w in words + [EOS]} | {(BOS,): -math.inf}}
        model = NGramModel(1, probs, {})
        assert perplexity(model, [["A", "B"], ["C"]]) == pytest.approx(5.0)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            train_ngram(TINY, 5)
        with pytest.raises(ValueError):
            train_ngram([], 2)
        with pytest.raises(ValueError):
            train_ngram(TINY, 2, smoothing="witten_bell")


class TestArpa:
    def test_round_trip(self, tmp_path):
        kn = train_ngram([["A", "B", "C"], ["B", "A"], ["C", "C", "A", "B"]], 3, vocab=["D"])
        path = str(tmp_path / "lm.arpa")
        kn.save(path)
        back = load_arpa(path)
        assert back.order == 3
        for k in kn.probs:
            for g, v in kn.probs[k].items():
                w = back.probs[k][g]
                assert (v == w == -math.inf) or abs(v - w) < 1e-12
        for h in [(BOS,), ("A",), ("C", "C"), ("D", "A")]:
            for w in ["A", "B", "D", EOS]:
                assert back.score(h, w) == pytest.approx(kn.score(h, w), abs=1e-12)

    def test_space_separated_variant(self):
        text = "\\data\\\nngram 1=2\n\n\\1-grams:\n-0.30103 A\n-0.30103 </s>\n\n\\end\\\n"
        m = parse_arpa(text)
        assert math.exp(m.score((), "A")) == pytest.approx(0.5, rel=1e-5)

    def test_not_arpa(self):
        with pytest.raises(ValueError):
            parse_arpa("hello\n")


class TestUnk:
    def test_attach_keeps_normalization(self):
        kn = train_ngram([["A", "B"], ["B", "A", "A"]], 3)
        unk = attach_unk(kn, make_unk_model(parse_lexicon("A AA\nB B IY\n")))
        assert unk.has_unk and UNK in unk.words()
        for h in [(), (BOS,), ("A",), ("A", "B"), ("ZZZ",)]:
            assert _normalization(unk, h) == pytest.approx(1.0, abs=1e-9)
        assert unk.score(("A",), "ZZZ") == unk.score(("A",), UNK)

    def test_double_attach(self):
        unk = attach_unk(train_ngram(TINY, 2))
        with pytest.raises(ValueError):
            attach_unk(unk)

    def test_needs_reserve(self):
        with pytest.raises(ValueError):
            attach_unk(train_ngram(TINY, 2, smoothing="ml"))


class TestCorpusFile:
    def test_normalized_and_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("as the sun\n\nwill RISE.\n", encoding="utf-8")
        assert read_corpus(str(path)) == [["AS", "THE", "SUN"], ["WILL", "RISE"]]


@pytest.fixture(scope="module")
def trained():
    corpus = [["A", "B", "C"], ["B", "C"], ["A", "C", "C"]] * 10
    return train_rnnlm(corpus, RNNLMConfig(dim=8, epochs=15, learning_rate=0.05, batch_size=4),
                       valid=[["A", "B", "C"]])


class TestRecurrentLM:
    def test_vocab_layout(self, trained):
        assert trained.vocab == ["A", "B", "C", EOS, UNK]

    def test_distribution_normalizes(self, trained):
        rng = np.random.default_rng(0)
        for _ in range(20):
            state = np.tanh(rng.standard_normal(trained.dim) * 3)
            assert np.exp(trained.log_distribution(state)).sum() == pytest.approx(1.0, abs=1e-9)

    def test_step_is_pure(self, trained):
        s = trained.advance(trained.initial_state(), "A")
        a = trained.score_step(s, "B")
        b = trained.score_step(s, "B")
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[1], b[1])

    def test_learns(self, trained):
        assert trained.history[-1] < trained.history[0]
        assert perplexity(trained, [["A", "B", "C"]]) < 5

    def test_oov_maps_to_unk(self, trained):
        assert trained.index("ZZZ") == trained.index(UNK)

    def test_oov_without_unk(self):
        model = train_rnnlm([["A"]], RNNLMConfig(dim=4, epochs=1, add_unk=False))
        with pytest.raises(OOVError):
            model.index("B")

    def test_save_load(self, trained, tmp_path):
        path = str(tmp_path / "r.ckpt")
        trained.save(path)
        back = RecurrentLM.load(path)
        assert back.vocab == trained.vocab
        assert back.sentence_logprob(["A", "B"]) == pytest.approx(trained.sentence_logprob(["A", "B"]), abs=1e-5)

    def test_gradient_check(self):
        rng = np.random.default_rng(0)
        model = train_rnnlm([["A", "B", "C", "A"]], RNNLMConfig(dim=5, epochs=0))
        params = {k: rng.normal(scale=0.5, size=v.shape) for k, v in model.params().items()}
        x, y, m = rnn._batch(model, [["A", "B", "C", "A"], ["C"]])
        _, grads = rnn.loss_and_grads(params, x, y, m)
        eps = 1e-6
        worst = 0.0
        for name, p in params.items():
            for i in range(p.size):
                orig = p.flat[i]
                p.flat[i] = orig + eps
                up, _ = rnn.loss_and_grads(params, x, y, m)
                p.flat[i] = orig - eps
                down, _ = rnn.loss_and_grads(params, x, y, m)
                p.flat[i] = orig
                num = (up - down) / (2 * eps)
                worst = max(worst, abs(num - grads[name].flat[i]) / max(abs(num), abs(grads[name].flat[i]), 1e-6))
        assert worst < 1e-4
