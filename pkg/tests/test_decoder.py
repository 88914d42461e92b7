"""Decoding graph, token-passing search, lattices and rescoring."""

import math

import numpy as np
import pytest

from altkit.decoder import (EPS, DecodeError, DecodeParams, GraphError, Lattice, LatticeError, VocabularyError,
                            best_path, brute_force_decode, brute_force_paths, build_graph, decode, lattice_stats,
                            lattice_to_dot, parse_lattice, prune_lattice, rescore_ngram, rescore_rnnlm,
                            word_sequences)
from altkit.lexicon import parse_lexicon
from altkit.lm import BOS, EOS, attach_unk, train_ngram
from toys import random_instance


def _chain(words, am=-1.0, lm=-0.5, final_eps=False):
    """Linear lattice: one node per frame, one word per arc."""
    lat = Lattice()
    prev = lat.add_node(0)
    for i, w in enumerate(words):
        nxt = lat.add_node(i + 1)
        lat.add_arc(prev, nxt, w, am, lm)
        prev = nxt
    if final_eps:
        end = lat.add_node(len(words))
        lat.add_arc(prev, end, EPS, 0.0, 0.0)
        prev = end
    lat.finals = [prev]
    return lat


def _diamond(top=("X", -1.0), bottom=("Y", -2.0)):
    lat = Lattice([0, 1, 1, 2], [], 0, [3])
    lat.add_arc(0, 1, top[0], top[1], 0.0)
    lat.add_arc(0, 2, bottom[0], bottom[1], 0.0)
    lat.add_arc(1, 3, "Z", -1.0, 0.0)
    lat.add_arc(2, 3, "Z", -1.0, 0.0)
    return lat


class TestGraph:
    def test_prefix_sharing(self):
        lex = parse_lexicon("AB A B\nAC A C\n")
        lm = train_ngram([["AB", "AC"]], 2)
        g = build_graph(lex, lm, phones=["A", "B", "C"])
        root = g.root
        assert list(root.children) == [0]
        shared = g.nodes[root.children[0]]
        assert sorted(shared.children) == [1, 2]
        assert sorted(w for n in g.leaves() for w in n.words) == ["AB", "AC"]

    def test_lm_word_without_pronunciation(self):
        lex = parse_lexicon("AB A B\n")
        lm = train_ngram([["AB", "ZZ"]], 2)
        with pytest.raises(VocabularyError, match="ZZ"):
            build_graph(lex, lm)

    def test_unk_loop(self):
        lex = parse_lexicon("AB A B\n")
        lm = attach_unk(train_ngram([["AB", "ZZ"]], 2))
        g = build_graph(lex, lm, phones=["A", "B"])
        assert g.has_unk
        assert sorted(g.unk_nodes) == [0, 1]
        assert all(g.nodes[n].unk for n in g.unk_nodes.values())
        assert math.exp(g.unk_continue) + math.exp(g.unk_exit) == pytest.approx(1.0)

    def test_missing_posterior_column(self):
        lex = parse_lexicon("AB A B\n")
        with pytest.raises(GraphError):
            build_graph(lex, train_ngram([["AB"]], 2), phones=["A"])

    def test_empty_lexicon(self):
        from altkit.lexicon import Lexicon
        with pytest.raises(GraphError):
            build_graph(Lexicon({}, frozenset()), train_ngram([["AB"]], 2))


class TestSearch:
    def test_single_word_score(self):
        lex = parse_lexicon("HI A B\n")
        lm = train_ngram([["HI"]], 2)
        post = np.log(np.array([[0.9, 0.1], [0.3, 0.7]]))
        hyp, lat = decode(post, build_graph(lex, lm, phones=["A", "B"]), DecodeParams.exhaustive())
        assert hyp.words == ("HI",)
        expected = post[0, 0] + post[1, 1] + lm.score((BOS,), "HI") + lm.score((BOS, "HI"), EOS)
        assert hyp.score == pytest.approx(expected, abs=1e-12)
        assert hyp.alignment == [("HI", 0, 2)]

    def test_tiny_beam_still_answers(self):
        lex = parse_lexicon("HI A\nHO B\n")
        lm = train_ngram([["HI"], ["HO"]], 2)
        g = build_graph(lex, lm, phones=["A", "B"])
        hyp, _ = decode(np.log([[0.4, 0.6]]), g, DecodeParams(beam=1e-6, lattice_beam=1e-6, max_active_tokens=1))
        assert hyp.words == ("HO",)

    def test_acoustic_scale_and_insertion_penalty(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            post, g = random_instance(rng)
            paths = brute_force_paths(post, g, 0.5, -1.0)
            if not paths:
                continue
            hyp, _ = decode(post, g, DecodeParams.exhaustive(acoustic_scale=0.5, word_insertion_penalty=-1.0))
            score, words = brute_force_decode(post, g, 0.5, -1.0)
            assert hyp.words == words
            assert hyp.score == pytest.approx(score, abs=1e-9)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        checked = 0
        for _ in range(60):
            post, g = random_instance(rng)
            paths = brute_force_paths(post, g)
            if not paths:
                with pytest.raises(DecodeError):
                    decode(post, g, DecodeParams.exhaustive())
                continue
            hyp, lat = decode(post, g, DecodeParams.exhaustive())
            score, words = brute_force_decode(post, g)
            assert hyp.words == words
            assert hyp.score == pytest.approx(score, abs=1e-9)
            assert word_sequences(lat) == set(paths)
            checked += 1
        assert checked > 40

    def test_bad_inputs(self):
        lex = parse_lexicon("HI A\n")
        g = build_graph(lex, train_ngram([["HI"]], 2), phones=["A", "B"])
        with pytest.raises(DecodeError):
            decode(np.zeros((3, 3)), g)
        with pytest.raises(DecodeError):
            decode(np.zeros((0, 2)), g)
        with pytest.raises(DecodeError):
            DecodeParams(beam=4, lattice_beam=8).validate()

    def test_unk_decoding(self):
        lex = parse_lexicon("HI A\n", phones={"A", "B"})
        lm = attach_unk(train_ngram([["HI"], ["HI", "HI"]], 2))
        g = build_graph(lex, lm, phones=["A", "B"])
        post = np.log(np.array([[0.01, 0.99]] * 3))
        hyp, _ = decode(post, g)
        assert "<unk>" in hyp.words


class TestLattice:
    def test_best_path_single(self):
        hyp = best_path(_chain(["A", "B"]))
        assert hyp.words == ("A", "B")
        assert hyp.score == pytest.approx(-3.0)

    def test_best_path_two_paths(self):
        assert best_path(_diamond()).words == ("X", "Z")
        assert best_path(_diamond(top=("X", -5.0))).words == ("Y", "Z")

    def test_ties_prefer_smaller_sequence(self):
        assert best_path(_diamond(top=("X", -1.0), bottom=("W", -1.0))).words == ("W", "Z")

    def test_text_round_trip(self):
        lat = _chain(["A", "B"], am=-0.123456789, final_eps=True)
        back = parse_lattice(lat.to_text())
        assert back.frames == lat.frames and back.arcs == lat.arcs and back.finals == lat.finals

    def test_validation(self):
        lat = _chain(["A"])
        lat.add_arc(1, 0, "B", 0.0, 0.0)
        with pytest.raises(LatticeError):
            lat.validate()
        with pytest.raises(LatticeError):
            parse_lattice("N 0 0\nN 2 1\n")

    def test_stats(self):
        assert lattice_stats(_chain(["A", "B", "C"]))[:3] == (4, 3, 1)
        assert lattice_stats(_diamond())[2] == 2
        assert word_sequences(_diamond()) == {("X", "Z"), ("Y", "Z")}

    def test_prune(self):
        lat = _diamond(top=("X", -1.0), bottom=("Y", -4.0))
        assert word_sequences(prune_lattice(lat, 2.0)) == {("X", "Z")}
        assert len(word_sequences(prune_lattice(lat, 3.5))) == 2

    def test_dot_empty_path(self):
        lat = Lattice([0, 0], [], 0, [1])
        lines = lattice_to_dot(lat).splitlines()
        assert sum("->" in line for line in lines) == 0
        assert sum("[label=" in line for line in lines) == 2
        assert "doublecircle" in lines[3]

    def test_dot_single_arc(self):
        text = lattice_to_dot(_chain(["SUN"]))
        edges = [line for line in text.splitlines() if "->" in line]
        assert edges == ['  n0 -> n1 [label="SUN/-1.000:-0.500"];']


class TestRescore:
    def test_hand_computed_fourgram(self):
        lm = train_ngram([["A", "B", "C"], ["A", "B", "D"]], 4, smoothing="ml")
        out = rescore_ngram(_chain(["A", "B", "C"], lm=-9.0, final_eps=True), lm)
        scores = {a.word: a.lm for a in out.arcs}
        assert scores["A"] == pytest.approx(0.0)
        assert scores["B"] == pytest.approx(0.0)
        assert scores["C"] == pytest.approx(math.log(0.5))
        assert scores[EPS] == pytest.approx(0.0)
        assert [a.am for a in out.arcs] == [-1.0, -1.0, -1.0, 0.0]

    def test_argmax_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            post, g = random_instance(rng)
            if not brute_force_paths(post, g):
                continue
            hyp, lat = decode(post, g, DecodeParams.exhaustive())
            again = best_path(rescore_ngram(lat, g.lm))
            assert again.words == hyp.words
            assert again.score == pytest.approx(hyp.score, abs=1e-9)

    def test_history_split(self):
        # X and Y both reach node 1; a bigram LM must split it
        lat = Lattice([0, 1, 2], [], 0, [2])
        lat.add_arc(0, 1, "X", -1.0, 0.0)
        lat.add_arc(0, 1, "Y", -1.0, 0.0)
        lat.add_arc(1, 2, "Z", -1.0, 0.0)
        lm = train_ngram([["X", "Z"], ["Y", "Y"], ["Y", "Z", "X"]], 2)
        out = rescore_ngram(lat, lm)
        assert out.num_nodes == 4 and len(out.arcs) == 4
        assert word_sequences(out) == {("X", "Z"), ("Y", "Z")}
        z = sorted((a.lm for a in out.arcs if a.word == "Z"))
        assert z == sorted([lm.score(("X",), "Z"), lm.score(("Y",), "Z")])


class _TableLM:
    """Recurrent-LM stand-in: the state is the word history, scores come from a table."""

    def __init__(self, table, vocab):
        self.table = table
        self.vocab = vocab

    def initial_state(self):
        return ()

    def index(self, word):
        return self.vocab.index(word)

    def advance(self, state, word):
        return state + (word,)

    def log_distribution(self, state):
        return np.array([self.table.get((state, w), math.log(0.1)) for w in self.vocab])


class TestRnnlmRescore:
    def test_weight_zero_is_identity(self):
        lat = _diamond()
        out = rescore_rnnlm(lat, _TableLM({}, ["X", "Y", "Z", EOS]), weight=0.0)
        assert out.arcs == lat.arcs
        assert best_path(out).words == best_path(lat).words

    def test_weight_one_picks_rnn_best(self):
        lat = _diamond(top=("X", -1.0), bottom=("Y", -1.5))
        vocab = ["X", "Y", "Z", EOS]
        table = {((), "X"): math.log(0.05), ((), "Y"): math.log(0.9),
                 (("X",), "Z"): math.log(0.5), (("Y",), "Z"): math.log(0.5)}
        out = rescore_rnnlm(lat, _TableLM(table, vocab), weight=1.0)
        totals = {("X", "Z"): -2.0 + math.log(0.05) + math.log(0.5),
                  ("Y", "Z"): -2.5 + math.log(0.9) + math.log(0.5)}
        hyp = best_path(out)
        assert hyp.words == max(totals, key=totals.get) == ("Y", "Z")
        assert hyp.score == pytest.approx(totals[("Y", "Z")])

    def test_interpolation(self):
        lat = _chain(["X"], lm=-2.0, final_eps=True)
        table = {((), "X"): math.log(0.5), (("X",), EOS): math.log(0.25)}
        out = rescore_rnnlm(lat, _TableLM(table, ["X", EOS]), weight=0.5)
        lms = [a.lm for a in out.arcs]
        assert lms == pytest.approx([0.5 * -2.0 + 0.5 * math.log(0.5), 0.5 * math.log(0.25)])

    def test_bad_weight(self):
        with pytest.raises(ValueError):
            rescore_rnnlm(_diamond(), _TableLM({}, ["X"]), weight=1.5)
