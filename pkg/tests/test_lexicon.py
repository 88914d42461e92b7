"""CMU-format lexicon parsing, transcript lookup, the unknown-word phone loop and vowel extension."""

import math

import pytest

from altkit.lexicon import (LexiconError, extend_vowels, load_lexicon, make_unk_model, parse_lexicon,
                            transcript_to_phones)

CMU = """\
;;; tiny CMU-style fixture
AS  AE1 Z
AS(2)  AH0 Z
THE  DH AH0
THE(2)  DH IY0
SUN  S AH1 N
WILL  W IH1 L
RISE  R AY1 Z
HMM  HH M
"""


@pytest.fixture
def lex():
    return parse_lexicon(CMU)


class TestParse:
    def test_single_entry(self):
        lex = parse_lexicon("HELLO HH AH L OW\n")
        assert lex.prons["HELLO"] == [("HH", "AH", "L", "OW")]

    def test_alternate_pronunciation(self):
        lex = parse_lexicon("HELLO HH AH L OW\nHELLO(2) HH EH L OW\n")
        assert len(lex.prons["HELLO"]) == 2

    def test_missing_phones(self):
        with pytest.raises(LexiconError, match="line 2"):
            parse_lexicon("HELLO HH AH L OW\nWORD\n")

    def test_words_uppercased_and_stress_stripped(self):
        lex = parse_lexicon("hello hh ah1 l ow0\n")
        assert lex.prons["HELLO"] == [("HH", "AH", "L", "OW")]
        assert lex.vowels == {"AH", "OW"}

    def test_stress_kept_on_request(self):
        lex = parse_lexicon("SUN S AH1 N\n", strip_stress=False)
        assert lex.prons["SUN"] == [("S", "AH1", "N")]

    def test_inventory_enforced(self):
        with pytest.raises(LexiconError, match="not in inventory"):
            parse_lexicon("SUN S AH1 N\n", phones={"S", "AH"})

    def test_round_trip(self, lex, tmp_path):
        path = tmp_path / "lex.txt"
        lex.save(str(path))
        back = load_lexicon(str(path))
        assert back.prons == lex.prons
        assert back.phones == lex.phones


class TestTranscript:
    def test_fig5_utterance(self, lex):
        seqs, oov = transcript_to_phones(lex, "AS THE SUN WILL RISE".split())
        assert len(seqs) == 5 and not oov
        assert seqs[2] == ["S", "AH", "N"]

    def test_empty(self, lex):
        assert transcript_to_phones(lex, []) == ([], [])

    def test_oov_reported(self, lex):
        _, oov = transcript_to_phones(lex, ["THE", "YEAHHH"])
        assert oov == ["YEAHHH"]


class TestUnkModel:
    def test_single_phone_probability(self):
        unk = make_unk_model(parse_lexicon("X A B\n"), continue_prob=0.5)
        assert math.exp(unk.log_prob(["A"])) == pytest.approx(0.25)
        assert math.exp(unk.log_prob(["A", "B"])) == pytest.approx(0.5 * 0.5 * 0.5 * 0.5)

    def test_empty_string_impossible(self):
        unk = make_unk_model(parse_lexicon("X A B\n"))
        assert unk.log_prob([]) == -math.inf

    def test_lengths_sum_to_one(self):
        unk = make_unk_model(parse_lexicon("X A B\nY A\n"), continue_prob=0.3)
        total = sum(math.exp(unk.log_prob(["A"] * n)) / unk.phone_probs["A"] ** n for n in range(1, 200))
        assert total == pytest.approx(1.0)

    def test_unused_phones_reachable(self):
        lex = parse_lexicon("X A\n", phones={"A", "B"})
        assert make_unk_model(lex).phone_probs["B"] > 0

    def test_empty_inventory(self):
        from altkit.lexicon import Lexicon
        with pytest.raises(LexiconError):
            make_unk_model(Lexicon({}, frozenset()))


class TestExtendVowels:
    def test_sun_gains_variant(self, lex):
        ext = extend_vowels(lex)
        assert ext.prons["SUN"] == [("S", "AH", "N"), ("S", "AH", "AH", "N")]

    def test_no_vowels_unchanged(self, lex):
        assert extend_vowels(lex).prons["HMM"] == [("HH", "M")]

    def test_invariants_hold(self, lex):
        ext = extend_vowels(lex)
        assert all(ph in ext.phones for plist in ext.prons.values() for p in plist for ph in p)
        assert all(ext.prons[w] for w in ext.prons)
