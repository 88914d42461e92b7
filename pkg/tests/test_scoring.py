"""Word error rate: normalization, alignment, aggregation and file formats."""

import itertools

import pytest

from altkit.scoring import (DEL, INS, OK, SUB, align, normalize_text, read_text_file, score_dataset, wer,
                            write_text_file)

REF = "AS THE SUN WILL RISE".split()


def brute_force_distance(ref, hyp):
    """Minimal edit count by enumerating every alignment (exponential; tiny inputs only)."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    return min(brute_force_distance(ref[1:], hyp[1:]) + (ref[0] != hyp[0]),
               brute_force_distance(ref[1:], hyp) + 1,
               brute_force_distance(ref, hyp[1:]) + 1)


class TestNormalize:
    def test_sentence(self):
        assert normalize_text("as the sun will rise.") == REF

    def test_apostrophe_inside_word(self):
        assert normalize_text("don't") == ["DON'T"]
        assert normalize_text("'tis the rockin'") == ["TIS", "THE", "ROCKIN"]

    def test_empty(self):
        assert normalize_text("") == []
        assert normalize_text(" ,. ! ") == []


class TestWer:
    def test_identical(self):
        r = wer(REF, REF)
        assert r.wer == 0.0 and r.errors == 0

    def test_one_substitution(self):
        r = wer(REF, "AS THE SON WILL RISE".split())
        assert (r.substitutions, r.deletions, r.insertions) == (1, 0, 0)
        assert r.wer == pytest.approx(20.0)

    def test_empty_hypothesis(self):
        r = wer(REF, [])
        assert r.deletions == 5 and r.wer == pytest.approx(100.0)

    def test_empty_reference(self):
        with pytest.raises(ValueError):
            wer([], ["A"])

    def test_insertions_can_exceed_100(self):
        assert wer(["A"], ["B", "C", "D"]).wer == pytest.approx(300.0)

    def test_tie_break_prefers_substitution(self):
        # ref A B vs hyp B: delete A (match B) costs 1; substitution paths cost 2
        assert align(["A", "B"], ["B"]) == [(DEL, "A", None), (OK, "B", "B")]
        # ref A vs hyp B: sub (1) beats del+ins (2)
        assert align(["A"], ["B"]) == [(SUB, "A", "B")]
        # ref A B vs hyp C: sub+del and del+sub tie at 2; substitution is taken at the last position
        assert align(["A", "B"], ["C"]) == [(DEL, "A", None), (SUB, "B", "C")]

    def test_exhaustive_against_brute_force(self):
        alphabet = "XYZ"
        seqs = [list(p) for n in range(0, 5) for p in itertools.product(alphabet, repeat=n)]
        for ref in seqs:
            if not ref:
                continue
            for hyp in seqs:
                r = wer(ref, hyp)
                assert r.errors == brute_force_distance(ref, hyp)

    def test_trace_consistent_with_counts(self):
        r = wer(list("ABCDE"), list("AXCEF"))
        u = r.utterances[0]
        ops = [op for op, _, _ in u.alignment]
        assert ops.count(SUB) == u.substitutions
        assert ops.count(DEL) == u.deletions
        assert ops.count(INS) == u.insertions
        assert [a for _, a, _ in u.alignment if a is not None] == list("ABCDE")
        assert [b for _, _, b in u.alignment if b is not None] == list("AXCEF")


class TestDataset:
    def test_corpus_level(self):
        refs = [("u1", REF), ("u2", REF)]
        hyps = {"u1": "AS THE SON WILL RISE".split(), "u2": REF}
        assert score_dataset(refs, hyps).wer == pytest.approx(10.0)

    def test_corpus_not_mean_of_utterances(self):
        refs = [("u1", ["A"]), ("u2", list("ABCDEFGHI"))]
        hyps = {"u1": ["B"], "u2": list("ABCDEFGHI")}
        assert score_dataset(refs, hyps).wer == pytest.approx(10.0)   # mean of utterances would be 50

    def test_missing_hypothesis(self, caplog):
        report = score_dataset([("u1", REF)], {})
        assert report.deletions == 5
        assert report.utterances[0].missing
        assert "u1" in caplog.text

    def test_single_utterance(self):
        hyp = ["AS", "SUN"]
        assert score_dataset([("u", REF)], {"u": hyp}).wer == wer(REF, hyp).wer

    def test_duplicate_ids(self):
        with pytest.raises(ValueError, match="duplicate"):
            score_dataset([("u", REF), ("u", REF)], {"u": REF})

    def test_order_invariant(self):
        refs = [("a", REF), ("b", ["A", "B"]), ("c", ["C"])]
        hyps = {"a": REF[:3], "b": ["B"], "c": ["C", "C"]}
        assert score_dataset(refs, hyps).wer == score_dataset(refs[::-1], hyps).wer

    def test_reports(self):
        report = score_dataset([("u1", REF)], {"u1": REF[:4]})
        assert report.summary() == "%WER 20.00 [ 1 / 5, 0 ins, 1 del, 0 sub ]"
        lines = report.to_csv().splitlines()
        assert lines[0] == "utt_id,ref_words,sub,del,ins,wer,missing"
        assert lines[-1] == "TOTAL,5,0,1,0,20.00,"


class TestFiles:
    def test_round_trip(self, tmp_path):
        path = str(tmp_path / "hyp.txt")
        write_text_file(path, [("u1", REF), ("u2", [])])
        assert read_text_file(path) == [("u1", REF), ("u2", [])]

    def test_normalizes_on_read(self, tmp_path):
        path = tmp_path / "ref.txt"
        path.write_text("u1\tAs the sun, will rise!\n\n", encoding="utf-8")
        assert read_text_file(str(path)) == [("u1", REF)]
