"""Attention profiles, head sorting, summaries, exports and parameter reports."""

import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from altkit.acoustic import ModelConfig, build_model, compute_speaker_embedding
from altkit.attention_analysis import (AnalysisError, AttentionProfile, extract_profile, param_report,
                                       param_report_rows, profile_report, profile_to_csv, profile_to_svg,
                                       read_profile_csv, sort_heads, summarize)
from altkit.features import FeatureMatrix


def _model(heads=3, left=4, right=2):
    cfg = ModelConfig.desk(output_units=5).with_attention(num_heads=heads, left=left, right=right,
                                                         key_dim=4, value_dim=3)
    return build_model(cfg)


def _feats(rng, n, spk="s"):
    return FeatureMatrix(rng.normal(size=(n, 40)), speaker_id=spk, utterance_id=f"{spk}{n}")


@pytest.fixture
def data():
    rng = np.random.default_rng(0)
    utts = [_feats(rng, 20), _feats(rng, 12), _feats(rng, 3)]
    return utts, {"s": compute_speaker_embedding(utts)}


class TestExtract:
    def test_rows_are_distributions(self, data):
        utts, emb = data
        prof = extract_profile(_model(), utts, emb)
        assert prof.weights.shape == (3, 7)
        np.testing.assert_allclose(prof.weights.sum(axis=1), 1.0, atol=1e-3)
        assert prof.frames == (20 - 6) + (12 - 6)        # the 3-frame utterance is skipped

    def test_zero_query_key_gives_uniform(self, data):
        utts, emb = data
        model = _model()
        att = model.block("attention")
        att.Wq.value[...] = 0
        att.Wk.value[...] = 0
        prof = extract_profile(model, utts, emb)
        np.testing.assert_allclose(prof.weights, 1 / 7, atol=1e-6)

    def test_deterministic(self, data):
        utts, emb = data
        model = _model()
        a = extract_profile(model, utts, emb)
        b = extract_profile(model, utts, emb)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_errors(self, data):
        utts, emb = data
        with pytest.raises(AnalysisError):
            extract_profile(build_model(ModelConfig.desk(output_units=5)), utts, emb)
        with pytest.raises(AnalysisError, match="7 frames"):
            extract_profile(_model(), [utts[2]], emb)


def _profile(rows, left=1, right=1):
    return AttentionProfile(np.array(rows, dtype=float), left, right)


class TestSortAndSummarize:
    def test_sorted_unchanged(self):
        p = _profile([[0.1, 0.5, 0.4], [0.2, 0.6, 0.2], [0.3, 0.3, 0.4]])
        s = sort_heads(p)
        np.testing.assert_array_equal(s.weights, p.weights)
        assert s.head_ids == (0, 1, 2)

    def test_reversed(self):
        p = _profile([[0.3, 0.3, 0.4], [0.2, 0.6, 0.2], [0.1, 0.5, 0.4]])
        s = sort_heads(p)
        np.testing.assert_array_equal(s.weights, p.weights[::-1])
        assert s.head_ids == (2, 1, 0)

    def test_ties_stable(self):
        p = _profile([[0.2, 0.5, 0.3], [0.1, 0.1, 0.8], [0.2, 0.1, 0.7]])
        assert sort_heads(p).head_ids == (1, 0, 2)

    def test_single_head(self):
        p = _profile([[0.2, 0.5, 0.3]])
        avg, med = summarize(p)
        np.testing.assert_array_equal(avg, p.weights[0])
        assert med == pytest.approx(0.3)

    def test_uniform_median(self):
        p = AttentionProfile(np.full((4, 22), 1 / 22), 15, 6)
        assert summarize(p)[1] == pytest.approx(1 / 22)

    def test_two_heads_by_hand(self):
        avg, med = summarize(_profile([[0.2, 0.5, 0.3], [0.4, 0.1, 0.5]]))
        np.testing.assert_allclose(avg, [0.3, 0.3, 0.4])
        assert med == pytest.approx(0.3)

    def test_report_metrics(self):
        p = _profile([[0.1, 0.8, 0.1], [1 / 3, 1 / 3, 1 / 3]])
        rep = profile_report(p)
        assert rep["average_argmax_offset"] == 0
        assert rep["head_argmax_offsets"][0] == 0
        assert rep["head_entropy"][1] == pytest.approx(math.log(3))
        assert rep["uniform_entropy"] == pytest.approx(math.log(3))


class TestExports:
    def test_csv_round_trip(self):
        p = sort_heads(_profile([[0.3, 0.3, 0.4], [0.1, 0.5, 0.4]]))
        text = profile_to_csv(p)
        assert text.splitlines()[0] == "head,-1,0,1"
        back = read_profile_csv(text)
        np.testing.assert_array_equal(back.weights, p.weights)
        assert back.head_ids == p.head_ids and (back.left, back.right) == (1, 1)

    def test_svg_parses(self):
        p = AttentionProfile(np.full((2, 22), 1 / 22), 15, 6)
        root = ET.fromstring(profile_to_svg(p, title="a < b"))
        assert root.tag.endswith("svg")
        tags = [el.tag.split("}")[1] for el in root.iter()]
        assert tags.count("rect") == 2 * 22 + 1
        assert "polyline" in tags and "line" in tags


class TestParamReport:
    def test_empty(self):
        assert param_report([]) == []
        assert param_report_rows([]) == []

    def test_attention_adds_parameters(self):
        base = ModelConfig.desk()
        rows = dict((n, r) for n, _, r in param_report_rows([("CTDNN", base),
                                                              ("CTDNN_SA", base.with_attention(num_heads=1))]))
        assert rows["CTDNN_SA"] > rows["CTDNN"]

    def test_head_difference_paper_dims(self):
        base = ModelConfig()
        rows = param_report_rows([("h15", base.with_attention(num_heads=15)),
                                  ("h30", base.with_attention(num_heads=30))])
        for _, closed, runtime in rows:
            assert closed == runtime
        d = base.tdnnf_hidden
        dout = rows[1][1] - rows[0][1] - 15 * d * (2 * 60 + 40)
        assert dout == 15 * 40 * base.tdnnf_hidden       # the output projection grows with H as well

    def test_runtime_counts(self):
        model = _model()
        assert param_report([("m", model)]) == [("m", model.num_params())]
