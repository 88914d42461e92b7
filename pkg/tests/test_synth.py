"""Synthetic corpus generation."""

import filecmp
import os

import numpy as np
import pytest

from altkit.acoustic import read_labels
from altkit.features import load_wav, mel_spectrogram, read_manifest
from altkit.lexicon import load_lexicon, transcript_to_phones
from altkit.lm import perplexity, train_ngram
from altkit.synth import (SPLITS, SynthError, SynthSpec, _markov_chain, _sentence, generate, phone_frequencies,
                          read_phones)

SMALL = SynthSpec(speakers={"train": 2, "dev": 1, "test": 1}, utterances={"train": 6, "dev": 3, "test": 3},
                  lm_sentences=20, seed=7)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    return generate(SMALL, str(tmp_path_factory.mktemp("synth")))


def _tree_files(root):
    out = []
    for d, _, files in os.walk(root):
        out += [os.path.relpath(os.path.join(d, f), root) for f in files]
    return sorted(out)


class TestGenerate:
    def test_manifest_wavs_and_labels(self, dataset):
        entries = read_manifest(dataset.splits["train"]["manifest"])
        labels = read_labels(dataset.splits["train"]["labels"])
        assert len(entries) == 6
        for e in entries:
            assert os.path.exists(e.wav_path)
            sig = load_wav(e.wav_path)
            assert mel_spectrogram(sig).num_frames == len(labels[e.utt_id])

    def test_labels_match_transcripts(self, dataset):
        lex = load_lexicon(dataset.lexicon)
        phones = read_phones(dataset.phones)
        for split in SPLITS:
            labels = read_labels(dataset.splits[split]["labels"])
            for e in read_manifest(dataset.splits[split]["manifest"]):
                seqs, oov = transcript_to_phones(lex, e.transcript.split())
                assert not oov
                lab = labels[e.utt_id]
                runs = [phones[lab[0]]] + [phones[b] for a, b in zip(lab[:-1], lab[1:]) if a != b]
                expected = [p for s in seqs for p in s]
                # adjacent identical phones merge into one run
                merged = [p for i, p in enumerate(expected) if i == 0 or p != expected[i - 1]]
                assert runs == merged

    def test_splits_disjoint(self, dataset):
        ids = [{e.utt_id for e in read_manifest(dataset.splits[s]["manifest"])} for s in SPLITS]
        spk = [{e.speaker_id for e in read_manifest(dataset.splits[s]["manifest"])} for s in SPLITS]
        for i in range(3):
            for j in range(i + 1, 3):
                assert not ids[i] & ids[j]
                assert not spk[i] & spk[j]

    def test_phone_durations_in_range(self, dataset):
        lo, hi = SMALL.frames_per_phone
        for lab in read_labels(dataset.splits["dev"]["labels"]).values():
            edges = np.flatnonzero(np.diff(lab)) + 1
            runs = np.diff(np.concatenate([[0], edges, [len(lab)]]))
            assert runs.min() >= lo

    def test_deterministic(self, dataset, tmp_path):
        again = generate(SMALL, str(tmp_path))
        files = _tree_files(dataset.root)
        assert files == _tree_files(again.root)
        _, mismatch, errors = filecmp.cmpfiles(dataset.root, again.root, files, shallow=False)
        assert not mismatch and not errors

    def test_lm_corpus(self, dataset):
        with open(dataset.lm_corpus, encoding="utf-8") as f:
            lines = f.read().splitlines()
        assert len(lines) == 20
        vocab = set(SMALL.vocabulary)
        assert all(set(line.split()) <= vocab for line in lines)

    def test_text_rewards_longer_histories(self):
        # transcripts depend on three words of history, so each n-gram order helps up to 4
        spec = SynthSpec()
        rng = np.random.default_rng(0)
        chain = _markov_chain(spec, rng)
        train = [_sentence(chain, spec, rng) for _ in range(2000)]
        held = [_sentence(chain, spec, rng) for _ in range(300)]
        ppl = [perplexity(train_ngram(train, n), held) for n in (2, 3, 4)]
        assert ppl[0] > ppl[1] > ppl[2]

    def test_phone_frequencies_distinct(self):
        f = phone_frequencies(SynthSpec())
        assert len(set(np.round(f, 3))) == 12 and np.all(np.diff(f) > 0)


class TestSpec:
    def test_phone_outside_inventory(self):
        with pytest.raises(SynthError, match="ZZ"):
            SynthSpec(vocabulary={"W": ("AA", "ZZ")}).validate()

    def test_empty_pronunciation(self):
        with pytest.raises(SynthError):
            SynthSpec(vocabulary={"W": ()}).validate()

    def test_bad_durations(self):
        with pytest.raises(SynthError):
            SynthSpec(frames_per_phone=(6, 3)).validate()
