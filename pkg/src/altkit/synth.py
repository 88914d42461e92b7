"""Synthetic "lyrics" corpus with exact frame labels.

Each phone is a tone at its own mel position over a faint noise floor, so a
small model can learn the task in minutes. Speakers differ by gain and
spectral tilt. Transcripts come from a seeded third-order word Markov chain, which
also produces the LM training text.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .features import AudioSignal, FeatureConfig, ManifestEntry, mel_band_centers, write_manifest, write_wav

DEFAULT_PHONES = ("AA", "AH", "AY", "EH", "IY", "UW", "D", "L", "M", "N", "R", "S")
VOWELS = frozenset({"AA", "AH", "AY", "EH", "IY", "UW"})
DEFAULT_VOCAB = {
    "SUN": ("S", "AH", "N"),
    "RISE": ("R", "AY", "S"),
    "MOON": ("M", "UW", "N"),
    "LIE": ("L", "AY"),
    "DREAM": ("D", "R", "IY", "M"),
    "SEA": ("S", "IY"),
    "NAME": ("N", "EH", "M"),
    "LADY": ("L", "EH", "D", "IY"),
    "ALONE": ("AH", "L", "UW", "N"),
    "MINE": ("M", "AY", "N"),
}
SPLITS = ("train", "dev", "test")


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    phones: tuple = DEFAULT_PHONES
    vocabulary: dict = field(default_factory=lambda: dict(DEFAULT_VOCAB))
    frames_per_phone: tuple = (5, 12)
    words_per_utt: tuple = (2, 5)
    speakers: dict = field(default_factory=lambda: {"train": 8, "dev": 3, "test": 3})
    utterances: dict = field(default_factory=lambda: {"train": 200, "dev": 50, "test": 50})
    lm_sentences: int = 2000
    sample_rate: int = 16000
    seed: int = 0

    def validate(self):
        inv = set(self.phones)
        for word, pron in self.vocabulary.items():
            bad = [p for p in pron if p not in inv]
            if bad:
                raise SynthError(f"word {word} uses phones {bad} outside the inventory")
            if not pron:
                raise SynthError(f"word {word} has no phones")
        lo, hi = self.frames_per_phone
        if not 1 <= lo <= hi:
            raise SynthError("bad frames_per_phone range")
        return self


@dataclass
class SynthDataset:
    root: str
    lexicon: str
    phones: str
    lm_corpus: str
    splits: dict        # split -> {"manifest": path, "labels": path, "text": path}


def phone_frequencies(spec, config=FeatureConfig()):
    """One tone frequency per phone, spread evenly over the mel bands."""
    centers = mel_band_centers(config, spec.sample_rate)
    n = len(spec.phones)
    idx = np.round(np.linspace(2, len(centers) - 3, n)).astype(int)
    return centers[idx]


TEXT_ORDER = 3          # words of history the transcript generator conditions on


class _TextChain:
    """Word-level Markov chain of order :data:`TEXT_ORDER` with sparse transitions.

    Each history's next-word distribution is drawn from its own seeded stream,
    so it does not depend on the order in which histories are first visited.
    """

    def __init__(self, words, seed):
        self.words = words
        self.seed = seed
        self._dists = {}

    def dist(self, history):
        if history not in self._dists:
            rng = np.random.default_rng([self.seed, 7919, len(history), *history])
            alpha = 0.5 if not history else 0.15
            self._dists[history] = rng.dirichlet(np.full(len(self.words), alpha))
        return self._dists[history]


def _markov_chain(spec, rng):
    return _TextChain(sorted(spec.vocabulary), int(rng.integers(2**31)))


def _sentence(chain, spec, rng):
    n = int(rng.integers(spec.words_per_utt[0], spec.words_per_utt[1] + 1))
    idx = []
    for _ in range(n):
        history = tuple(idx[-TEXT_ORDER:])
        idx.append(int(rng.choice(len(chain.words), p=chain.dist(history))))
    return [chain.words[i] for i in idx]


def synthesize(phone_seq, durations, freqs, speaker, rng, sample_rate=16000, config=FeatureConfig()):
    """Waveform whose frame t (at the feature framing) is labeled by construction."""
    hop = config.hop_samples(sample_rate)
    tail = config.frame_samples(sample_rate) - hop
    total = hop * int(sum(durations)) + tail
    out = np.zeros(total)
    gain, tilt = speaker
    pos = 0
    for k, (ph, d) in enumerate(zip(phone_seq, durations)):
        n = hop * int(d) + (tail if k == len(phone_seq) - 1 else 0)
        t = np.arange(n) / sample_rate
        f = freqs[ph]
        amp = gain * (f / 1000.0) ** tilt * rng.uniform(0.8, 1.2)
        # a single tone: overtones would land on (speed-perturbed) neighbouring phones
        seg = amp * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        out[pos:pos + n] = seg
        pos += n
    out += 0.003 * rng.standard_normal(total)
    peak = np.max(np.abs(out))
    if peak > 0.9:
        out *= 0.9 / peak
    return out


def generate(spec, out_dir):
    """Write WAVs, manifests, frame labels, lexicon, phone list and LM text."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    os.makedirs(out_dir, exist_ok=True)
    phones = list(spec.phones)
    phone_index = {p: i for i, p in enumerate(phones)}
    freqs = dict(zip(phones, phone_frequencies(spec)))
    chain = _markov_chain(spec, rng)

    lex_path = os.path.join(out_dir, "lexicon.txt")
    with open(lex_path, "w", encoding="utf-8") as f:
        for word in sorted(spec.vocabulary):
            pron = [p + "1" if p in VOWELS else p for p in spec.vocabulary[word]]
            f.write(f"{word} {' '.join(pron)}\n")
    phones_path = os.path.join(out_dir, "phones.txt")
    with open(phones_path, "w", encoding="utf-8") as f:
        for i, p in enumerate(phones):
            f.write(f"{p} {i}\n")

    splits = {}
    spk_offset = 0
    for split in SPLITS:
        n_spk = spec.speakers[split]
        speakers = [(f"spk{spk_offset + i:03d}", (rng.uniform(0.2, 0.6), rng.uniform(-0.4, 0.4)))
                    for i in range(n_spk)]
        spk_offset += n_spk
        split_dir = os.path.join(out_dir, split)
        wav_dir = os.path.join(split_dir, "wav")
        os.makedirs(wav_dir, exist_ok=True)
        entries, labels, texts = [], {}, []
        for u in range(spec.utterances[split]):
            spk_id, spk = speakers[u % n_spk]
            utt_id = f"{spk_id}-{split}{u:04d}"
            words = _sentence(chain, spec, rng)
            seq = [p for w in words for p in spec.vocabulary[w]]
            lo, hi = spec.frames_per_phone
            durs = rng.integers(lo, hi + 1, size=len(seq))
            audio = synthesize(seq, durs, freqs, spk, rng, spec.sample_rate)
            wav = os.path.join(wav_dir, f"{utt_id}.wav")
            write_wav(wav, AudioSignal(audio, spec.sample_rate, spk_id, utt_id))
            labels[utt_id] = np.repeat([phone_index[p] for p in seq], durs)
            text = " ".join(words)
            entries.append(ManifestEntry(utt_id, wav, spk_id, text))
            texts.append((utt_id, text))
        manifest = os.path.join(split_dir, "manifest.tsv")
        write_manifest(manifest, entries, relative_to=split_dir)
        lab_path = os.path.join(split_dir, "labels.txt")
        with open(lab_path, "w", encoding="utf-8") as f:
            for utt_id, lab in labels.items():
                f.write(f"{utt_id} {' '.join(str(int(v)) for v in lab)}\n")
        text_path = os.path.join(split_dir, "text")
        with open(text_path, "w", encoding="utf-8") as f:
            for utt_id, text in texts:
                f.write(f"{utt_id}\t{text}\n")
        splits[split] = {"manifest": manifest, "labels": lab_path, "text": text_path}

    corpus_path = os.path.join(out_dir, "lm_corpus.txt")
    with open(corpus_path, "w", encoding="utf-8") as f:
        for _ in range(spec.lm_sentences):
            f.write(" ".join(_sentence(chain, spec, rng)) + "\n")
    return SynthDataset(out_dir, lex_path, phones_path, corpus_path, splits)


def read_phones(path):
    """``<phone> <index>`` lines -> list ordered by index."""
    pairs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            parts = line.split()
            if parts:
                pairs.append((int(parts[1]), parts[0]))
    return [p for _, p in sorted(pairs)]
