"""Pronunciation lexicons in CMU dictionary format, plus the unknown-word phone loop."""

import math
import re
from collections import Counter
from dataclasses import dataclass

UNK = "<unk>"

_ALT = re.compile(r"^(.+)\((\d+)\)$")
_STRESS = re.compile(r"^([A-Z]+)([012])$")


class LexiconError(ValueError):
    pass


@dataclass
class Lexicon:
    prons: dict                      # word -> list of phone tuples
    phones: frozenset
    vowels: frozenset = frozenset()
    unk_word: str | None = None

    def __post_init__(self):
        for word, plist in self.prons.items():
            if not plist:
                raise LexiconError(f"{word} has no pronunciation")
            for p in plist:
                bad = [ph for ph in p if ph not in self.phones]
                if bad:
                    raise LexiconError(f"{word}: phones {bad} not in inventory")

    def __contains__(self, word):
        return word in self.prons

    def __len__(self):
        return len(self.prons)

    @property
    def words(self):
        return sorted(self.prons)

    def phone_list(self):
        return sorted(self.phones)

    def serialize(self):
        lines = []
        for word in sorted(self.prons):
            for i, p in enumerate(self.prons[word]):
                head = word if i == 0 else f"{word}({i + 1})"
                lines.append(f"{head} {' '.join(p)}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.serialize())


def parse_lexicon(text, phones=None, strip_stress=True):
    """Parse CMU-format text. If ``phones`` is given, every phone must be in it."""
    entries = []
    vowels = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith(";;;"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise LexiconError(f"line {lineno}: no phones for {parts[0]!r}")
        word = parts[0].upper()
        m = _ALT.match(word)
        if m:
            word = m.group(1)
        pron = []
        for ph in parts[1:]:
            ph = ph.upper()
            s = _STRESS.match(ph)
            if s:
                vowels.add(s.group(1))
                if strip_stress:
                    ph = s.group(1)
            pron.append(ph)
        entries.append((lineno, word, tuple(pron)))

    inventory = set(phones) if phones is not None else {ph for _, _, p in entries for ph in p}
    prons = {}
    for lineno, word, pron in entries:
        bad = [ph for ph in pron if ph not in inventory]
        if bad:
            raise LexiconError(f"line {lineno}: phones {bad} not in inventory")
        plist = prons.setdefault(word, [])
        if pron not in plist:
            plist.append(pron)
    return Lexicon(prons, frozenset(inventory), frozenset(vowels))


def load_lexicon(path, phones=None, strip_stress=True):
    with open(path, encoding="utf-8") as f:
        return parse_lexicon(f.read(), phones, strip_stress)


def transcript_to_phones(lexicon, words):
    """Map words to their first pronunciation. Returns (phone sequences, oov words)."""
    seqs, oov = [], []
    for w in words:
        if w in lexicon.prons:
            seqs.append(list(lexicon.prons[w][0]))
        else:
            oov.append(w)
    return seqs, oov


@dataclass
class UnkModel:
    """Phone-loop pronunciation model: any phone string of length >= 1.

    P(p1..pn) = prod P(pi) * continue^(n-1) * (1 - continue)
    """
    phone_probs: dict
    continue_prob: float = 0.5

    def log_prob(self, phones):
        if not phones:
            return -math.inf
        lp = sum(math.log(self.phone_probs[p]) for p in phones)
        return lp + (len(phones) - 1) * math.log(self.continue_prob) + math.log1p(-self.continue_prob)


def make_unk_model(lexicon, continue_prob=0.5):
    if not lexicon.phones:
        raise LexiconError("empty phone inventory")
    counts = Counter(ph for plist in lexicon.prons.values() for p in plist for ph in p)
    phones = sorted(lexicon.phones)
    if any(counts[ph] == 0 for ph in phones):
        # add-one so unused phones stay reachable
        counts = Counter({ph: counts[ph] + 1 for ph in phones})
    total = sum(counts[ph] for ph in phones)
    return UnkModel({ph: counts[ph] / total for ph in phones}, continue_prob)


def extend_vowels(lexicon, k=2):
    """Add one variant per word whose vowels are repeated ``k`` times."""
    prons = {}
    for word, plist in lexicon.prons.items():
        plist = list(plist)
        for p in plist:
            if any(ph in lexicon.vowels for ph in p):
                ext = tuple(x for ph in p for x in ([ph] * k if ph in lexicon.vowels else [ph]))
                if ext not in plist:
                    plist.append(ext)
                break
        prons[word] = plist
    return Lexicon(prons, lexicon.phones, lexicon.vowels, lexicon.unk_word)
