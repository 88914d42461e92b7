"""Word error rate scoring and the text normalization shared with the LM code."""

import csv
import io
import logging
import re
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

_PUNCT = re.compile(r"[^\w\s']", re.UNICODE)
_EDGE_APOS = re.compile(r"(^'+|'+$)")

# alignment operation codes
OK, SUB, DEL, INS = "=", "S", "D", "I"


def normalize_text(s):
    """Uppercase, drop punctuation (apostrophes inside words survive), split."""
    s = _PUNCT.sub(" ", s.upper())
    words = []
    for tok in s.split():
        tok = _EDGE_APOS.sub("", tok)
        if tok:
            words.append(tok)
    return words


@dataclass
class UtteranceScore:
    utt_id: str
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int
    alignment: list = field(default_factory=list)
    missing: bool = False

    @property
    def errors(self):
        return self.substitutions + self.deletions + self.insertions


@dataclass
class WERReport:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_words: int = 0
    utterances: list = field(default_factory=list)

    @property
    def errors(self):
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self):
        if self.ref_words == 0:
            raise ValueError("WER undefined for an empty reference")
        return 100.0 * self.errors / self.ref_words

    def add(self, utt):
        self.substitutions += utt.substitutions
        self.deletions += utt.deletions
        self.insertions += utt.insertions
        self.ref_words += utt.ref_words
        self.utterances.append(utt)

    def summary(self):
        return (f"%WER {self.wer:.2f} [ {self.errors} / {self.ref_words}, "
                f"{self.insertions} ins, {self.deletions} del, {self.substitutions} sub ]")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["utt_id", "ref_words", "sub", "del", "ins", "wer", "missing"])
        for u in self.utterances:
            w.writerow([u.utt_id, u.ref_words, u.substitutions, u.deletions, u.insertions,
                        f"{100.0 * u.errors / u.ref_words:.2f}", int(u.missing)])
        w.writerow(["TOTAL", self.ref_words, self.substitutions, self.deletions,
                    self.insertions, f"{self.wer:.2f}", ""])
        return buf.getvalue()


def align(reference, hypothesis):
    """Minimal-edit alignment of two word sequences.

    Returns a list of (op, ref_word, hyp_word) tuples. On equal cost the
    backtrace prefers substitution (or match), then deletion, then insertion.
    """
    n, m = len(reference), len(hypothesis)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        r = reference[i - 1]
        row, prev = d[i], d[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (r != hypothesis[j - 1])
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)

    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (reference[i - 1] != hypothesis[j - 1]):
            op = OK if reference[i - 1] == hypothesis[j - 1] else SUB
            ops.append((op, reference[i - 1], hypothesis[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            ops.append((DEL, reference[i - 1], None))
            i -= 1
        else:
            ops.append((INS, None, hypothesis[j - 1]))
            j -= 1
    ops.reverse()
    return ops


def wer(reference, hypothesis, utt_id=""):
    """Score one hypothesis against one reference (both word lists)."""
    if not reference:
        raise ValueError("empty reference: WER is undefined")
    ops = align(reference, hypothesis)
    counts = {SUB: 0, DEL: 0, INS: 0, OK: 0}
    for op, _, _ in ops:
        counts[op] += 1
    utt = UtteranceScore(utt_id, counts[SUB], counts[DEL], counts[INS], len(reference), ops)
    report = WERReport()
    report.add(utt)
    return report


def score_dataset(references, hypotheses):
    """Corpus WER: error counts are summed over utterances before dividing.

    ``references`` is an iterable of (utt_id, word list); ``hypotheses`` maps
    utt_id to a word list. A missing hypothesis scores as empty and is flagged.
    """
    report = WERReport()
    seen = set()
    for utt_id, ref in references:
        if utt_id in seen:
            raise ValueError(f"duplicate utterance id {utt_id!r}")
        seen.add(utt_id)
        missing = utt_id not in hypotheses
        if missing:
            log.warning("no hypothesis for %s; scoring as empty", utt_id)
        utt = wer(ref, [] if missing else hypotheses[utt_id], utt_id).utterances[0]
        utt.missing = missing
        report.add(utt)
    return report


def read_text_file(path):
    """Read ``<utt_id>\\t<text>`` lines into an ordered list of (utt_id, words)."""
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            utt_id, _, text = line.partition("\t")
            out.append((utt_id.strip(), normalize_text(text)))
    return out


def write_text_file(path, items):
    with open(path, "w", encoding="utf-8") as f:
        for utt_id, words in items:
            f.write(f"{utt_id}\t{' '.join(words)}\n")
