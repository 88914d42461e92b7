"""Backoff n-gram language models: interpolated Kneser-Ney training, scoring,
perplexity, unknown-word attachment and ARPA text I/O."""

import math
import re
from collections import defaultdict

from ..lexicon import UNK

BOS = "<s>"
EOS = "</s>"
LOG10 = math.log(10.0)
ARPA_FLOOR = -99.0


class OOVError(KeyError):
    pass


def read_corpus(path):
    """One sentence per line; blank lines are skipped."""
    from ..scoring import normalize_text
    sentences = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            words = normalize_text(line)
            if words:
                sentences.append(words)
    return sentences


class NGramModel:
    """ARPA-style backoff model. Probabilities are natural-log internally.

    ``probs[k]`` maps k-gram tuples to ln P(w | h); ``backoffs`` maps
    history tuples to ln beta(h).
    """

    def __init__(self, order, probs, backoffs, unigram_reserve=0.0, unk_model=None):
        self.order = order
        self.probs = probs
        self.backoffs = backoffs
        self.unigram_reserve = unigram_reserve
        self.unk_model = unk_model
        self._cache = {}

    @property
    def vocab(self):
        return {g[0] for g in self.probs[1] if g[0] != BOS}

    @property
    def has_unk(self):
        return (UNK,) in self.probs[1]

    def words(self):
        """Vocabulary without sentence markers, sorted."""
        return sorted(w for w in self.vocab if w != EOS)

    # -- histories as decoder states
    def initial_state(self):
        return (BOS,) if self.order > 1 else ()

    def next_state(self, state, word):
        if self.order == 1:
            return ()
        return (tuple(state) + (self.map_word(word),))[-(self.order - 1):]

    def map_word(self, word):
        if (word,) in self.probs[1]:
            return word
        if self.has_unk:
            return UNK
        raise OOVError(word)

    def score(self, history, word):
        """ln P(word | history) using the longest matching history."""
        key = (tuple(history), word)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        w = self.map_word(word)
        h = tuple(history)[-(self.order - 1):] if self.order > 1 else ()
        if self.has_unk:
            h = tuple(x if (x,) in self.probs[1] else UNK for x in h)
        total = 0.0
        while True:
            p = self.probs[len(h) + 1].get(h + (w,))
            if p is not None:
                total += p
                break
            total += self.backoffs.get(h, 0.0)
            h = h[1:]
        self._cache[key] = total
        return total

    def sentence_logprob(self, words):
        state, total = self.initial_state(), 0.0
        for w in list(words) + [EOS]:
            total += self.score(state, w)
            state = self.next_state(state, w)
        return total

    def compute_backoffs(self):
        """Set every beta(h) so each history's distribution sums to one."""
        self.backoffs = {}
        self._cache = {}
        for k in range(2, self.order + 1):
            seen = defaultdict(list)
            for g in self.probs[k]:
                seen[g[:-1]].append(g[-1])
            for h, ws in seen.items():
                num = 1.0 - sum(math.exp(self.probs[k][h + (w,)]) for w in ws)
                den = 1.0 - sum(math.exp(self.score(h[1:], w)) for w in ws)
                if den <= 1e-15:
                    self.backoffs[h] = 0.0
                elif num <= 0.0:
                    self.backoffs[h] = -math.inf
                else:
                    self.backoffs[h] = math.log(num) - math.log(den)
        self._cache = {}

    # -- ARPA
    def to_arpa(self):
        lines = [f"# unigram_reserve={self.unigram_reserve!r}", "", "\\data\\"]
        for k in range(1, self.order + 1):
            lines.append(f"ngram {k}={len(self.probs[k])}")
        for k in range(1, self.order + 1):
            lines += ["", f"\\{k}-grams:"]
            for g in sorted(self.probs[k]):
                p = self.probs[k][g]
                fields = [_fmt(p), " ".join(g)]
                if k < self.order and g in self.backoffs:
                    fields.append(_fmt(self.backoffs[g]))
                lines.append("\t".join(fields))
        lines += ["", "\\end\\", ""]
        return "\n".join(lines)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_arpa())


def _fmt(lnp):
    if lnp == -math.inf:
        return f"{ARPA_FLOOR}"
    return repr(lnp / LOG10)


def _parse_log10(s):
    v = float(s)
    return -math.inf if v <= ARPA_FLOOR else v * LOG10


def parse_arpa(text):
    reserve = 0.0
    m = re.search(r"unigram_reserve=([^\s]+)", text.split("\\data\\")[0])
    if m:
        reserve = float(m.group(1))
    probs, backoffs = {}, {}
    order, section = 0, None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("ngram "):
            order = max(order, int(line[6:].split("=")[0]))
            continue
        hdr = re.match(r"\\(\d+)-grams:", line)
        if hdr:
            section = int(hdr.group(1))
            probs[section] = {}
            continue
        if line == "\\end\\":
            break
        if section is None or line.startswith("\\"):
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if "\t" in line:
            lp, words = parts[0], parts[1].split()
            bo = parts[2] if len(parts) > 2 else None
        else:
            lp, words = parts[0], parts[1:1 + section]
            bo = parts[1 + section] if len(parts) > 1 + section else None
        g = tuple(words)
        probs[section][g] = _parse_log10(lp)
        if bo is not None:
            backoffs[g] = _parse_log10(bo)
    if order == 0:
        raise ValueError("not an ARPA file: no \\data\\ section")
    for k in range(1, order + 1):
        probs.setdefault(k, {})
    return NGramModel(order, probs, backoffs, reserve)


def load_arpa(path):
    with open(path, encoding="utf-8") as f:
        return parse_arpa(f.read())


# ---------------------------------------------------------------- training

def _padded(sentence):
    return [BOS] + list(sentence) + [EOS]


def train_ngram(corpus, n, smoothing="kneser_ney", discount=0.75, vocab=()):
    """Estimate an order-``n`` model from a list of word lists.

    ``smoothing`` is ``"kneser_ney"`` (interpolated, fixed discount) or
    ``"ml"`` (raw relative frequencies, for testing). ``vocab`` adds words
    that get only the uniform floor mass.
    """
    if n not in (1, 2, 3, 4):
        raise ValueError(f"order must be 1..4, got {n}")
    corpus = [list(s) for s in corpus if s]
    if not corpus:
        raise ValueError("empty corpus")
    if smoothing not in ("kneser_ney", "ml"):
        raise ValueError(f"unknown smoothing {smoothing!r}")
    ml = smoothing == "ml"
    d = 0.0 if ml else discount

    raw = {k: defaultdict(int) for k in range(1, n + 1)}
    for s in corpus:
        toks = _padded(s)
        for k in range(1, n + 1):
            for i in range(len(toks) - k + 1):
                g = tuple(toks[i:i + k])
                if g == (BOS,):
                    continue
                raw[k][g] += 1

    counts = {n: raw[n]}
    for k in range(1, n):
        if ml:
            counts[k] = raw[k]
            continue
        cont = defaultdict(int)
        for g in raw[k + 1]:
            cont[g[1:]] += 1
        counts[k] = {g: (c if g[0] == BOS else cont[g]) for g, c in raw[k].items()}

    words = sorted({g[0] for g in raw[1]} | {w for w in vocab if w not in (BOS,)})
    probs = {k: {} for k in range(1, n + 1)}

    total1 = sum(counts[1].values())
    reserve = 0.0 if ml else d * sum(1 for c in counts[1].values() if c > 0) / total1
    p1 = {}
    for w in words:
        p1[w] = max(counts[1].get((w,), 0) - d, 0.0) / total1 + reserve / len(words)
    probs[1] = {(w,): (math.log(p) if p > 0 else -math.inf) for w, p in p1.items()}
    probs[1][(BOS,)] = -math.inf

    gammas = {}
    for k in range(2, n + 1):
        denom, types = defaultdict(int), defaultdict(int)
        for g, c in counts[k].items():
            denom[g[:-1]] += c
            types[g[:-1]] += 1
        gammas[k] = {h: d * types[h] / denom[h] for h in denom}
        for g, c in sorted(counts[k].items()):
            h = g[:-1]
            p = max(c - d, 0.0) / denom[h] + gammas[k][h] * _interp(probs, gammas, h[1:], g[-1])
            probs[k][g] = math.log(p) if p > 0 else -math.inf

    # interpolated KN: beta(h) equals the interpolation weight gamma(h), which
    # stays meaningful even for histories followed by every known word
    backoffs = {h: (math.log(g) if g > 0 else -math.inf) for k in gammas for h, g in gammas[k].items()}
    return NGramModel(n, probs, backoffs, reserve)


def _interp(probs, gammas, h, w):
    """Interpolated lower-order P(w | h) while training."""
    if not h:
        return math.exp(probs[1][(w,)])
    hit = probs[len(h) + 1].get(h + (w,))
    if hit is not None:
        return math.exp(hit)
    lower = _interp(probs, gammas, h[1:], w)
    gamma = gammas[len(h) + 1].get(h)
    return lower if gamma is None else gamma * lower


# ---------------------------------------------------------------- queries

def perplexity(model, corpus):
    total, n = 0.0, 0
    for s in corpus:
        total += model.sentence_logprob(s)
        n += len(s) + 1
    if n == 0:
        raise ValueError("empty corpus")
    return math.exp(-total / n)


def attach_unk(model, unk_model=None):
    """Add ``<unk>`` by re-spreading the unigram floor mass over one more word."""
    if model.has_unk:
        raise ValueError("model already has <unk>")
    if model.unigram_reserve <= 0:
        raise ValueError("model has no discount reserve to give <unk>")
    vocab = [g for g in model.probs[1] if g[0] != BOS]
    v = len(vocab)
    r = model.unigram_reserve
    probs = {k: dict(t) for k, t in model.probs.items()}
    shift = r / (v + 1) - r / v
    for g in vocab:
        probs[1][g] = math.log(math.exp(probs[1][g]) + shift)
    probs[1][(UNK,)] = math.log(r / (v + 1))
    out = NGramModel(model.order, probs, dict(model.backoffs), r, unk_model)
    # push the changed lower-order mass through every explicit higher-order
    # entry: P'(w|h) = P(w|h) + beta(h) * (P'(w|h') - P(w|h')), which keeps
    # each history normalized with the same backoff weights
    for k in range(2, model.order + 1):
        out._cache = {}
        for g, lp in model.probs[k].items():
            h, w = g[:-1], g[-1]
            beta = model.backoffs.get(h, -math.inf)
            if beta == -math.inf:
                continue
            delta = math.exp(out.score(h[1:], w)) - math.exp(model.score(h[1:], w))
            p = math.exp(lp) + math.exp(beta) * delta
            probs[k][g] = math.log(p) if p > 0 else -math.inf
    out._cache = {}
    return out
