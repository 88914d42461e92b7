"""Token-passing beam search over the prefix tree with dynamic n-gram scores.

A token lives at (tree node, lattice node where its current word started)
and carries the acoustic score accumulated since that word began. The total
score of a token is the Viterbi score of its start node plus that acoustic
score. When a token sits on a word end, a word arc is emitted into the
lattice node for (next frame, LM history after the word).
"""

import math
from dataclasses import dataclass

import numpy as np

from ..lm.ngram import EOS
from .lattice import EPS, TIE_TOL, Lattice, LatticeError, best_path, prune_lattice


class DecodeError(ValueError):
    exit_code = 7


@dataclass(frozen=True)
class DecodeParams:
    beam: float = 16.0
    lattice_beam: float = 8.0
    acoustic_scale: float = 1.0
    word_insertion_penalty: float = 0.0
    max_active_tokens: int = 5000

    def validate(self):
        if not self.beam >= self.lattice_beam > 0:
            raise DecodeError(f"need beam >= lattice_beam > 0, got {self.beam}, {self.lattice_beam}")
        if not self.max_active_tokens > 0:
            raise DecodeError("max_active_tokens must be positive")
        if not self.acoustic_scale > 0:
            raise DecodeError("acoustic_scale must be positive")
        return self

    @classmethod
    def exhaustive(cls, **kw):
        """No pruning anywhere: exact Viterbi plus a full lattice."""
        return cls(beam=math.inf, lattice_beam=math.inf, max_active_tokens=10**12, **kw)


def decode(log_posteriors, graph, params=DecodeParams()):
    """1-best hypothesis and pruned lattice for a (T, K) matrix of log-posteriors.

    If pruning leaves no word sequence that ends on the last frame, the
    search is repeated with a wider beam, and finally with no pruning.
    """
    params.validate()
    x = np.asarray(log_posteriors, dtype=np.float64)
    if x.ndim != 2:
        raise DecodeError(f"posteriors must be 2-D, got shape {x.shape}")
    if x.shape[1] != graph.num_phones:
        raise DecodeError(f"posterior width {x.shape[1]} != {graph.num_phones} phones in the graph")
    if x.shape[0] < 1:
        raise DecodeError("need at least one frame")
    beam, max_active = params.beam, params.max_active_tokens
    for _ in range(3):
        lat = _search(x, graph, params, beam, max_active)
        if lat is not None:
            break
        beam, max_active = beam * 2, max_active * 4
    else:
        lat = _search(x, graph, params, math.inf, 10**12)
    if lat is None:
        raise DecodeError(f"no word sequence fits {x.shape[0]} frames")
    lat = prune_lattice(lat, params.lattice_beam)
    lat.validate()
    return best_path(lat), lat


def _search(x, graph, params, beam, max_active):
    T = x.shape[0]
    ac = (params.acoustic_scale * x).tolist()
    lm = graph.lm
    nodes = graph.nodes
    phone = [n.phone for n in nodes]
    children = [tuple(n.children.values()) for n in nodes]
    root_children = children[0]
    ends = {n.id: n.words for n in nodes if n.words}
    unk_ids = {nid for nid in graph.unk_nodes.values()}
    unk_entry = [(nid, graph.unk_entry[c]) for c, nid in sorted(graph.unk_nodes.items())]
    unk_cont = [(nid, graph.unk_continue + lp) for nid, lp in unk_entry]
    wip = params.word_insertion_penalty

    lat = Lattice()
    lat_key = {}                 # (frame, lm state) -> lattice node
    state_of, alpha = [], []
    arcs = {}                    # (src, dst, word) -> (am, lm)

    def lattice_node(frame, state):
        key = (frame, state)
        nid = lat_key.get(key)
        if nid is None:
            nid = lat.add_node(frame)
            lat_key[key] = nid
            state_of.append(state)
            alpha.append(-math.inf)
        return nid

    start = lattice_node(0, lm.initial_state())
    alpha[start] = 0.0
    starts_at = {0: [start]}
    tokens = {}
    for t in range(T):
        row = ac[t]
        new = {}
        for (n, s), am in tokens.items():
            for c in ((n,) + children[n]):
                v = am + row[phone[c]]
                k = (c, s)
                if v > new.get(k, -math.inf):
                    new[k] = v
            if n in unk_ids:
                for c, lp in unk_cont:
                    v = am + lp + row[phone[c]]
                    k = (c, s)
                    if v > new.get(k, -math.inf):
                        new[k] = v
        for s in starts_at.get(t, ()):
            if alpha[s] == -math.inf:
                continue
            for c in root_children:
                k = (c, s)
                v = row[phone[c]]
                if v > new.get(k, -math.inf):
                    new[k] = v
            for c, lp in unk_entry:
                k = (c, s)
                v = lp + row[phone[c]]
                if v > new.get(k, -math.inf):
                    new[k] = v
        if not new:
            return None
        scored = sorted(((alpha[k[1]] + v, k) for k, v in new.items()), key=lambda p: (-p[0], p[1]))
        best = scored[0][0]
        cutoff = best - beam
        kept = [k for sc, k in scored[:max_active] if sc >= cutoff]
        tokens = {k: new[k] for k in kept}

        # word ends after frame t
        for k in kept:
            n, s = k
            words = ends.get(n)
            if not words:
                continue
            am = tokens[k] + wip + (graph.unk_exit if n in unk_ids else 0.0)
            hist = state_of[s]
            for w in words:
                lms = lm.score(hist, w)
                total = alpha[s] + am + lms
                if total < cutoff:
                    continue
                e = lattice_node(t + 1, lm.next_state(hist, w))
                akey = (s, e, w)
                prev = arcs.get(akey)
                if prev is None or am > prev[0]:
                    arcs[akey] = (am, lms)
                if total > alpha[e]:
                    alpha[e] = total
                if e not in starts_at.setdefault(t + 1, []):
                    starts_at[t + 1].append(e)

    ends_T = [e for e in starts_at.get(T, ()) if alpha[e] > -math.inf]
    if not ends_T:
        return None
    final = lat.add_node(T)
    for e in ends_T:
        arcs[(e, final, EPS)] = (0.0, lm.score(state_of[e], EOS))
    for (s, e, w), (am, lms) in arcs.items():
        lat.add_arc(s, e, w, am, lms)
    lat.finals = [final]
    return lat


def brute_force_paths(log_posteriors, graph, acoustic_scale=1.0, word_insertion_penalty=0.0, max_words=None):
    """Every word sequence that fits the input, mapped to its best total score.

    Exhaustive over sequences and segmentations, so for tiny inputs only.
    """
    x = acoustic_scale * np.asarray(log_posteriors, dtype=np.float64)
    T = x.shape[0]
    lm = graph.lm
    prons = {}
    parent = {c: p.id for p in graph.nodes for c in p.children.values()}
    for node in graph.nodes:
        if node.words and not node.unk:
            path, cur = [], node.id
            while cur != 0:
                path.append(graph.nodes[cur].phone)
                cur = parent[cur]
            for w in node.words:
                prons.setdefault(w, []).append(tuple(reversed(path)))

    def align(pron, lo, hi):
        """Best monotone alignment of ``pron`` to frames [lo, hi), each phone >= 1 frame."""
        n, L = len(pron), hi - lo
        if n > L:
            return -math.inf
        d = [[-math.inf] * (L + 1) for _ in range(n + 1)]
        d[0][0] = 0.0
        for i in range(1, n + 1):
            for j in range(1, L + 1):
                stay = d[i][j - 1]
                move = d[i - 1][j - 1]
                d[i][j] = max(stay, move) + x[lo + j - 1, pron[i - 1]]
        return d[n][L]

    paths = {}

    def rec(t, hist, score, words):
        if t == T:
            total = score + lm.score(hist, EOS)
            if total > paths.get(words, -math.inf):
                paths[words] = total
            return
        if max_words is not None and len(words) >= max_words:
            return
        for w in sorted(prons):
            for e in range(t + 1, T + 1):
                a = max(align(p, t, e) for p in prons[w])
                if a == -math.inf:
                    continue
                rec(e, lm.next_state(hist, w), score + a + word_insertion_penalty + lm.score(hist, w), words + (w,))

    rec(0, lm.initial_state(), 0.0, ())
    return {w: v for w, v in paths.items() if v > -math.inf}


def brute_force_decode(log_posteriors, graph, acoustic_scale=1.0, word_insertion_penalty=0.0, max_words=None):
    """Best (score, words) by exhaustive search; ties go to the lexicographically smaller sequence."""
    paths = brute_force_paths(log_posteriors, graph, acoustic_scale, word_insertion_penalty, max_words)
    best = (-math.inf, ())
    for words in sorted(paths):
        total = paths[words]
        if total > best[0] + TIE_TOL:
            best = (total, words)
    if best[0] == -math.inf:
        raise LatticeError("no word sequence fits the input")
    return best
