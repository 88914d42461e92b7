"""Word lattices: validation, best path, pruning, statistics and export."""

import heapq
import math
import sys
from collections import defaultdict
from dataclasses import dataclass, field

EPS = "<eps>"
TIE_TOL = 1e-9


class LatticeError(ValueError):
    exit_code = 6


@dataclass(frozen=True)
class Arc:
    src: int
    dst: int
    word: str          # EPS for word-boundary bookkeeping arcs
    am: float
    lm: float

    @property
    def score(self):
        return self.am + self.lm

    @property
    def is_eps(self):
        return self.word == EPS


@dataclass
class Lattice:
    """``frames[i]`` is the frame index of node ``i``; node ``start`` is unique.

    Final nodes are the nodes listed in ``finals`` (all at the last frame).
    """
    frames: list = field(default_factory=list)
    arcs: list = field(default_factory=list)
    start: int = 0
    finals: list = field(default_factory=list)

    @property
    def num_nodes(self):
        return len(self.frames)

    @property
    def num_arcs(self):
        return len(self.arcs)

    @property
    def num_frames(self):
        return max(self.frames) if self.frames else 0

    def add_node(self, frame):
        self.frames.append(int(frame))
        return len(self.frames) - 1

    def add_arc(self, src, dst, word, am, lm):
        arc = Arc(src, dst, word, float(am), float(lm))
        self.arcs.append(arc)
        return arc

    def out_arcs(self):
        out = defaultdict(list)
        for a in self.arcs:
            out[a.src].append(a)
        return out

    def in_arcs(self):
        inc = defaultdict(list)
        for a in self.arcs:
            inc[a.dst].append(a)
        return inc

    def topo_order(self):
        """Nodes in topological order (ties broken by frame, then id)."""
        indeg = [0] * self.num_nodes
        out = self.out_arcs()
        for a in self.arcs:
            indeg[a.dst] += 1
        ready = [(self.frames[n], n) for n in range(self.num_nodes) if indeg[n] == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            _, n = heapq.heappop(ready)
            order.append(n)
            for a in out.get(n, ()):
                indeg[a.dst] -= 1
                if indeg[a.dst] == 0:
                    heapq.heappush(ready, (self.frames[a.dst], a.dst))
        if len(order) != self.num_nodes:
            raise LatticeError("lattice has a cycle")
        return order

    def validate(self, require_connected=True):
        """Acyclicity, time monotonicity, unique start, reachability."""
        n = self.num_nodes
        if n == 0:
            raise LatticeError("empty lattice")
        if not 0 <= self.start < n or self.frames[self.start] != 0:
            raise LatticeError("start node must exist at frame 0")
        for a in self.arcs:
            if not (0 <= a.src < n and 0 <= a.dst < n):
                raise LatticeError(f"arc {a} references a missing node")
            df = self.frames[a.dst] - self.frames[a.src]
            if a.is_eps:
                if df != 0:
                    raise LatticeError(f"epsilon arc {a} crosses frames")
            elif df <= 0:
                raise LatticeError(f"arc {a} does not advance in time")
            if not (math.isfinite(a.am) and math.isfinite(a.lm)):
                raise LatticeError(f"arc {a} has a non-finite score")
        last = self.num_frames
        for f in self.finals:
            if self.frames[f] != last:
                raise LatticeError(f"final node {f} is not at the last frame")
        self.topo_order()
        if require_connected and self.arcs:
            fwd = self._reach(self.start, self.out_arcs(), "dst")
            bwd = set()
            inc = self.in_arcs()
            for f in self.finals:
                bwd |= self._reach(f, inc, "src")
            dead = [i for i in range(n) if i not in fwd or i not in bwd]
            if dead:
                raise LatticeError(f"nodes {dead[:5]} are not on a start-final path")
        return self

    @staticmethod
    def _reach(origin, adj, attr):
        seen, stack = {origin}, [origin]
        while stack:
            for a in adj.get(stack.pop(), ()):
                nxt = getattr(a, attr)
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    def has_path(self):
        return bool(self.finals) and any(
            f in self._reach(self.start, self.out_arcs(), "dst") for f in self.finals)

    # -- serialization
    def to_text(self):
        lines = [f"N {i} {fr}" for i, fr in enumerate(self.frames)]
        lines += [f"F {f}" for f in sorted(self.finals)]
        lines += [f"{a.src} {a.dst} {a.word} {a.am!r} {a.lm!r}" for a in self.arcs]
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())


def parse_lattice(text):
    """Inverse of :meth:`Lattice.to_text`. Node ids must be dense."""
    frames, finals, arcs = {}, [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "N":
                frames[int(parts[1])] = int(parts[2])
            elif parts[0] == "F":
                finals.append(int(parts[1]))
            else:
                arcs.append(Arc(int(parts[0]), int(parts[1]), parts[2], float(parts[3]), float(parts[4])))
        except (IndexError, ValueError) as e:
            raise LatticeError(f"line {lineno}: malformed lattice line {line!r}") from e
    if sorted(frames) != list(range(len(frames))):
        raise LatticeError("node ids are not dense")
    lat = Lattice([frames[i] for i in range(len(frames))], arcs, 0, finals)
    if not finals and frames:
        last = lat.num_frames
        out = lat.out_arcs()
        lat.finals = [i for i, fr in enumerate(lat.frames) if fr == last and i not in out]
    return lat


def load_lattice(path):
    with open(path, encoding="utf-8") as f:
        return parse_lattice(f.read())


@dataclass
class Hypothesis:
    words: tuple
    score: float
    alignment: list     # (word, start_frame, end_frame) per non-epsilon arc
    am_score: float = 0.0
    lm_score: float = 0.0

    @property
    def text(self):
        return " ".join(self.words)


def _better(score, words, best_score, best_words):
    if best_score is None or score > best_score + TIE_TOL:
        return True
    if score >= best_score - TIE_TOL and words < best_words:
        return True
    return False


def best_path(lattice):
    """Highest-scoring start->final path by one sweep in topological order.

    Scores within 1e-9 are ties; the lexicographically smaller word
    sequence wins.
    """
    if lattice.num_nodes == 0 or not lattice.finals:
        raise LatticeError("empty lattice")
    out = lattice.out_arcs()
    best = {lattice.start: (0.0, (), None)}
    for n in lattice.topo_order():
        if n not in best:
            continue
        score, words, _ = best[n]
        for a in out.get(n, ()):
            cand = (score + a.score, words if a.is_eps else words + (a.word,))
            cur = best.get(a.dst)
            if cur is None or _better(cand[0], cand[1], cur[0], cur[1]):
                best[a.dst] = (cand[0], cand[1], a)
    end = None
    for f in sorted(lattice.finals):
        if f in best and (end is None or _better(best[f][0], best[f][1], best[end][0], best[end][1])):
            end = f
    if end is None:
        raise LatticeError("no path from start to a final node")
    path, n = [], end
    while best[n][2] is not None:
        a = best[n][2]
        path.append(a)
        n = a.src
    path.reverse()
    align = [(a.word, lattice.frames[a.src], lattice.frames[a.dst]) for a in path if not a.is_eps]
    am = sum(a.am for a in path)
    lm = sum(a.lm for a in path)
    return Hypothesis(best[end][1], best[end][0], align, am, lm)


def forward_backward(lattice):
    """Viterbi forward (best start->n) and backward (best n->final) scores."""
    order = lattice.topo_order()
    out = lattice.out_arcs()
    alpha = [-math.inf] * lattice.num_nodes
    beta = [-math.inf] * lattice.num_nodes
    alpha[lattice.start] = 0.0
    for n in order:
        if alpha[n] == -math.inf:
            continue
        for a in out.get(n, ()):
            alpha[a.dst] = max(alpha[a.dst], alpha[n] + a.score)
    for f in lattice.finals:
        beta[f] = 0.0
    for n in reversed(order):
        for a in out.get(n, ()):
            if beta[a.dst] > -math.inf:
                beta[n] = max(beta[n], a.score + beta[a.dst])
    return alpha, beta


def prune_lattice(lattice, beam):
    """Keep arcs on some path within ``beam`` of the best; drop dead nodes.

    Nodes are renumbered in topological order, so the result is canonical.
    """
    if not lattice.has_path():
        return trim(lattice)
    alpha, beta = forward_backward(lattice)
    best = max(beta[lattice.start], -math.inf)
    keep = [a for a in lattice.arcs
            if alpha[a.src] + a.score + beta[a.dst] >= best - beam - TIE_TOL]
    return trim(Lattice(list(lattice.frames), keep, lattice.start, list(lattice.finals)))


def trim(lattice):
    """Remove nodes that are not on a start->final path, renumber canonically."""
    fwd = Lattice._reach(lattice.start, lattice.out_arcs(), "dst")
    inc = lattice.in_arcs()
    bwd = set()
    for f in lattice.finals:
        bwd |= Lattice._reach(f, inc, "src")
    alive = (fwd & bwd) | {lattice.start}
    order = [n for n in lattice.topo_order() if n in alive]
    new_id = {n: i for i, n in enumerate(order)}
    arcs = [Arc(new_id[a.src], new_id[a.dst], a.word, a.am, a.lm)
            for a in lattice.arcs if a.src in alive and a.dst in alive and a.src in bwd]
    arcs.sort(key=lambda a: (a.src, a.dst, a.word))
    finals = sorted(new_id[f] for f in lattice.finals if f in alive and f in fwd)
    return Lattice([lattice.frames[n] for n in order], arcs, new_id[lattice.start], finals)


def lattice_stats(lattice, limit=10**6):
    """(num_nodes, num_arcs, num_distinct_word_sequences, exact).

    Sequence counting is exact up to ``limit``; beyond it the count is a
    lower bound and ``exact`` is False.
    """
    out = lattice.out_arcs()
    finals = set(lattice.finals)
    memo = {}
    overflow = False

    def suffixes(n):
        nonlocal overflow
        if n in memo:
            return memo[n]
        seqs = {()} if n in finals else set()
        for a in out.get(n, ()):
            for s in suffixes(a.dst):
                seqs.add(s if a.is_eps else (a.word,) + s)
                if len(seqs) > limit:
                    overflow = True
                    break
            if overflow:
                break
        memo[n] = seqs
        return seqs

    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 10 * lattice.num_nodes + 1000))
    try:
        count = len(suffixes(lattice.start)) if lattice.num_nodes else 0
    finally:
        sys.setrecursionlimit(old)
    return lattice.num_nodes, lattice.num_arcs, min(count, limit), not overflow


def word_sequences(lattice):
    """All distinct word sequences (small lattices only)."""
    out = lattice.out_arcs()
    finals = set(lattice.finals)
    result = set()
    stack = [(lattice.start, ())]
    while stack:
        n, words = stack.pop()
        if n in finals:
            result.add(words)
        for a in out.get(n, ()):
            stack.append((a.dst, words if a.is_eps else words + (a.word,)))
    return result


def lattice_to_dot(lattice):
    """Graphviz text; nodes labeled by frame, arcs ``word/am:lm``."""
    lines = ["digraph lattice {", "  rankdir=LR;"]
    finals = set(lattice.finals)
    for i, fr in enumerate(lattice.frames):
        shape = "doublecircle" if i in finals else "circle"
        lines.append(f'  n{i} [label="{fr}", shape={shape}];')
    for a in sorted(lattice.arcs, key=lambda a: (a.src, a.dst, a.word, a.am, a.lm)):
        lines.append(f'  n{a.src} -> n{a.dst} [label="{a.word}/{a.am:.3f}:{a.lm:.3f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
