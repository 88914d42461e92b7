"""Lattice rescoring: n-gram history expansion and pruned RNNLM rescoring."""

import math

from ..lm.ngram import EOS
from .lattice import Lattice, forward_backward, trim


def _is_final_eps(arc, finals):
    return arc.is_eps and arc.dst in finals


def rescore_ngram(lattice, lm):
    """Replace LM scores with ``lm`` scores, splitting nodes by LM history.

    Acoustic scores are copied untouched. Epsilon arcs into final nodes
    carry the end-of-sentence probability; other epsilon arcs score 0.
    Raises ``OOVError`` for words the LM cannot map.
    """
    lattice.validate()
    out = lattice.out_arcs()
    finals = set(lattice.finals)
    new = Lattice()
    ids = {}

    def node(old, hist):
        key = (old, hist)
        if key not in ids:
            ids[key] = new.add_node(lattice.frames[old])
        return ids[key]

    new.start = node(lattice.start, lm.initial_state())
    pending = {lattice.start: [lm.initial_state()]}
    for n in lattice.topo_order():
        for hist in pending.pop(n, ()):
            src = ids[(n, hist)]
            for a in out.get(n, ()):
                if _is_final_eps(a, finals):
                    dst_hist, lms = None, lm.score(hist, EOS)
                elif a.is_eps:
                    dst_hist, lms = hist, 0.0
                else:
                    dst_hist, lms = lm.next_state(hist, a.word), lm.score(hist, a.word)
                fresh = (a.dst, dst_hist) not in ids
                dst = node(a.dst, dst_hist)
                if fresh:
                    pending.setdefault(a.dst, []).append(dst_hist)
                new.add_arc(src, dst, a.word, a.am, lms)
    new.finals = [i for (old, _), i in ids.items() if old in finals]
    result = trim(new)
    result.validate()
    return result


def rescore_rnnlm(lattice, rnnlm, weight=0.5, pruning_beam=math.inf, merge_order=3):
    """Interpolate arc LM scores with a recurrent LM along expanded histories.

    New arc LM score = (1 - weight) * existing + weight * RNNLM log-prob.
    Paths whose last ``merge_order`` words agree share one node (and the
    recurrent state of the best path into it). A node is dropped when its
    forward score plus the input lattice's backward score falls more than
    ``pruning_beam`` below the best such estimate at its frame.
    """
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"interpolation weight must be in [0, 1], got {weight}")
    lattice.validate()
    if weight == 0.0:
        return Lattice(list(lattice.frames), list(lattice.arcs), lattice.start, list(lattice.finals))
    _, beta = forward_backward(lattice)
    out = lattice.out_arcs()
    finals = set(lattice.finals)
    last_frame = lattice.num_frames

    new = Lattice()
    info = {}          # (old, hist) -> [new id, forward score, rnn state]
    by_old = {}
    dist_cache = {}

    def log_dist(key):
        d = dist_cache.get(key)
        if d is None:
            d = dist_cache[key] = rnnlm.log_distribution(info[key][2])
        return d

    def visit(old, hist, score, state):
        key = (old, hist)
        rec = info.get(key)
        if rec is None:
            info[key] = [new.add_node(lattice.frames[old]), score, state]
            by_old.setdefault(old, []).append(hist)
        elif score > rec[1]:
            rec[1], rec[2] = score, state
        return info[key][0]

    new.start = visit(lattice.start, (), 0.0, rnnlm.initial_state())
    # topological order is frame-sorted and word arcs advance in time, so every
    # node of a frame has its final forward score before the frame is expanded
    order = lattice.topo_order()
    frames_order = {}
    for n in order:
        frames_order.setdefault(lattice.frames[n], []).append(n)
    for f in sorted(frames_order):
        group = frames_order[f]
        if pruning_beam < math.inf and f < last_frame:
            ests = [(info[(n, h)][1] + beta[n], n, h) for n in group for h in by_old.get(n, ())]
            if ests:
                best = max(e for e, _, _ in ests)
                for e, n, h in ests:
                    if e < best - pruning_beam:
                        by_old[n].remove(h)
        for n in group:
            for hist in list(by_old.get(n, ())):
                key = (n, hist)
                src, score, state = info[key]
                for a in out.get(n, ()):
                    if a.is_eps and not _is_final_eps(a, finals):
                        dst = visit(a.dst, hist, score + a.am + a.lm, state)
                        new.add_arc(src, dst, a.word, a.am, a.lm)
                        continue
                    word = EOS if a.is_eps else a.word
                    rnn_lp = float(log_dist(key)[rnnlm.index(word)])
                    lms = (1.0 - weight) * a.lm + weight * rnn_lp
                    if a.is_eps:
                        nh, nstate = hist, state
                    else:
                        nh = (hist + (a.word,))[-merge_order:] if merge_order > 0 else ()
                        nstate = rnnlm.advance(state, a.word)
                    dst = visit(a.dst, nh, score + a.am + lms, nstate)
                    new.add_arc(src, dst, a.word, a.am, lms)
    alive = {info[(n, h)][0] for n in by_old for h in by_old[n]}
    new.arcs = [a for a in new.arcs if a.src in alive]
    new.finals = [info[(n, h)][0] for n in finals for h in by_old.get(n, ())]
    result = trim(new)
    result.validate()
    return result
