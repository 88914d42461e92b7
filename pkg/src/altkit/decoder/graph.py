"""Lexicon prefix tree with an optional unknown-word phone loop."""

import math
from dataclasses import dataclass, field

from ..lexicon import UNK, make_unk_model
from ..lm.ngram import BOS, EOS


class GraphError(ValueError):
    exit_code = 4


class VocabularyError(GraphError):
    exit_code = 5


@dataclass
class TreeNode:
    id: int
    phone: int                       # posterior column; -1 for the root
    children: dict = field(default_factory=dict)
    words: list = field(default_factory=list)
    unk: bool = False


@dataclass
class DecodeGraph:
    """Phone-level prefix tree. One HMM state per phone, with a self-loop.

    ``unk_nodes`` maps a phone column to its node in the unknown-word loop;
    ``unk_entry``/``unk_continue``/``unk_exit`` are log-probabilities of the
    loop's pronunciation model.
    """
    nodes: list
    phones: list
    lm: object
    unk_nodes: dict = field(default_factory=dict)
    unk_entry: dict = field(default_factory=dict)
    unk_continue: float = -math.inf
    unk_exit: float = -math.inf

    @property
    def root(self):
        return self.nodes[0]

    @property
    def has_unk(self):
        return bool(self.unk_nodes)

    @property
    def num_phones(self):
        return len(self.phones)

    def leaves(self):
        return [n for n in self.nodes if n.words]


def build_graph(lexicon, lm, phones=None, unk_model=None, use_unk=None):
    """Prefix tree over the lexicon, checked against the LM vocabulary.

    ``phones`` fixes the phone -> posterior column order (default: sorted
    lexicon inventory). The unknown-word loop is added when the LM has
    ``<unk>`` (or ``use_unk`` says so).
    """
    if not lexicon.prons:
        raise GraphError("empty lexicon")
    phones = list(phones) if phones is not None else lexicon.phone_list()
    col = {p: i for i, p in enumerate(phones)}
    missing = sorted(set(lexicon.phones) - set(col))
    if missing:
        raise GraphError(f"lexicon phones {missing} have no posterior column")
    if use_unk is None:
        use_unk = lm.has_unk
    if use_unk and not lm.has_unk:
        raise VocabularyError("unknown-word loop requested but the LM has no <unk>")

    lm_words = {w for w in lm.vocab if w not in (BOS, EOS, UNK)}
    not_in_lex = sorted(lm_words - set(lexicon.prons))
    if not_in_lex and not use_unk:
        raise VocabularyError(f"LM words without pronunciation: {not_in_lex[:10]}")
    not_in_lm = sorted(w for w in lexicon.prons if w not in lm_words)
    if not_in_lm and not lm.has_unk:
        raise VocabularyError(f"lexicon words missing from the LM: {not_in_lm[:10]}")

    nodes = [TreeNode(0, -1)]
    for word in sorted(lexicon.prons):
        if word not in lm_words:
            continue
        for pron in lexicon.prons[word]:
            cur = nodes[0]
            for ph in pron:
                c = col[ph]
                nxt = cur.children.get(c)
                if nxt is None:
                    nxt = len(nodes)
                    nodes.append(TreeNode(nxt, c))
                    cur.children[c] = nxt
                cur = nodes[nxt]
            if word not in cur.words:
                cur.words.append(word)

    graph = DecodeGraph(nodes, phones, lm)
    if use_unk:
        um = unk_model or lm.unk_model or make_unk_model(lexicon)
        for ph, p in sorted(um.phone_probs.items()):
            c = col[ph]
            nid = len(nodes)
            nodes.append(TreeNode(nid, c, words=[UNK], unk=True))
            graph.unk_nodes[c] = nid
            graph.unk_entry[c] = math.log(p)
        graph.unk_continue = math.log(um.continue_prob)
        graph.unk_exit = math.log1p(-um.continue_prob)
    return graph
