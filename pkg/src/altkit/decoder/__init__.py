"""Prefix-tree token-passing decoder, word lattices and lattice rescoring."""

from .graph import DecodeGraph, GraphError, TreeNode, VocabularyError, build_graph
from .lattice import (EPS, Arc, Hypothesis, Lattice, LatticeError, best_path, forward_backward,
                      lattice_stats, lattice_to_dot, load_lattice, parse_lattice, prune_lattice,
                      trim, word_sequences)
from .rescore import rescore_ngram, rescore_rnnlm
from .search import DecodeError, DecodeParams, brute_force_decode, brute_force_paths, decode

__all__ = [
    "DecodeGraph", "GraphError", "TreeNode", "VocabularyError", "build_graph",
    "EPS", "Arc", "Hypothesis", "Lattice", "LatticeError", "best_path", "forward_backward",
    "lattice_stats", "lattice_to_dot", "load_lattice", "parse_lattice", "prune_lattice", "trim",
    "word_sequences", "rescore_ngram", "rescore_rnnlm",
    "DecodeError", "DecodeParams", "brute_force_decode", "brute_force_paths", "decode",
]
