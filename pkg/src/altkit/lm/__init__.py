from .ngram import (BOS, EOS, NGramModel, OOVError, attach_unk, load_arpa, parse_arpa,
                    perplexity, read_corpus, train_ngram)
from .rnnlm import RecurrentLM, RNNLMConfig, RNNLMError, train_rnnlm

__all__ = ["BOS", "EOS", "NGramModel", "OOVError", "attach_unk", "load_arpa", "parse_arpa",
           "perplexity", "read_corpus", "train_ngram",
           "RecurrentLM", "RNNLMConfig", "RNNLMError", "train_rnnlm"]
