"""Desk-scale lyrics transcription toolkit: features, CTDNN(+self-attention)
acoustic models, n-gram and recurrent LMs, lattice decoding and WER scoring."""

__version__ = "0.1.0"
