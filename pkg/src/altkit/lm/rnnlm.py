"""Single-layer tanh recurrent LM with tied input/output embeddings.

The state is the hidden vector after reading the history; the zero vector is
the initial state. P(w | state) = softmax(E state + c) and reading word w
moves the state to tanh(state W + E[w] + b).
"""

import math
from dataclasses import dataclass

import numpy as np

from ..lexicon import UNK
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from .ngram import EOS, OOVError


class RNNLMError(ValueError):
    pass


@dataclass(frozen=True)
class RNNLMConfig:
    dim: int = 64
    epochs: int = 10
    learning_rate: float = 0.01
    batch_size: int = 32
    bptt: int = 20
    add_unk: bool = True
    grad_clip: float = 5.0
    seed: int = 0


class RecurrentLM:
    def __init__(self, vocab, E, W, b, c):
        self.vocab = list(vocab)
        self._index = {w: i for i, w in enumerate(self.vocab)}
        self.E, self.W, self.b, self.c = E, W, b, c
        self.history = []       # per-epoch held-out perplexity

    @property
    def dim(self):
        return self.E.shape[1]

    @property
    def has_unk(self):
        return UNK in self._index

    def index(self, word):
        i = self._index.get(word)
        if i is None:
            if not self.has_unk:
                raise OOVError(word)
            i = self._index[UNK]
        return i

    def initial_state(self):
        return np.zeros(self.dim)

    def log_distribution(self, state):
        z = self.E @ state + self.c
        z = z - z.max()
        return z - math.log(np.exp(z).sum())

    def advance(self, state, word):
        return np.tanh(state @ self.W + self.E[self.index(word)] + self.b)

    def score_step(self, state, word):
        """(ln P(word | state), next state). Pure function of its inputs."""
        lp = float(self.log_distribution(state)[self.index(word)])
        return lp, self.advance(state, word)

    def sentence_logprob(self, words):
        state, total = self.initial_state(), 0.0
        for w in list(words):
            lp, state = self.score_step(state, w)
            total += lp
        return total + float(self.log_distribution(state)[self.index(EOS)])

    def params(self):
        return {"E": self.E, "W": self.W, "b": self.b, "c": self.c}

    def save(self, path):
        header = {"kind": "rnnlm", "vocab": self.vocab, "history": self.history}
        save_checkpoint(path, header, list(self.params().items()))

    @classmethod
    def load(cls, path):
        header, tensors = load_checkpoint(path)
        if header.get("kind") != "rnnlm":
            raise RNNLMError(f"{path}: not an RNNLM checkpoint")
        t = {n: a.astype(np.float64) for n, a in tensors}
        model = cls(header["vocab"], t["E"], t["W"], t["b"], t["c"])
        model.history = header.get("history", [])
        return model


def perplexity(model, corpus):
    total, count = 0.0, 0
    for sent in corpus:
        total += model.sentence_logprob(sent)
        count += len(sent) + 1
    return math.exp(-total / count)


def _batch(model, sentences):
    """Input ids (B, L), target ids (B, L+1), mask (B, L+1)."""
    L = max(len(s) for s in sentences)
    B = len(sentences)
    x = np.zeros((B, max(L, 1)), dtype=np.int64)
    y = np.zeros((B, L + 1), dtype=np.int64)
    m = np.zeros((B, L + 1))
    eos = model.index(EOS)
    for i, s in enumerate(sentences):
        ids = [model.index(w) for w in s]
        x[i, :len(ids)] = ids
        y[i, :len(ids)] = ids
        y[i, len(ids)] = eos
        m[i, :len(ids) + 1] = 1.0
    return x[:, :L], y, m


def loss_and_grads(params, x, y, m, bptt=None):
    """Mean token cross-entropy and parameter gradients for one padded batch.

    Gradients through the recurrence are cut every ``bptt`` steps.
    """
    E, W, b, c = params["E"], params["W"], params["b"], params["c"]
    B, L = x.shape
    D = E.shape[1]
    hs = [np.zeros((B, D))]
    for t in range(L):
        hs.append(np.tanh(hs[-1] @ W + E[x[:, t]] + b))
    count = m.sum()
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    loss = 0.0
    dh_next = np.zeros((B, D))
    for t in range(L, -1, -1):
        h = hs[t]
        z = h @ E.T + c
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss -= float((logp[np.arange(B), y[:, t]] * m[:, t]).sum())
        dz = np.exp(logp)
        dz[np.arange(B), y[:, t]] -= 1.0
        dz *= (m[:, t] / count)[:, None]
        grads["E"] += dz.T @ h
        grads["c"] += dz.sum(axis=0)
        dh = dz @ E + dh_next
        if t == 0:
            break
        da = dh * (1.0 - h * h)
        grads["W"] += hs[t - 1].T @ da
        grads["b"] += da.sum(axis=0)
        np.add.at(grads["E"], x[:, t - 1], da)
        dh_next = da @ W.T
        if bptt and (L - t + 1) % bptt == 0:
            dh_next = np.zeros((B, D))
    return loss / count, grads


def train_rnnlm(corpus, config=RNNLMConfig(), valid=None, progress=None):
    """Adam on token cross-entropy; records held-out perplexity per epoch."""
    corpus = [list(s) for s in corpus if s]
    if not corpus:
        raise RNNLMError("empty corpus")
    words = sorted({w for s in corpus for w in s} - {UNK})
    vocab = words + [EOS] + ([UNK] if config.add_unk else [])
    rng = np.random.default_rng(config.seed)
    V, D = len(vocab), config.dim
    scale = 1.0 / math.sqrt(D)
    model = RecurrentLM(vocab,
                        rng.uniform(-scale, scale, (V, D)),
                        rng.uniform(-scale, scale, (D, D)),
                        np.zeros(D), np.zeros(V))
    params = model.params()
    mom = {k: np.zeros_like(v) for k, v in params.items()}
    vel = {k: np.zeros_like(v) for k, v in params.items()}
    beta1, beta2, step = 0.9, 0.999, 0
    order = sorted(range(len(corpus)), key=lambda i: len(corpus[i]))
    for epoch in range(config.epochs):
        batches = [order[i:i + config.batch_size] for i in range(0, len(order), config.batch_size)]
        rng.shuffle(batches)
        for idx in batches:
            x, y, m = _batch(model, [corpus[i] for i in idx])
            _, grads = loss_and_grads(params, x, y, m, config.bptt)
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > config.grad_clip:
                for g in grads.values():
                    g *= config.grad_clip / norm
            step += 1
            for k, p in params.items():
                mom[k] = beta1 * mom[k] + (1 - beta1) * grads[k]
                vel[k] = beta2 * vel[k] + (1 - beta2) * grads[k] ** 2
                mhat = mom[k] / (1 - beta1 ** step)
                vhat = vel[k] / (1 - beta2 ** step)
                p -= config.learning_rate * mhat / (np.sqrt(vhat) + 1e-8)
        if valid:
            ppl = perplexity(model, valid)
            model.history.append(ppl)
            if progress:
                progress(f"rnnlm epoch {epoch + 1}/{config.epochs} valid ppl {ppl:.3f}")
    return model

