"""CTDNN / CTDNN_SA acoustic models: assembly, frame cross-entropy training,
checkpoint averaging and log-posterior inference."""

import csv
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .features import FeatureMatrix
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import (Affine, AttentionContext, BatchNorm, Conv2d, FeatureMapAffine, Layer,
                        MaxPoolFreq, ReLU, ShapeError, TDNNF, TimeRestrictedAttention,
                        log_softmax, log_softmax_xent)

log = logging.getLogger(__name__)

PAPER_CONV_CHANNELS = (48, 48, 64, 64, 64, 128)
DESK_CONV_CHANNELS = (8, 8, 16, 16, 16, 32)
DEFAULT_TDNNF_OFFSETS = ((-1, 0, 1),) + ((-3, 0, 3),) * 8


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    feat_dim: int = 40
    embed_dim: int = 40
    conv_heights: tuple = (40, 40, 40, 20, 20, 10)
    conv_channels: tuple = PAPER_CONV_CHANNELS
    pool_after: tuple = (3, 5, 6)          # 1-based conv layer indices
    num_tdnnf_layers: int = 9
    tdnnf_hidden: int = 1024
    tdnnf_bottleneck: int = 128
    tdnnf_offsets: tuple = DEFAULT_TDNNF_OFFSETS
    attention: AttentionContext | None = None
    output_units: int = 64
    desk_scale: bool = False
    seed: int = 0

    @classmethod
    def desk(cls, **overrides):
        base = dict(conv_channels=DESK_CONV_CHANNELS, tdnnf_hidden=64, tdnnf_bottleneck=16,
                    desk_scale=True)
        base.update(overrides)
        return cls(**base)

    def with_attention(self, num_heads=15, left=15, right=6, key_dim=60, value_dim=40):
        return replace(self, attention=AttentionContext(left, right, num_heads, key_dim, value_dim))

    def validate(self):
        if len(self.conv_heights) != len(self.conv_channels):
            raise ConfigError("conv_heights and conv_channels differ in length")
        if len(self.tdnnf_offsets) != self.num_tdnnf_layers:
            raise ConfigError("need one offset tuple per tdnnf layer")
        n = len(self.conv_heights)
        if any(not 1 <= p <= n for p in self.pool_after):
            raise ConfigError(f"pool_after entries must be in 1..{n}")
        if self.conv_heights and self.conv_heights[0] != self.feat_dim:
            raise ConfigError("first conv height must equal the feature dim")
        for i in range(n):
            f = self.conv_heights[i]
            pooled = (i + 1) in self.pool_after
            if pooled and f % 2:
                raise ConfigError(f"cannot pool odd height {f} after conv{i + 1}")
            if i + 1 < n:
                want = f // 2 if pooled else f
                if self.conv_heights[i + 1] != want:
                    raise ConfigError(f"conv{i + 2} height {self.conv_heights[i + 1]} != {want}")
        if self.output_units < 2:
            raise ConfigError("need at least two output units")
        return self

    @property
    def conv_out_dim(self):
        if not self.conv_heights:
            return self.feat_dim
        f = self.conv_heights[-1] // (2 if len(self.conv_heights) in self.pool_after else 1)
        return f * self.conv_channels[-1]

    def to_dict(self):
        d = asdict(self)
        d["conv_heights"] = list(self.conv_heights)
        d["conv_channels"] = list(self.conv_channels)
        d["pool_after"] = list(self.pool_after)
        d["tdnnf_offsets"] = [list(o) for o in self.tdnnf_offsets]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("conv_heights", "conv_channels", "pool_after"):
            d[k] = tuple(d[k])
        d["tdnnf_offsets"] = tuple(tuple(o) for o in d["tdnnf_offsets"])
        if d.get("attention") is not None:
            d["attention"] = AttentionContext(**d["attention"])
        return cls(**d)


def closed_form_param_count(config):
    """Trainable parameter count from the config alone."""
    c = config
    total = c.feat_dim * c.feat_dim + c.feat_dim                   # shared input affine
    cin = 2 if c.embed_dim else 1
    for cout in c.conv_channels:
        total += 9 * cin * cout + 2 * cout                           # conv + batchnorm
        cin = cout
    din = c.conv_out_dim
    for offs in c.tdnnf_offsets:
        total += din * len(offs) * c.tdnnf_bottleneck + c.tdnnf_bottleneck * c.tdnnf_hidden
        total += 2 * c.tdnnf_hidden
        din = c.tdnnf_hidden
    if c.attention is not None:
        a = c.attention
        total += TimeRestrictedAttention.count_params(din, a.num_heads, a.key_dim, a.value_dim, din)
    total += din * c.output_units + c.output_units
    return total


class ConvBlock(Layer):
    """conv -> batchnorm -> ReLU [-> max-pool over frequency] [-> flatten]."""
    kind = "conv_block"

    def __init__(self, cin, cout, height, pool, flatten, rng, dtype, name):
        self.conv = Conv2d(cin, cout, height, rng, dtype=dtype, name=name)
        self.bn = BatchNorm(cout, dtype=dtype, name=f"{name}.bn")
        self.relu = ReLU()
        self.pool = MaxPoolFreq(2) if pool else None
        self.flatten = flatten

    def children(self):
        return [self.conv, self.bn, self.relu] + ([self.pool] if self.pool else [])

    def params(self):
        return self.conv.params() + self.bn.params()

    def buffers(self):
        return self.bn.buffers()

    def astype(self, dtype):
        self.conv.astype(dtype)
        self.bn.astype(dtype)

    def hyper(self):
        h = self.conv.hyper()
        h.update(pool=self.pool is not None, flatten=self.flatten)
        return h

    def forward(self, x, train=False):
        for layer in self.children():
            x = layer.forward(x, train)
        self.out_shape = x.shape
        if self.flatten:
            x = x.reshape(x.shape[0], x.shape[1], -1)
        return x

    def backward(self, dy):
        dy = dy.reshape(self.out_shape)
        for layer in reversed(self.children()):
            dy = layer.backward(dy)
        return dy


class AcousticModel:
    """Block list: input affine, conv blocks, tdnnf layers, [attention], output affine.

    The optional attention block adds its output to its input (a parameter-free bypass).
    """

    def __init__(self, config, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        self.iterations = 0
        self.loss_history = []
        rng = np.random.default_rng(config.seed)
        c = config
        maps = 2 if c.embed_dim else 1
        if c.embed_dim and c.embed_dim != c.feat_dim:
            raise ConfigError("speaker embedding dim must equal feature dim (shared input affine)")
        blocks = [("input", FeatureMapAffine(c.feat_dim, maps, rng, dtype=dtype, name="input"))]
        cin = maps
        n = len(c.conv_channels)
        for i, (h, cout) in enumerate(zip(c.conv_heights, c.conv_channels)):
            name = f"conv{i + 1}"
            blocks.append((name, ConvBlock(cin, cout, h, (i + 1) in c.pool_after, i == n - 1,
                                           rng, dtype, name)))
            cin = cout
        din = c.conv_out_dim
        for i, offs in enumerate(c.tdnnf_offsets):
            name = f"tdnnf{i + 1}"
            blocks.append((name, TDNNF(din, c.tdnnf_hidden, c.tdnnf_bottleneck, offs, rng,
                                       dropout_seed=c.seed * 1000 + i, dtype=dtype, name=name)))
            din = c.tdnnf_hidden
        if c.attention is not None:
            a = c.attention
            # own random stream and a zero output projection: at initialization the residual
            # attention block is the identity and the rest of the network equals the baseline
            att = TimeRestrictedAttention(din, a.num_heads, a.key_dim, a.value_dim, a.left, a.right, din,
                                          np.random.default_rng([config.seed, 1]), dtype=dtype,
                                          name="attention")
            att.Wo.value[...] = 0
            blocks.append(("attention", att))
        blocks.append(("output", Affine(din, c.output_units, rng, dtype=dtype, name="output")))
        self.names = [b[0] for b in blocks]
        self.blocks = [b[1] for b in blocks]

    # -- structure
    @property
    def has_attention(self):
        return "attention" in self.names

    def block(self, name):
        return self.blocks[self.names.index(name)]

    def layer_list(self):
        return [(name, b.kind) for name, b in zip(self.names, self.blocks)]

    def params(self):
        return [p for b in self.blocks for p in b.params()]

    def num_params(self):
        return sum(p.size for p in self.params())

    def tdnnf_layers(self):
        return [b for b in self.blocks if isinstance(b, TDNNF)]

    def set_dropout(self, rate):
        for b in self.tdnnf_layers():
            b.dropout.rate = rate

    def astype(self, dtype):
        for b in self.blocks:
            b.astype(dtype)
        self.dtype = dtype
        return self

    # -- state
    def state(self):
        """Ordered (name, array) list of parameters and buffers."""
        out = []
        for name, b in zip(self.names, self.blocks):
            for p in b.params():
                out.append((p.name, p.value))
            for k, v in b.buffers().items():
                out.append((f"{name}.{k}", v))
        return out

    def load_state(self, tensors):
        tensors = list(tensors)
        i = 0
        for name, b in zip(self.names, self.blocks):
            for p in b.params():
                tname, arr = tensors[i]
                if tname != p.name or arr.shape != p.value.shape:
                    raise ValueError(f"state mismatch at {p.name}: got {tname} {arr.shape}")
                p.value = np.array(arr, dtype=self.dtype)
                p.grad = np.zeros_like(p.value)
                i += 1
            target = b.bn if isinstance(b, (TDNNF, ConvBlock)) else b
            for k in b.buffers():
                tname, arr = tensors[i]
                if tname != f"{name}.{k}":
                    raise ValueError(f"state mismatch at {name}.{k}: got {tname}")
                setattr(target, k, np.array(arr, dtype=self.dtype))
                i += 1
        if i != len(tensors):
            raise ValueError(f"{len(tensors) - i} unused tensors in state")

    def copy_state(self):
        return [(n, a.copy()) for n, a in self.state()]

    def save(self, path):
        header = {"model_config": self.config.to_dict(),
                  "layers": [{"name": n, "type": b.kind, **b.hyper()}
                             for n, b in zip(self.names, self.blocks)],
                  "iterations": self.iterations}
        save_checkpoint(path, header, self.state())

    @classmethod
    def load(cls, path):
        header, tensors = load_checkpoint(path)
        model = cls(ModelConfig.from_dict(header["model_config"]))
        model.load_state(tensors)
        model.iterations = header.get("iterations", 0)
        return model

    # -- compute
    def forward(self, x, train=False):
        for name, b in zip(self.names, self.blocks):
            y = b.forward(x, train)
            # the attention block is residual: frame-local information bypasses the softmax mixing
            x = x + y if name == "attention" else y
        return x

    def backward(self, dy):
        for name, b in zip(reversed(self.names), reversed(self.blocks)):
            dx = b.backward(dy)
            dy = dy + dx if name == "attention" else dx
        return dy

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def constrain(self):
        for b in self.tdnnf_layers():
            b.constrain()


def build_model(config, dtype=np.float32):
    return AcousticModel(config, dtype)


# ---------------------------------------------------------------- speaker embeddings

@dataclass
class SpeakerEmbedding:
    speaker_id: str
    vector: np.ndarray


EMBED_SEED = 20201


def embedding_projection(dim_in=80, dim_out=40, seed=EMBED_SEED):
    """Fixed random matrix with orthonormal rows, shape (dim_out, dim_in)."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim_in, dim_out)))
    return q.T


def compute_speaker_embedding(features, dim=40, seed=EMBED_SEED):
    """Project concatenated per-speaker mean and variance to ``dim`` values."""
    if not features:
        raise ValueError("no features for speaker embedding")
    x = np.concatenate([f.data for f in features]).astype(np.float64)
    stats = np.concatenate([x.mean(axis=0), x.var(axis=0)])
    vec = embedding_projection(len(stats), dim, seed) @ stats
    return SpeakerEmbedding(features[0].speaker_id, vec.astype(np.float32))


def model_input(features, embedding):
    """(T, feat_dim + embed_dim) input rows: features with the embedding appended."""
    x = np.asarray(features.data, dtype=np.float32)
    if embedding is None:
        return x
    return np.hstack([x, np.broadcast_to(embedding.vector.astype(np.float32), (len(x), len(embedding.vector)))])


def forward_posteriors(model, features, embedding):
    """Per-frame log-posteriors (T x K) for one utterance, inference mode."""
    if isinstance(features, FeatureMatrix):
        if features.kind != "melspec" or features.dim != model.config.feat_dim:
            raise ShapeError(f"need {model.config.feat_dim}-dim melspec features, got "
                             f"{features.kind} x {features.dim}")
    if model.config.embed_dim:
        if embedding is None or len(embedding.vector) != model.config.embed_dim:
            raise ShapeError(f"need a {model.config.embed_dim}-dim speaker embedding")
    x = model_input(features, embedding if model.config.embed_dim else None)
    logits = model.forward(x[None].astype(model.dtype), train=False)[0]
    return log_softmax(logits.astype(np.float64))


# ---------------------------------------------------------------- training

@dataclass
class TrainConfig:
    lr_initial: float = 0.0005
    lr_final: float = 0.00005
    epochs: int = 8
    minibatch_size: int = 128
    chunk_sizes: tuple = (140, 100, 160)
    final_layer_lr_multiplier: float = 0.5
    models_to_average: int = 10
    speed_factors: tuple = (0.9, 1.0, 1.1)
    momentum: float = 0.9
    dropout_max: float = 0.2
    constrain_every: int = 4
    loss_reduction: str = "sum"
    max_param_change: float = 2.0
    sub_batch: int = 32
    valid_chunks: int = 32
    stats_chunks: int = 256
    seed: int = 0

    def __post_init__(self):
        vals = [self.lr_initial, self.lr_final, self.epochs, self.minibatch_size,
                self.models_to_average, self.constrain_every, self.sub_batch]
        if any(v <= 0 for v in vals) or any(c <= 0 for c in self.chunk_sizes):
            raise ConfigError("training hyperparameters must be positive")
        if not self.lr_final < self.lr_initial:
            raise ConfigError("lr_final must be smaller than lr_initial")
        if self.loss_reduction not in ("sum", "mean"):
            raise ConfigError("loss_reduction must be 'sum' or 'mean'")


def learning_rate(i, n, lr_initial=0.0005, lr_final=0.00005):
    """Exponential decay: lr_initial at i = 0, lr_final at i = n."""
    if n <= 0:
        return lr_initial
    return lr_initial * (lr_final / lr_initial) ** (i / n)


def dropout_rate(progress, peak=0.2):
    """0 -> peak -> 0, piecewise linear over training progress in [0, 1]."""
    progress = min(max(progress, 0.0), 1.0)
    return peak * (1.0 - abs(2.0 * progress - 1.0))


@dataclass
class Utterance:
    features: FeatureMatrix
    labels: np.ndarray

    @property
    def utt_id(self):
        return self.features.utterance_id

    @property
    def speaker_id(self):
        return self.features.speaker_id


@dataclass
class Chunk:
    x: np.ndarray
    labels: np.ndarray
    mask: np.ndarray


def make_chunks(utterances, embeddings, chunk_sizes, start=0):
    """Split utterances into chunks whose sizes cycle through ``chunk_sizes``.

    The last piece of an utterance is padded to its chunk size by repeating
    the final frame; padded frames are masked out of the loss.
    """
    chunks = []
    k = start
    for utt in utterances:
        if len(utt.labels) != utt.features.num_frames:
            raise ValueError(f"{utt.utt_id}: {len(utt.labels)} labels for {utt.features.num_frames} frames")
        emb = embeddings.get(utt.speaker_id) if embeddings is not None else None
        x = model_input(utt.features, emb)
        t = 0
        while t < len(x):
            size = chunk_sizes[k % len(chunk_sizes)]
            k += 1
            piece = x[t:t + size]
            lab = utt.labels[t:t + size]
            n = len(piece)
            mask = np.zeros(size, dtype=bool)
            mask[:n] = True
            if n < size:
                piece = np.vstack([piece, np.repeat(piece[-1:], size - n, axis=0)])
                lab = np.concatenate([lab, np.repeat(lab[-1:], size - n)])
            chunks.append(Chunk(piece, np.asarray(lab, dtype=np.int64), mask))
            t += size
    return chunks


def _minibatches(chunks, size, rng):
    by_len = {}
    for i in rng.permutation(len(chunks)):
        by_len.setdefault(len(chunks[i].labels), []).append(int(i))
    batches = []
    for length in sorted(by_len):
        idx = by_len[length]
        batches += [idx[j:j + size] for j in range(0, len(idx), size)]
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def _stack(chunks, idx, dtype):
    x = np.stack([chunks[i].x for i in idx]).astype(dtype)
    y = np.stack([chunks[i].labels for i in idx])
    m = np.stack([chunks[i].mask for i in idx])
    return x, y, m


def evaluate_loss(model, chunks, dtype=None, batch=32):
    """Masked mean frame cross-entropy in inference mode."""
    dtype = dtype or model.dtype
    by_len = {}
    for i, c in enumerate(chunks):
        by_len.setdefault(len(c.labels), []).append(i)
    total, count = 0.0, 0
    for length in sorted(by_len):
        idx = by_len[length]
        for j in range(0, len(idx), batch):
            x, y, m = _stack(chunks, idx[j:j + batch], dtype)
            loss, _ = log_softmax_xent(model.forward(x, train=False), y, m)
            total += loss * m.sum()
            count += m.sum()
    return float(total / count)


@dataclass
class TrainResult:
    model: AcousticModel
    curve: list = field(default_factory=list)     # (iteration, train_loss, valid_loss)
    final_states: list = field(default_factory=list)


def _set_lr_multipliers(model, mult):
    for p in model.params():
        p.lr_mult = 1.0
    for name in model.names[-2:]:
        for p in model.block(name).params():
            p.lr_mult = mult


def train(model, train_set, valid_set, embeddings, config=TrainConfig(), progress=None):
    """Frame cross-entropy training with momentum SGD.

    ``train_set``/``valid_set`` are lists of :class:`Utterance`. The model is
    trained in place; the returned model is the uniform average of the last
    ``models_to_average`` iterations.
    """
    if not train_set:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    chunks = make_chunks(train_set, embeddings, config.chunk_sizes)
    valid = make_chunks(valid_set, embeddings, config.chunk_sizes) if valid_set else []
    if len(valid) > config.valid_chunks:
        pick = np.random.default_rng(config.seed + 1).choice(len(valid), config.valid_chunks, replace=False)
        valid = [valid[i] for i in sorted(pick)]

    _set_lr_multipliers(model, config.final_layer_lr_multiplier)
    params = model.params()
    velocity = [np.zeros_like(p.value) for p in params]
    epochs = [_minibatches(chunks, config.minibatch_size, rng) for _ in range(config.epochs)]
    total = sum(len(e) for e in epochs)
    history = deque(maxlen=config.models_to_average)
    curve = []
    it = 0
    for epoch, batches in enumerate(epochs):
        for idx in batches:
            lr = learning_rate(it, total - 1, config.lr_initial, config.lr_final)
            model.set_dropout(dropout_rate(it / max(total - 1, 1), config.dropout_max))
            model.zero_grad()
            frames = int(sum(chunks[i].mask.sum() for i in idx))
            loss_sum = 0.0
            for j in range(0, len(idx), config.sub_batch):
                x, y, m = _stack(chunks, idx[j:j + config.sub_batch], model.dtype)
                logits = model.forward(x, train=True)
                loss, grad = log_softmax_xent(logits, y, m)
                n = int(m.sum())
                loss_sum += loss * n
                scale = n if config.loss_reduction == "sum" else n / frames
                model.backward(grad * scale)
            steps = [-lr * p.lr_mult * p.grad for p in params]
            norm = math.sqrt(sum(float((s.astype(np.float64) ** 2).sum()) for s in steps))
            if config.max_param_change and norm > config.max_param_change:
                shrink = config.max_param_change / norm
                steps = [s * shrink for s in steps]
            for p, v, s in zip(params, velocity, steps):
                v *= config.momentum
                v += s
                p.value += v.astype(p.value.dtype, copy=False)
            it += 1
            model.iterations += 1
            if it % config.constrain_every == 0:
                model.constrain()
            train_loss = loss_sum / frames
            epoch_end = idx is batches[-1]
            valid_loss = evaluate_loss(model, valid) if (valid and epoch_end) else float("nan")
            curve.append((it, train_loss, valid_loss))
            model.loss_history.append((train_loss, valid_loss))
            history.append(model.copy_state())
            if not (np.isfinite(train_loss)):
                raise FloatingPointError(f"training diverged at iteration {it}")
            if progress:
                progress(epoch, it, total, train_loss, valid_loss)
    avg = average_states(list(history))
    model.load_state(avg)
    model.set_dropout(0.0)
    recompute_batchnorm_stats(model, chunks, config.sub_batch, config.stats_chunks,
                              np.random.default_rng(config.seed + 2))
    return TrainResult(model, curve, list(history))


def _batchnorms(model):
    for b in model.blocks:
        if isinstance(b, (TDNNF, ConvBlock)):
            yield b.bn


def recompute_batchnorm_stats(model, chunks, batch=32, max_chunks=256, rng=None):
    """Replace batchnorm running statistics with exact averages over ``chunks``.

    Averaged weights never saw the running statistics accumulated during
    training, so inference would normalize with stale values. This runs the
    model in training mode over (a sample of) the data and sets each running
    mean/variance to the average of the per-batch statistics.
    """
    if not chunks:
        return model
    idx = np.arange(len(chunks))
    if len(idx) > max_chunks:
        idx = np.sort((rng or np.random.default_rng(0)).choice(len(idx), max_chunks, replace=False))
    by_len = {}
    for i in idx:
        by_len.setdefault(len(chunks[i].labels), []).append(int(i))
    bns = list(_batchnorms(model))
    saved = [bn.momentum for bn in bns]
    k = 0
    try:
        for length in sorted(by_len):
            group = by_len[length]
            for j in range(0, len(group), batch):
                k += 1
                for bn in bns:
                    bn.momentum = (k - 1) / k          # running value becomes the mean over batches
                x, _, _ = _stack(chunks, group[j:j + batch], model.dtype)
                model.forward(x, train=True)
    finally:
        for bn, m in zip(bns, saved):
            bn.momentum = m
    return model


def average_states(states):
    if not states:
        raise ValueError("nothing to average")
    names = [n for n, _ in states[0]]
    for s in states[1:]:
        if [n for n, _ in s] != names or any(a.shape != b.shape for (_, a), (_, b) in zip(s, states[0])):
            raise ValueError("states come from different model configs")
    out = []
    for i, name in enumerate(names):
        acc = np.zeros(states[0][i][1].shape, dtype=np.float64)
        for s in states:
            acc += s[i][1]
        out.append((name, (acc / len(states)).astype(states[0][i][1].dtype)))
    return out


def average_checkpoints(models):
    """Uniform parameter average of models sharing one config."""
    if not models:
        raise ValueError("no models to average")
    cfg = models[0].config
    if any(m.config != cfg for m in models[1:]):
        raise ConfigError("cannot average models with different configs")
    out = AcousticModel(cfg, models[0].dtype)
    out.load_state(average_states([m.state() for m in models]))
    out.iterations = max(m.iterations for m in models)
    return out


def write_loss_curve(path, curve):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iteration", "train_loss", "valid_loss"])
        for it, tr, va in curve:
            w.writerow([it, f"{tr:.6f}", f"{va:.6f}"])


# ---------------------------------------------------------------- labels

def read_labels(path):
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                out[parts[0]] = np.array([int(v) for v in parts[1:]], dtype=np.int64)
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: bad label") from e
    return out


def write_labels(path, labels):
    with open(path, "w", encoding="utf-8") as f:
        for utt, lab in labels.items():
            f.write(f"{utt} {' '.join(str(int(v)) for v in lab)}\n")


def perturb_labels(labels, factor, frame_samples, hop_samples, num_frames):
    """Frame labels for a signal sped up by ``factor``.

    Each new frame takes the label of the original frame whose center is
    nearest to the new frame's center mapped back to original time.
    """
    half = frame_samples / 2.0
    centers = (np.arange(num_frames) * hop_samples + half) * factor
    src = np.clip(np.round((centers - half) / hop_samples).astype(np.int64), 0, len(labels) - 1)
    return np.asarray(labels)[src]
