"""Waveform I/O, log mel filterbanks, MFCCs, per-speaker CMVN, splicing and
speed perturbation."""

import os
import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft


class WavError(ValueError):
    """Base class for unreadable WAV files."""


class UnsupportedChannelsError(WavError):
    pass


class UnsupportedCodecError(WavError):
    pass


class TruncatedWavError(WavError):
    pass


class FeatureError(ValueError):
    pass


@dataclass
class AudioSignal:
    samples: np.ndarray
    sample_rate: int
    speaker_id: str = ""
    utterance_id: str = ""

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class FeatureConfig:
    frame_length_ms: float = 25.0
    hop_ms: float = 15.0
    num_mel_banks: int = 40
    num_cepstra: int = 13
    low_freq: float = 20.0
    high_freq: float = 0.0       # <= 0 means offset from Nyquist
    dither: float = 1e-5
    delta_window: int = 2

    def __post_init__(self):
        if not self.frame_length_ms > self.hop_ms > 0:
            raise ValueError("need frame_length_ms > hop_ms > 0")
        if self.num_mel_banks < self.num_cepstra:
            raise ValueError("num_mel_banks must be >= num_cepstra")

    def frame_samples(self, sample_rate):
        return int(round(sample_rate * self.frame_length_ms / 1000.0))

    def hop_samples(self, sample_rate):
        return int(round(sample_rate * self.hop_ms / 1000.0))


KINDS = ("melspec", "mfcc", "mfcc+deltas", "spliced")


@dataclass
class FeatureMatrix:
    data: np.ndarray
    config: FeatureConfig = field(default_factory=FeatureConfig)
    speaker_id: str = ""
    utterance_id: str = ""
    kind: str = "melspec"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.data.ndim != 2:
            raise ValueError("feature data must be frames x dims")

    @property
    def num_frames(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]


# ---------------------------------------------------------------- wav i/o

def load_wav(path):
    """Read a 16-bit PCM mono RIFF/WAVE file into an AudioSignal scaled to [-1, 1]."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise TruncatedWavError(f"{path}: missing RIFF/WAVE header")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid, size = struct.unpack("<4sI", raw[pos:pos + 8])
        body = raw[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise TruncatedWavError(f"{path}: short fmt chunk")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            if len(body) < size:
                raise TruncatedWavError(f"{path}: header claims {size} data bytes, found {len(body)}")
            data = body
            break
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise TruncatedWavError(f"{path}: no fmt chunk")
    if data is None:
        raise TruncatedWavError(f"{path}: no data chunk")
    codec, channels, rate, _, _, bits = fmt
    if codec != 1 or bits != 16:
        raise UnsupportedCodecError(f"{path}: codec {codec} / {bits} bits unsupported (need 16-bit PCM)")
    if channels != 1:
        raise UnsupportedChannelsError(f"{path}: {channels} channels unsupported (need mono)")
    pcm = np.frombuffer(data[:len(data) // 2 * 2], dtype="<i2")
    name = os.path.splitext(os.path.basename(path))[0]
    return AudioSignal(pcm.astype(np.float64) / 32768.0, rate, utterance_id=name)


def write_wav(path, signal):
    pcm = np.clip(np.round(np.asarray(signal.samples) * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    header = struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(payload), b"WAVE",
                         b"fmt ", 16, 1, 1, signal.sample_rate, signal.sample_rate * 2, 2, 16,
                         b"data", len(payload))
    with open(path, "wb") as f:
        f.write(header + payload)


# ---------------------------------------------------------------- framing

def num_frames(num_samples, frame_samples, hop_samples):
    if num_samples < frame_samples:
        return 0
    return 1 + (num_samples - frame_samples) // hop_samples


def hz_to_mel(f):
    return 1127.0 * np.log1p(np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * np.expm1(np.asarray(m, dtype=np.float64) / 1127.0)


def _freq_bounds(config, sample_rate):
    nyq = sample_rate / 2.0
    high = config.high_freq if config.high_freq > 0 else nyq + config.high_freq
    if not 0 <= config.low_freq < high <= nyq:
        raise FeatureError(f"bad frequency range {config.low_freq}..{high} Hz")
    return config.low_freq, high


def mel_band_centers(config, sample_rate):
    """Center frequencies (Hz) of the triangular mel filters."""
    low, high = _freq_bounds(config, sample_rate)
    lo, hi = hz_to_mel(low), hz_to_mel(high)
    step = (hi - lo) / (config.num_mel_banks + 1)
    return mel_to_hz(lo + step * np.arange(1, config.num_mel_banks + 1))


def mel_filterbank(config, sample_rate, n_fft):
    low, high = _freq_bounds(config, sample_rate)
    lo, hi = hz_to_mel(low), hz_to_mel(high)
    step = (hi - lo) / (config.num_mel_banks + 1)
    edges = lo + step * np.arange(config.num_mel_banks + 2)
    fft_mel = hz_to_mel(np.arange(n_fft // 2 + 1) * sample_rate / n_fft)
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (fft_mel - left) / (center - left)
    down = (right - fft_mel) / (right - center)
    return np.maximum(0.0, np.minimum(up, down))


def _dither_rng(signal):
    return np.random.default_rng(zlib.crc32(signal.utterance_id.encode("utf-8")))


def _frames(signal, config):
    fs = signal.sample_rate
    flen, hop = config.frame_samples(fs), config.hop_samples(fs)
    n = num_frames(len(signal.samples), flen, hop)
    if n == 0:
        raise FeatureError(f"signal of {len(signal.samples)} samples is shorter than one frame ({flen})")
    x = signal.samples
    if config.dither > 0:
        x = x + config.dither * _dither_rng(signal).uniform(-1.0, 1.0, size=len(x))
    idx = np.arange(flen)[None, :] + hop * np.arange(n)[:, None]
    frames = x[idx]
    frames = frames - frames.mean(axis=1, keepdims=True)
    return frames * np.hamming(flen)


def mel_spectrogram(signal, config=FeatureConfig()):
    """Log mel filterbank energies, frames x num_mel_banks."""
    frames = _frames(signal, config)
    n_fft = 1 << (frames.shape[1] - 1).bit_length()
    power = np.abs(np.fft.rfft(frames, n=n_fft)) ** 2
    energies = power @ mel_filterbank(config, signal.sample_rate, n_fft).T
    data = np.log(np.maximum(energies, np.finfo(np.float64).tiny))
    return FeatureMatrix(data, config, signal.speaker_id, signal.utterance_id, "melspec")


def deltas(x, window=2):
    """Regression deltas over +/-window frames with edge replication."""
    n = len(x)
    padded = np.concatenate([np.repeat(x[:1], window, 0), x, np.repeat(x[-1:], window, 0)])
    num = np.zeros_like(x, dtype=np.float64)
    for k in range(1, window + 1):
        num += k * (padded[window + k:window + k + n] - padded[window - k:window - k + n])
    return num / (2.0 * sum(k * k for k in range(1, window + 1)))


def mfcc(signal, config=FeatureConfig()):
    mel = mel_spectrogram(signal, config)
    cep = scipy.fft.dct(mel.data, type=2, norm="ortho", axis=1)[:, :config.num_cepstra]
    return replace(mel, data=cep, kind="mfcc")


def mfcc_with_deltas(signal, config=FeatureConfig()):
    """13 static cepstra followed by their first and second order deltas."""
    base = mfcc(signal, config)
    d1 = deltas(base.data, config.delta_window)
    d2 = deltas(d1, config.delta_window)
    return replace(base, data=np.hstack([base.data, d1, d2]), kind="mfcc+deltas")


# ---------------------------------------------------------------- cmvn

@dataclass
class SpeakerStats:
    speaker_id: str
    count: int = 0
    sum: np.ndarray | None = None
    sum_sq: np.ndarray | None = None

    def accumulate(self, features):
        if features.speaker_id != self.speaker_id:
            raise FeatureError(f"stats for {self.speaker_id!r} got frames of {features.speaker_id!r}")
        x = features.data.astype(np.float64)
        if self.sum is None:
            self.sum = np.zeros(x.shape[1])
            self.sum_sq = np.zeros(x.shape[1])
        self.sum += x.sum(axis=0)
        self.sum_sq += (x * x).sum(axis=0)
        self.count += len(x)
        return self

    @property
    def mean(self):
        return self.sum / self.count

    @property
    def var(self):
        return np.maximum(self.sum_sq / self.count - self.mean ** 2, 0.0)


def speaker_stats(feature_list, speaker_id=None):
    if not feature_list:
        raise FeatureError("no features to accumulate")
    stats = SpeakerStats(speaker_id if speaker_id is not None else feature_list[0].speaker_id)
    for feats in feature_list:
        stats.accumulate(feats)
    return stats


def apply_cmvn(features, stats, norm_vars=False):
    if stats.count <= 0:
        raise FeatureError("empty speaker stats")
    if stats.speaker_id != features.speaker_id:
        raise FeatureError(f"stats for {stats.speaker_id!r} applied to {features.speaker_id!r}")
    data = features.data - stats.mean
    if norm_vars:
        data = data / np.sqrt(np.maximum(stats.var, 1e-10))
    return replace(features, data=data)


# ---------------------------------------------------------------- splicing

def splice(features, left_ctx=4, right_ctx=4):
    """Concatenate each frame with its neighbours; edges replicate the end frames."""
    x = features.data
    if len(x) == 0:
        raise FeatureError("cannot splice empty features")
    n = len(x)
    idx = np.clip(np.arange(n)[:, None] + np.arange(-left_ctx, right_ctx + 1)[None, :], 0, n - 1)
    out = x[idx].reshape(n, -1)
    kind = "spliced" if left_ctx or right_ctx else features.kind
    return replace(features, data=out, kind=kind)


# ---------------------------------------------------------------- augmentation

def speed_perturb(signal, factor):
    """Resample by linear interpolation so the result plays ``factor`` times faster."""
    if not factor > 0:
        raise ValueError(f"speed factor must be positive, got {factor}")
    x = signal.samples
    n_out = int(round(len(x) / factor))
    if factor == 1.0:
        out = x.copy()
    else:
        pos = np.arange(n_out) * factor
        out = np.interp(pos, np.arange(len(x)), x)
    return AudioSignal(out, signal.sample_rate, signal.speaker_id, signal.utterance_id)


# ---------------------------------------------------------------- manifests & archives

@dataclass
class ManifestEntry:
    utt_id: str
    wav_path: str
    speaker_id: str
    transcript: str


def read_manifest(path):
    entries = []
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
            utt, wav, spk, text = parts
            if not os.path.isabs(wav):
                wav = os.path.join(base, wav)
            entries.append(ManifestEntry(utt, wav, spk, text))
    return entries


def write_manifest(path, entries, relative_to=None):
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            wav = os.path.relpath(e.wav_path, relative_to) if relative_to else e.wav_path
            f.write(f"{e.utt_id}\t{wav}\t{e.speaker_id}\t{e.transcript}\n")


ARCHIVE_MAGIC = b"ALTFEAT1"


def write_feature_archive(path, matrices):
    """Write matrices to ``path`` and an ``<utt_id> <offset>`` index to ``path.idx``."""
    index = []
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        for fm in matrices:
            offset = f.tell()
            uid = fm.utterance_id.encode("utf-8")
            spk = fm.speaker_id.encode("utf-8")
            data = np.ascontiguousarray(fm.data, dtype="<f4")
            f.write(ARCHIVE_MAGIC)
            f.write(struct.pack("<H", len(uid)) + uid)
            f.write(struct.pack("<H", len(spk)) + spk)
            kind = fm.kind.encode("ascii")
            f.write(struct.pack("<B", len(kind)) + kind)
            f.write(struct.pack("<II", *data.shape))
            f.write(data.tobytes())
            index.append((fm.utterance_id, offset))
    os.replace(tmp, path)
    with open(path + ".idx", "w", encoding="utf-8") as f:
        for uid, off in index:
            f.write(f"{uid} {off}\n")


def _read_entry(f, config):
    if f.read(len(ARCHIVE_MAGIC)) != ARCHIVE_MAGIC:
        raise ValueError("bad feature archive magic")
    (n,) = struct.unpack("<H", f.read(2))
    uid = f.read(n).decode("utf-8")
    (n,) = struct.unpack("<H", f.read(2))
    spk = f.read(n).decode("utf-8")
    (n,) = struct.unpack("<B", f.read(1))
    kind = f.read(n).decode("ascii")
    rows, cols = struct.unpack("<II", f.read(8))
    data = np.frombuffer(f.read(4 * rows * cols), dtype="<f4").reshape(rows, cols)
    return FeatureMatrix(data.astype(np.float32), config, spk, uid, kind)


def read_feature_archive(path, config=FeatureConfig()):
    """Read every matrix of an archive, in file order."""
    out = []
    size = os.path.getsize(path)
    with open(path, "rb") as f:
        while f.tell() < size:
            out.append(_read_entry(f, config))
    return out


def read_feature(path, utt_id, config=FeatureConfig()):
    """Random access through the ``.idx`` file."""
    with open(path + ".idx", encoding="utf-8") as f:
        offsets = dict(line.split() for line in f if line.strip())
    with open(path, "rb") as f:
        f.seek(int(offsets[utt_id]))
        return _read_entry(f, config)
