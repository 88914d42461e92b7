"""Attention-weight profiles: extraction, head sorting, summaries and exports."""

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .acoustic import build_model, closed_form_param_count, model_input


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class AttentionProfile:
    """``weights[h, j]`` is head h's mean weight on relative offset ``j - left``."""
    weights: np.ndarray
    left: int
    right: int
    model_id: str = ""
    dataset_id: str = ""
    head_ids: tuple = field(default=())
    frames: int = 0

    def __post_init__(self):
        if not self.head_ids:
            object.__setattr__(self, "head_ids", tuple(range(len(self.weights))))

    @property
    def num_heads(self):
        return self.weights.shape[0]

    @property
    def offsets(self):
        return list(range(-self.left, self.right + 1))


def extract_profile(model, utterances, embeddings=None, model_id="", dataset_id=""):
    """Average attention weights over frames whose window lies fully inside the utterance.

    ``utterances`` holds FeatureMatrix objects (or anything with ``.data``
    and ``.speaker_id``); ``embeddings`` maps speaker id -> SpeakerEmbedding.
    """
    if not model.has_attention:
        raise AnalysisError("model has no attention layer")
    att = model.block("attention")
    L, R = att.left, att.right
    total = np.zeros((att.num_heads, L + R + 1))
    count = 0
    for feats in utterances:
        T = len(feats.data)
        if T < L + R + 1:
            continue
        emb = embeddings.get(feats.speaker_id) if (embeddings is not None and model.config.embed_dim) else None
        x = model_input(feats, emb)
        model.forward(x[None].astype(model.dtype), train=False)
        w = att.last_weights[0].astype(np.float64)          # (H, T, W)
        inner = w[:, L:T - R, :]
        total += inner.sum(axis=1)
        count += inner.shape[1]
    if count == 0:
        raise AnalysisError(f"no utterance has at least {L + R + 1} frames")
    return AttentionProfile(total / count, L, R, model_id, dataset_id, frames=count)


def sort_heads(profile):
    """Heads ascending by weight on the leftmost bin; stable in the original order."""
    order = sorted(range(profile.num_heads), key=lambda h: (profile.weights[h, 0], h))
    return replace(profile, weights=profile.weights[order],
                   head_ids=tuple(profile.head_ids[h] for h in order))


def summarize(profile):
    """(mean over heads per bin, median of that mean vector)."""
    if profile.num_heads < 1:
        raise AnalysisError("profile has no heads")
    avg = profile.weights.mean(axis=0)
    return avg, float(np.median(avg))


def head_entropy(profile):
    """Entropy (nats) of each head's profile; ln(L+R+1) means uniform."""
    w = np.clip(profile.weights, 1e-300, None)
    return -(profile.weights * np.log(w)).sum(axis=1)


def decay_slopes(profile):
    """Least-squares slope of log mean weight against |offset|, left and right of 0.

    A steeper (more negative) slope means weight falls off faster with distance.
    """
    avg, _ = summarize(profile)
    logw = np.log(np.clip(avg, 1e-300, None))
    offs = np.array(profile.offsets)

    def slope(mask):
        d = np.abs(offs[mask])
        if len(d) < 2:
            return math.nan
        return float(np.polyfit(d, logw[mask], 1)[0])

    return slope(offs <= 0), slope(offs >= 0)


def profile_report(profile):
    """Computed metrics for the report; nothing here is asserted."""
    avg, med = summarize(profile)
    left, right = decay_slopes(profile)
    argmax = [int(profile.offsets[j]) for j in profile.weights.argmax(axis=1)]
    return {
        "heads": profile.num_heads,
        "frames": profile.frames,
        "average_argmax_offset": int(profile.offsets[int(avg.argmax())]),
        "median": med,
        "head_argmax_offsets": argmax,
        "head_entropy": [float(e) for e in head_entropy(profile)],
        "uniform_entropy": math.log(len(profile.offsets)),
        "left_decay_slope": left,
        "right_decay_slope": right,
    }


def profile_to_csv(profile):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["head"] + [str(o) for o in profile.offsets])
    for hid, row in zip(profile.head_ids, profile.weights):
        w.writerow([hid] + [repr(float(v)) for v in row])
    return buf.getvalue()


def read_profile_csv(text, model_id="", dataset_id=""):
    rows = list(csv.reader(io.StringIO(text)))
    offsets = [int(o) for o in rows[0][1:]]
    heads = tuple(int(r[0]) for r in rows[1:])
    weights = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return AttentionProfile(weights, -offsets[0], offsets[-1], model_id, dataset_id, heads)


def profile_to_svg(profile, title=""):
    """Two panels: heatmap of heads (bottom to top) and the head average with its median."""
    H, W = profile.weights.shape
    cell_w, cell_h = 24, max(6, min(24, 360 // max(H, 1)))
    pad_l, pad_t = 50, 30
    heat_h = H * cell_h
    plot_top = pad_t + heat_h + 40
    plot_h = 160
    width = pad_l + W * cell_w + 30
    height = plot_top + plot_h + 40
    vmax = float(profile.weights.max()) or 1.0
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<text x="{pad_l}" y="18" font-size="13" font-family="sans-serif">{_esc(title)}</text>']
    for i in range(H):
        y = pad_t + (H - 1 - i) * cell_h
        for j in range(W):
            v = profile.weights[i, j] / vmax
            shade = int(round(255 * (1 - v)))
            out.append(f'<rect x="{pad_l + j * cell_w}" y="{y}" width="{cell_w}" height="{cell_h}" '
                       f'fill="rgb({shade},{shade},255)"/>')
        out.append(f'<text x="{pad_l - 6}" y="{y + cell_h - 1}" font-size="9" text-anchor="end" '
                   f'font-family="sans-serif">{profile.head_ids[i]}</text>')
    for j, o in enumerate(profile.offsets):
        out.append(f'<text x="{pad_l + j * cell_w + cell_w / 2}" y="{pad_t + heat_h + 14}" font-size="9" '
                   f'text-anchor="middle" font-family="sans-serif">{o}</text>')
    avg, med = summarize(profile)
    top = max(float(avg.max()), med) * 1.1 or 1.0

    def py(v):
        return plot_top + plot_h - plot_h * v / top

    pts = " ".join(f"{pad_l + j * cell_w + cell_w / 2:.1f},{py(v):.1f}" for j, v in enumerate(avg))
    out.append(f'<rect x="{pad_l}" y="{plot_top}" width="{W * cell_w}" height="{plot_h}" '
               f'fill="none" stroke="#999"/>')
    out.append(f'<polyline points="{pts}" fill="none" stroke="#1f4e9c" stroke-width="2"/>')
    out.append(f'<line x1="{pad_l}" y1="{py(med):.1f}" x2="{pad_l + W * cell_w}" y2="{py(med):.1f}" '
               f'stroke="#c0392b" stroke-dasharray="6,4"/>')
    out.append(f'<text x="{pad_l + W * cell_w}" y="{py(med) - 4:.1f}" font-size="10" text-anchor="end" '
               f'font-family="sans-serif">median {med:.4f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s):
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def param_report(models):
    """[(name, parameter count)] from runtime shapes; ``models`` is [(name, model)]."""
    return [(name, int(model.num_params())) for name, model in models]


def param_report_rows(configs):
    """[(name, closed-form count, runtime count)] for (name, ModelConfig) pairs."""
    rows = []
    for name, cfg in configs:
        rows.append((name, closed_form_param_count(cfg), build_model(cfg).num_params()))
    return rows
