"""Run configuration: an INI file with fixed sections and typed keys.

Unknown sections or keys, and values that do not parse, raise
:class:`ConfigFileError` naming the key and its line number.
"""

import configparser
import dataclasses
import os
import re
import zlib
from dataclasses import dataclass, field

OUTPUT_ENV = "ALT_OUTPUT_DIR"


class ConfigFileError(ValueError):
    exit_code = 2


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return tuple(float(v) for v in re.split(r"[,\s]+", s.strip()) if v)


def _ints(s):
    return tuple(int(v) for v in re.split(r"[,\s]+", s.strip()) if v)


def _float(s):
    v = s.strip().lower()
    return float("inf") if v in ("inf", "infinity") else float(v)


@dataclass
class RunConfig:
    # [run]
    seed: int = 0
    jobs: int = 1
    output: str = "runs/default"
    data: str = ""                  # existing corpus; empty means synthesize into output/data
    # [synth]
    train_utterances: int = 200
    dev_utterances: int = 50
    test_utterances: int = 50
    lm_sentences: int = 2000
    # [features]
    speed_factors: tuple = (0.9, 1.0, 1.1)
    cmvn_variance: bool = False
    # [model]
    num_heads: int = 15
    context_left: int = 15
    context_right: int = 6
    key_dim: int = 16               # desk scale; the full-size model uses 60 / 40
    value_dim: int = 8
    train_baseline: bool = True
    # [train]
    epochs: int = 8
    minibatch_size: int = 8         # desk-scale optimizer settings; see README "Training at desk scale"
    lr_initial: float = 0.05
    lr_final: float = 0.005
    loss_reduction: str = "mean"
    max_param_change: float = 1.0
    models_to_average: int = 10
    # [lm]
    discount: float = 0.75
    rnnlm: bool = True
    rnnlm_dim: int = 64
    rnnlm_epochs: int = 10
    rnnlm_weight: float = 0.5
    rnnlm_pruning_beam: float = 8.0
    merge_order: int = 3
    # [decode]
    beam: float = 16.0
    lattice_beam: float = 8.0
    acoustic_scale: float = 1.0
    word_insertion_penalty: float = 0.0
    max_active_tokens: int = 5000
    sources: dict = field(default_factory=dict, compare=False, repr=False)


SECTIONS = {
    "run": ("seed", "jobs", "output", "data"),
    "synth": ("train_utterances", "dev_utterances", "test_utterances", "lm_sentences"),
    "features": ("speed_factors", "cmvn_variance"),
    "model": ("num_heads", "context_left", "context_right", "key_dim", "value_dim", "train_baseline"),
    "train": ("epochs", "minibatch_size", "lr_initial", "lr_final", "loss_reduction",
              "max_param_change", "models_to_average"),
    "lm": ("discount", "rnnlm", "rnnlm_dim", "rnnlm_epochs", "rnnlm_weight", "rnnlm_pruning_beam",
           "merge_order"),
    "decode": ("beam", "lattice_beam", "acoustic_scale", "word_insertion_penalty", "max_active_tokens"),
}

_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parser_for(name):
    default = _FIELDS[name].default
    if isinstance(default, bool):
        return _bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return _float
    if name == "speed_factors":
        return _floats
    if isinstance(default, tuple):
        return _ints
    return str


def _line_numbers(text):
    """(section, key) -> 1-based line number of its definition."""
    lines, section = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            lines[(section, None)] = i
            continue
        key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
        lines.setdefault((section, key), i)
    return lines


def parse_config(text, path="<config>"):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=path)
    except configparser.Error as e:
        raise ConfigFileError(f"{path}: {e}") from e
    where = _line_numbers(text)
    values = {}
    for section in parser.sections():
        sec = section.lower()
        if sec not in SECTIONS:
            raise ConfigFileError(f"{path}:{where.get((sec, None), '?')}: unknown section [{section}]")
        for key, raw in parser.items(section):
            line = where.get((sec, key), "?")
            if key not in SECTIONS[sec]:
                raise ConfigFileError(f"{path}:{line}: unknown key '{key}' in section [{section}]")
            try:
                values[key] = _parser_for(key)(raw)
            except ValueError as e:
                raise ConfigFileError(f"{path}:{line}: bad value for '{key}': {e}") from e
    cfg = RunConfig(**values)
    cfg.sources = {k: f"{path}:{where.get((s, k), '?')}" for s in SECTIONS for k in SECTIONS[s] if k in values}
    return validate(cfg)


def load_config(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read(), path)


def validate(cfg):
    def bad(key, msg):
        raise ConfigFileError(f"{cfg.sources.get(key, key)}: '{key}' {msg}")

    for key in ("jobs", "epochs", "minibatch_size", "models_to_average", "max_active_tokens",
                "train_utterances", "dev_utterances", "test_utterances", "lm_sentences",
                "num_heads", "rnnlm_dim", "rnnlm_epochs"):
        if getattr(cfg, key) <= 0:
            bad(key, "must be positive")
    if not 0.0 <= cfg.rnnlm_weight <= 1.0:
        bad("rnnlm_weight", "must be in [0, 1]")
    if not cfg.beam >= cfg.lattice_beam > 0:
        bad("lattice_beam", "needs beam >= lattice_beam > 0")
    if cfg.loss_reduction not in ("sum", "mean"):
        bad("loss_reduction", "must be 'sum' or 'mean'")
    if not 0.0 < cfg.discount < 1.0:
        bad("discount", "must be in (0, 1)")
    if not cfg.speed_factors or any(f <= 0 for f in cfg.speed_factors):
        bad("speed_factors", "must be positive factors")
    return cfg


def with_overrides(cfg, **kw):
    """Copy with non-None keyword overrides (CLI flags)."""
    kw = {k: v for k, v in kw.items() if v is not None}
    out = dataclasses.replace(cfg, **kw)
    out.sources = dict(cfg.sources)
    return validate(out)


def resolve_output(cfg, flag=None):
    """Output dir precedence: --output flag, then $ALT_OUTPUT_DIR, then the config file."""
    return flag or os.environ.get(OUTPUT_ENV) or cfg.output


def to_text(cfg):
    """INI text that parses back to ``cfg``."""
    lines = []
    for sec, keys in SECTIONS.items():
        lines.append(f"[{sec}]")
        for k in keys:
            v = getattr(cfg, k)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)


def sub_seed(seed, stage):
    """Named, stable sub-seed for one pipeline stage."""
    return (int(seed) * 1_000_003 + zlib.crc32(stage.encode("utf-8"))) % (2 ** 31)
