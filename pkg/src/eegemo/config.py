"""Run configuration: one flat dataclass, persisted as ``key = value`` lines.

Files may contain blank lines, ``#`` comment lines and ``[section]`` headers
(ignored). Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .data_model import N_CLASSES, LabelDim
from .dsp import DEFAULT_BANDS, DEFAULT_CHANNELS, Band, SequenceMode, WindowPlan, check_bands, check_channels
from .errors import ConfigError, EmoError, IoError
from .ingest import SynthSpec
from .net import ModelConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(p) for p in s.split(",") if p.strip())


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(p) for p in s.split(",") if p.strip())


def _bands(s: str) -> tuple[Band, ...]:
    out = []
    for item in s.split(","):
        name, low, high = (p.strip() for p in item.split(":"))
        out.append(Band(name, float(low), float(high)))
    return tuple(out)


_ENUMS = (LabelDim, SequenceMode)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, _ENUMS):
        return value.name.lower() if isinstance(value, LabelDim) else value.value
    if isinstance(value, tuple):
        if value and isinstance(value[0], Band):
            return ",".join(f"{b.name}:{b.low_hz!r}:{b.high_hz!r}" for b in value)
        return ",".join(_fmt(v) for v in value)
    return str(value)


_PARSERS = {
    int: int, float: float, bool: _bool, str: str,
    "ints": _ints, "floats": _floats, "bands": _bands,
    LabelDim: LabelDim.parse, SequenceMode: SequenceMode,
}


_SCALAR_KINDS = {"int": int, "float": float, "bool": bool, "str": str}


def _kind(f: dataclasses.Field):
    return f.metadata.get("kind") or _SCALAR_KINDS[f.type]


@dataclass
class RunConfig:
    # features
    channels: tuple = field(default=DEFAULT_CHANNELS, metadata={"kind": "ints"})
    bands: tuple = field(default=DEFAULT_BANDS, metadata={"kind": "bands"})
    sample_rate_hz: float = 128.0
    window_len: int = 256
    hop: int = 16
    window_fn: str = "hann"
    allow_rate_mismatch: bool = False
    log_power: bool = False
    sequence_mode: SequenceMode = field(default=SequenceMode.FEATURE_AS_STEPS, metadata={"kind": SequenceMode})
    window_steps: int = 10
    lenient: bool = False
    # split
    label_dim: LabelDim = field(default=LabelDim.VALENCE, metadata={"kind": LabelDim})
    split_unit: str = "window"
    train_fraction: float = 0.8
    split_seed: int = 0
    # model
    bilstm_units: int = 128
    lstm_units: tuple = field(default=(256, 64, 64, 32), metadata={"kind": "ints"})
    dropout_rates: tuple = field(default=(0.6, 0.6, 0.6, 0.6, 0.4), metadata={"kind": "floats"})
    dense_units: int = 16
    init_seed: int = 0
    # optimisation
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 50
    shuffle_seed: int = 0
    dropout_seed: int = 0
    patience: int = 0
    eval_every: int = 1
    clip_norm: float = 0.0
    final_epoch: bool = False
    # execution
    threads: int = 1
    chunk_size: int = 64

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        try:
            self.channels = check_channels(self.channels)
            self.bands = check_bands(self.bands)
            self.plan()
            self.label_dim = LabelDim.parse(self.label_dim)
            self.sequence_mode = SequenceMode(self.sequence_mode)
            self.lstm_units = tuple(int(u) for u in self.lstm_units)
            self.dropout_rates = tuple(float(r) for r in self.dropout_rates)
            self.model_config(1, 1)
        except (EmoError, ValueError) as e:
            raise ConfigError(str(e)) from None
        checks = [
            (self.sample_rate_hz > 0, "sample_rate_hz must be positive"),
            (self.window_steps >= 1, "window_steps must be >= 1"),
            (self.split_unit in ("window", "trial"), "split_unit must be window or trial"),
            (0 < self.train_fraction < 1, "train_fraction must lie in (0, 1)"),
            (self.lr >= 0 and math.isfinite(self.lr), "lr must be >= 0"),
            (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "betas must lie in [0, 1)"),
            (self.adam_eps > 0, "adam_eps must be positive"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.patience >= 0, "patience must be >= 0 (0 disables early stopping)"),
            (self.eval_every >= 1, "eval_every must be >= 1"),
            (self.clip_norm >= 0, "clip_norm must be >= 0 (0 disables clipping)"),
            (self.threads >= 1, "threads must be >= 1"),
            (self.chunk_size >= 1, "chunk_size must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def plan(self) -> WindowPlan:
        return WindowPlan(self.window_len, self.hop, self.window_fn, self.sample_rate_hz)

    def model_config(self, input_dim: int, seq_len: int) -> ModelConfig:
        return ModelConfig(
            input_dim=input_dim, seq_len=seq_len, bilstm_units=self.bilstm_units,
            lstm_units=self.lstm_units, dropout_rates=self.dropout_rates,
            dense_units=self.dense_units, n_classes=N_CLASSES,
        )

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def to_items(self) -> list[tuple[str, str]]:
        return [(f.name, _fmt(getattr(self, f.name))) for f in fields(self)]

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_items())

    @classmethod
    def from_mapping(cls, items: dict[str, str], base: RunConfig | None = None) -> RunConfig:
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, raw in items.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                values[key] = _PARSERS[_kind(known[key])](raw)
            except (ValueError, EmoError) as e:
                raise ConfigError(f"bad value for {key}: {raw!r} ({e})") from None
        return dataclasses.replace(base or cls(), **values)

    @classmethod
    def loads(cls, text: str, base: RunConfig | None = None) -> RunConfig:
        return cls.from_mapping(parse_kv(text), base)

    @classmethod
    def load(cls, path, base: RunConfig | None = None) -> RunConfig:
        return cls.loads(read_text(path), base)


def read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read {path}: {e.strerror or e}") from e
    except UnicodeDecodeError:
        raise ConfigError(f"{path} is not UTF-8 text") from None


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#") or (s.startswith("[") and s.endswith("]")):
            continue
        if "=" not in s:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (p.strip() for p in s.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


_SYNTH_SCALARS = {
    "n_trials": int, "n_channels": int, "n_samples": int, "sample_rate_hz": float,
    "noise_std": float, "seed": int, "label_dim": LabelDim.parse, "random_phase": _bool,
}


def parse_synth_spec(text: str) -> SynthSpec:
    """Synthetic-data spec; ``class_1 .. class_9`` give five band multipliers each."""
    items = parse_kv(text)
    kwargs = {}
    amp = SynthSpec().class_band_map.copy()
    for key, raw in items.items():
        try:
            if key in _SYNTH_SCALARS:
                kwargs[key] = _SYNTH_SCALARS[key](raw)
            elif key.startswith("class_") and key[6:].isdigit() and 1 <= int(key[6:]) <= N_CLASSES:
                row = _floats(raw)
                if len(row) != amp.shape[1]:
                    raise ValueError(f"expected {amp.shape[1]} multipliers")
                amp[int(key[6:]) - 1] = row
            else:
                raise ConfigError(f"unknown synth key {key!r}")
        except (ValueError, EmoError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {raw!r} ({e})") from None
    try:
        return SynthSpec(class_band_map=amp, **kwargs)
    except EmoError as e:
        raise ConfigError(str(e)) from None


def dump_synth_spec(spec: SynthSpec) -> str:
    lines = [
        f"n_trials = {spec.n_trials}", f"n_channels = {spec.n_channels}",
        f"n_samples = {spec.n_samples}", f"sample_rate_hz = {spec.sample_rate_hz!r}",
        f"noise_std = {spec.noise_std!r}", f"seed = {spec.seed}",
        f"label_dim = {spec.label_dim.name.lower()}",
        f"random_phase = {'true' if spec.random_phase else 'false'}",
    ]
    lines += [f"class_{k + 1} = " + ",".join(repr(float(a)) for a in row)
              for k, row in enumerate(np.asarray(spec.class_band_map))]
    return "\n".join(lines) + "\n"
