"""Dataset I/O (EEGB container, NPY 1.0 pairs) and synthetic EEG generation.

EEGB layout, little-endian::

    offset  size  field
    0       4     magic b"EEGB"
    4       2     version (u16) = 1
    6       2     flags (u16) = 0
    8       4     n_trials (u32)
    12      4     n_channels (u32)
    16      4     n_samples (u32)
    20      4     sample_rate_hz (f32)
    24      4     n_label_dims (u32) = 4
    28      ...   data, f32, (trial, channel, sample) row-major
    ...     ...   labels, f32, (trial, label_dim) row-major
"""

from __future__ import annotations

import ast
import logging
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import N_CLASSES, N_LABEL_DIMS, LabelDim, TrialSet
from .dsp import DEFAULT_BANDS
from .errors import (
    ConfigError,
    FormatError,
    InvalidLabel,
    IoError,
    ShapeError,
    UnsupportedDtype,
    UnsupportedLayout,
)
from .prng import Xoshiro256

log = logging.getLogger(__name__)

EEGB_MAGIC = b"EEGB"
EEGB_VERSION = 1
EEGB_HEADER = struct.Struct("<4sHHIIIfI")
EEGB_HEADER_SIZE = EEGB_HEADER.size  # 28

NPY_MAGIC = b"\x93NUMPY"
NPY_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


@dataclass(frozen=True)
class EegbHeader:
    n_trials: int
    n_channels: int
    n_samples: int
    sample_rate_hz: float
    n_label_dims: int = N_LABEL_DIMS
    version: int = EEGB_VERSION
    flags: int = 0

    def pack(self) -> bytes:
        return EEGB_HEADER.pack(
            EEGB_MAGIC, self.version, self.flags, self.n_trials, self.n_channels,
            self.n_samples, self.sample_rate_hz, self.n_label_dims,
        )

    @classmethod
    def unpack(cls, buf: bytes) -> EegbHeader:
        if len(buf) < EEGB_HEADER_SIZE:
            raise FormatError(f"EEGB header truncated ({len(buf)} < {EEGB_HEADER_SIZE} bytes)")
        magic, version, flags, nt, nc, ns, fs, nl = EEGB_HEADER.unpack_from(buf)
        if magic != EEGB_MAGIC:
            raise FormatError(f"bad EEGB magic {magic!r}")
        if version != EEGB_VERSION:
            raise FormatError(f"unsupported EEGB version {version}")
        if flags != 0:
            raise FormatError(f"unsupported EEGB flags {flags:#x}")
        if min(nt, nc, ns) < 1:
            raise FormatError("EEGB counts must all be >= 1")
        if nl != N_LABEL_DIMS:
            raise FormatError(f"EEGB must carry {N_LABEL_DIMS} label dims, got {nl}")
        if not (math.isfinite(fs) and fs > 0):
            raise FormatError(f"EEGB sample rate must be positive, got {fs}")
        return cls(nt, nc, ns, fs, nl, version, flags)

    @property
    def payload_size(self) -> int:
        return 4 * (self.n_trials * self.n_channels * self.n_samples
                    + self.n_trials * self.n_label_dims)


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e.strerror or e}") from e


def _write_bytes(path, payload: bytes) -> None:
    try:
        Path(path).write_bytes(payload)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e.strerror or e}") from e


def encode_eegb(ts: TrialSet) -> bytes:
    header = EegbHeader(ts.n_trials, ts.n_channels, ts.n_samples, ts.sample_rate_hz)
    return b"".join([
        header.pack(),
        ts.data.astype("<f4", copy=False).tobytes(),
        ts.labels.astype("<f4", copy=False).tobytes(),
    ])


def decode_eegb(buf: bytes, lenient: bool = False) -> TrialSet:
    header = EegbHeader.unpack(buf)
    expected = EEGB_HEADER_SIZE + header.payload_size
    if len(buf) != expected:
        raise FormatError(f"EEGB size mismatch: expected {expected} bytes, found {len(buf)}")
    n_data = header.n_trials * header.n_channels * header.n_samples
    data = np.frombuffer(buf, dtype="<f4", count=n_data, offset=EEGB_HEADER_SIZE)
    labels = np.frombuffer(buf, dtype="<f4", offset=EEGB_HEADER_SIZE + 4 * n_data)
    data = data.reshape(header.n_trials, header.n_channels, header.n_samples)
    labels = labels.reshape(header.n_trials, N_LABEL_DIMS)
    labels = _check_labels(labels, lenient)
    return TrialSet(data=data, labels=labels, sample_rate_hz=header.sample_rate_hz)


def _check_labels(labels: np.ndarray, lenient: bool) -> np.ndarray:
    if not np.all(np.isfinite(labels)):
        raise InvalidLabel("labels contain NaN or Inf")
    bad = (labels < 1.0) | (labels > 9.0)
    if bad.any():
        if not lenient:
            raise InvalidLabel(f"{int(bad.sum())} label(s) outside [1, 9]")
        log.warning("clamping %d label(s) outside [1, 9]", int(bad.sum()))
        labels = np.clip(labels, 1.0, 9.0)
    return labels


def write_eegb(ts: TrialSet, path) -> None:
    _write_bytes(path, encode_eegb(ts))


def read_eegb(path, lenient: bool = False) -> TrialSet:
    return decode_eegb(_read_bytes(path), lenient=lenient)


@dataclass(frozen=True)
class NpyMeta:
    dtype_code: str
    fortran_order: bool
    shape: tuple[int, ...]
    data_offset: int


def parse_npy_header(buf: bytes) -> NpyMeta:
    """Validate an NPY version 1.0 header; only ``<f4``/``<f8`` C-order arrays pass."""
    if len(buf) < 10 or buf[:6] != NPY_MAGIC:
        raise FormatError("missing NPY magic bytes")
    major, minor = buf[6], buf[7]
    if (major, minor) != (1, 0):
        raise FormatError(f"unsupported NPY version {major}.{minor}")
    (hlen,) = struct.unpack_from("<H", buf, 8)
    if len(buf) < 10 + hlen:
        raise FormatError("NPY header truncated")
    text = buf[10:10 + hlen].decode("latin1")
    try:
        with warnings.catch_warnings():
            # junk escapes in a hostile header would otherwise leak compile warnings
            warnings.simplefilter("ignore")
            meta = ast.literal_eval(text)
    except Exception as e:  # literal_eval raises a zoo of types on junk
        raise FormatError(f"unparseable NPY header: {type(e).__name__}") from None
    if not isinstance(meta, dict) or set(meta) != {"descr", "fortran_order", "shape"}:
        raise FormatError("NPY header must be a dict with descr, fortran_order, shape")
    descr, fortran, shape = meta["descr"], meta["fortran_order"], meta["shape"]
    if not isinstance(fortran, bool):
        raise FormatError("fortran_order must be a boolean")
    if not isinstance(shape, tuple) or not all(
        isinstance(d, int) and not isinstance(d, bool) and d >= 0 for d in shape
    ):
        raise FormatError("shape must be a tuple of non-negative ints")
    if not isinstance(descr, str) or descr not in NPY_DTYPES:
        raise UnsupportedDtype(f"unsupported NPY dtype {descr!r}; accepted: <f4, <f8")
    if fortran:
        raise UnsupportedLayout("Fortran-ordered NPY arrays are not supported")
    return NpyMeta(descr, fortran, shape, 10 + hlen)


def decode_npy(buf: bytes) -> np.ndarray:
    meta = parse_npy_header(buf)
    dtype = NPY_DTYPES[meta.dtype_code]
    count = math.prod(meta.shape)
    if len(buf) - meta.data_offset != count * dtype.itemsize:
        raise FormatError(
            f"NPY payload size mismatch: expected {count * dtype.itemsize} bytes, "
            f"found {len(buf) - meta.data_offset}"
        )
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=meta.data_offset)
    return arr.reshape(meta.shape).astype(np.float32)


def read_npy(path) -> np.ndarray:
    return decode_npy(_read_bytes(path))


def read_npy_pair(data_path, labels_path, sample_rate_hz: float = 128.0,
                  lenient: bool = False) -> TrialSet:
    data = read_npy(data_path)
    labels = read_npy(labels_path)
    if data.ndim != 3:
        raise ShapeError(f"data must be rank 3 (trial, channel, sample), got shape {data.shape}")
    if labels.ndim != 2 or labels.shape[1] != N_LABEL_DIMS:
        raise ShapeError(f"labels must have shape (T, {N_LABEL_DIMS}), got {labels.shape}")
    if labels.shape[0] != data.shape[0]:
        raise ShapeError(f"{data.shape[0]} trials of data but {labels.shape[0]} label rows")
    return TrialSet(data=data, labels=_check_labels(labels, lenient), sample_rate_hz=sample_rate_hz)


def _default_class_band_map() -> np.ndarray:
    # unit amplitude everywhere; each class boosts a distinct set of bands
    boosted = [(0,), (1,), (2,), (3,), (4,), (0, 2), (1, 3), (2, 4), (0, 4)]
    amp = np.ones((N_CLASSES, len(DEFAULT_BANDS)))
    for k, bands in enumerate(boosted):
        amp[k, list(bands)] = 3.0
    return amp


@dataclass
class SynthSpec:
    n_trials: int = 36
    n_channels: int = 32
    n_samples: int = 1120
    sample_rate_hz: float = 128.0
    class_band_map: np.ndarray = field(default_factory=_default_class_band_map)
    noise_std: float = 0.1
    seed: int = 0
    label_dim: LabelDim = LabelDim.VALENCE
    random_phase: bool = True

    def __post_init__(self):
        self.class_band_map = np.asarray(self.class_band_map, dtype=np.float64)
        if self.class_band_map.shape != (N_CLASSES, len(DEFAULT_BANDS)):
            raise ConfigError(
                f"class_band_map must be {N_CLASSES}x{len(DEFAULT_BANDS)}, "
                f"got {self.class_band_map.shape}"
            )
        if np.any(self.class_band_map < 0) or not np.all(np.isfinite(self.class_band_map)):
            raise ConfigError("class_band_map multipliers must be finite and >= 0")
        if not (self.noise_std >= 0 and math.isfinite(self.noise_std)):
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if min(self.n_trials, self.n_channels, self.n_samples) < 1:
            raise ConfigError("n_trials, n_channels and n_samples must be >= 1")
        if not self.sample_rate_hz > 0:
            raise ConfigError("sample_rate_hz must be positive")
        self.label_dim = LabelDim.parse(self.label_dim)


def synth_class(trial: int) -> int:
    """1-based class assigned round-robin to trial ``trial``."""
    return trial % N_CLASSES + 1


def synth_generate(spec: SynthSpec) -> TrialSet:
    """Band-coded sinusoid mixture per class plus Gaussian noise.

    Draw order from one ``Xoshiro256(seed)`` stream: phases for every
    (trial, channel, band) as uniforms scaled to [0, 2 pi), then the
    (trial, channel, sample) noise block.
    """
    rng = Xoshiro256(spec.seed)
    centers = np.array([(b.low_hz + b.high_hz) / 2 for b in DEFAULT_BANDS])
    n_bands = len(centers)
    shape = (spec.n_trials, spec.n_channels, n_bands)
    if spec.random_phase:
        phase = 2.0 * np.pi * rng.uniform(math.prod(shape)).reshape(shape)
    else:
        phase = np.zeros(shape)
    t = np.arange(spec.n_samples) / spec.sample_rate_hz
    classes = np.array([synth_class(i) for i in range(spec.n_trials)])
    amp = spec.class_band_map[classes - 1]  # (trial, band)

    data = np.zeros((spec.n_trials, spec.n_channels, spec.n_samples))
    for b in range(n_bands):
        arg = 2.0 * np.pi * centers[b] * t[None, None, :] + phase[:, :, b, None]
        data += amp[:, b, None, None] * np.sin(arg)
    if spec.noise_std > 0:
        data += spec.noise_std * rng.normal(data.size).reshape(data.shape)

    labels = np.full((spec.n_trials, N_LABEL_DIMS), 5.0)
    labels[:, int(spec.label_dim)] = classes
    return TrialSet(data=data, labels=labels, sample_rate_hz=spec.sample_rate_hz)
