"""FEAT sidecar: a feature dataset on disk.

Layout, little-endian::

    magic b"FEAT" | version u16 = 1 | flags u16 (bit 0: norm stats present)
    n_samples u32 | seq_len u32 | input_dim u32
    features   f32[n_samples * seq_len * input_dim]
    classes    u8[n_samples * 4]       zero-based class per VADL dimension
    trial      u32[n_samples]          source trial of each sample
    stats      f32[2 * seq_len * input_dim]   mean then std, if flagged
"""

from __future__ import annotations

import struct

import numpy as np

from .data_model import N_CLASSES, N_LABEL_DIMS, FeatureDataset
from .dsp import NormStats
from .errors import FormatError, InvalidLabel
from .ingest import _read_bytes, _write_bytes

FEAT_MAGIC = b"FEAT"
FEAT_VERSION = 1
FEAT_HEADER = struct.Struct("<4sHHIII")
FLAG_STATS = 1


def encode_feat(ds: FeatureDataset) -> bytes:
    n, t, d = ds.features.shape
    flags = FLAG_STATS if ds.feature_stats is not None else 0
    parts = [
        FEAT_HEADER.pack(FEAT_MAGIC, FEAT_VERSION, flags, n, t, d),
        np.asarray(ds.features, dtype="<f4").tobytes(),
        np.asarray(ds.classes, dtype=np.uint8).tobytes(),
        np.asarray(ds.trial_index, dtype="<u4").tobytes(),
    ]
    if ds.feature_stats is not None:
        mean, std = ds.feature_stats
        parts += [np.asarray(mean, "<f4").tobytes(), np.asarray(std, "<f4").tobytes()]
    return b"".join(parts)


def decode_feat(buf: bytes) -> FeatureDataset:
    if len(buf) < FEAT_HEADER.size:
        raise FormatError("FEAT header truncated")
    magic, version, flags, n, t, d = FEAT_HEADER.unpack_from(buf)
    if magic != FEAT_MAGIC:
        raise FormatError(f"bad FEAT magic {magic!r}")
    if version != FEAT_VERSION:
        raise FormatError(f"unsupported FEAT version {version}")
    if flags & ~FLAG_STATS:
        raise FormatError(f"unsupported FEAT flags {flags:#x}")
    if min(t, d) < 1:
        raise FormatError("FEAT seq_len and input_dim must be >= 1")
    width = t * d
    sizes = [4 * n * width, n * N_LABEL_DIMS, 4 * n]
    if flags & FLAG_STATS:
        sizes.append(8 * width)
    if len(buf) != FEAT_HEADER.size + sum(sizes):
        raise FormatError(
            f"FEAT size mismatch: expected {FEAT_HEADER.size + sum(sizes)} bytes, found {len(buf)}"
        )
    off = FEAT_HEADER.size
    feats = np.frombuffer(buf, "<f4", n * width, off).reshape(n, t, d)
    off += sizes[0]
    classes = np.frombuffer(buf, np.uint8, n * N_LABEL_DIMS, off).reshape(n, N_LABEL_DIMS)
    off += sizes[1]
    trial = np.frombuffer(buf, "<u4", n, off).astype(np.int64)
    off += sizes[2]
    stats = None
    if flags & FLAG_STATS:
        mean = np.frombuffer(buf, "<f4", width, off).astype(np.float64)
        std = np.frombuffer(buf, "<f4", width, off + 4 * width).astype(np.float64)
        stats = NormStats(mean, std)
    if classes.size and classes.max() >= N_CLASSES:
        raise InvalidLabel("FEAT class index out of range")
    if not np.all(np.isfinite(feats)):
        raise FormatError("FEAT features contain NaN or Inf")
    return FeatureDataset(
        features=feats.astype(np.float32), classes=classes.copy(), trial_index=trial,
        feature_stats=None if stats is None else (stats.mean, stats.std),
    )


def write_feat(ds: FeatureDataset, path) -> None:
    _write_bytes(path, encode_feat(ds))


def read_feat(path) -> FeatureDataset:
    return decode_feat(_read_bytes(path))
