"""Corrupted inputs must fail with typed errors, never with a crash."""

import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eegemo.data_model import FeatureDataset, TrialSet
from eegemo.dsp import NormStats
from eegemo.errors import EmoError
from eegemo.featfile import FEAT_HEADER, decode_feat, encode_feat
from eegemo.ingest import EEGB_HEADER, decode_eegb, decode_npy, encode_eegb
from eegemo.net import ModelConfig, init_params
from eegemo.config import RunConfig
from eegemo.train import Checkpoint, decode_checkpoint, encode_checkpoint

MUTANTS_PER_FORMAT = 2600


def npy_bytes(arr, descr="<f4"):
    header = f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {tuple(arr.shape)}, }}"
    header += " " * (64 - (10 + len(header) + 1) % 64) + "\n"
    return b"\x93NUMPY\x01\x00" + len(header).to_bytes(2, "little") + header.encode() + arr.astype(descr).tobytes()


def sample_eegb():
    rng = np.random.default_rng(0)
    ts = TrialSet(rng.standard_normal((2, 3, 8)).astype(np.float32),
                  rng.uniform(1, 9, (2, 4)), 128.0)
    return encode_eegb(ts), EEGB_HEADER.size


def sample_npy():
    buf = npy_bytes(np.arange(24.0).reshape(2, 3, 4))
    return buf, 10 + int.from_bytes(buf[8:10], "little")


def sample_feat():
    rng = np.random.default_rng(1)
    ds = FeatureDataset(rng.standard_normal((3, 4, 2)).astype(np.float32),
                        rng.integers(0, 9, (3, 4)).astype(np.uint8), np.arange(3),
                        (np.zeros(8), np.ones(8)))
    return encode_feat(ds), FEAT_HEADER.size


def sample_emoc():
    run = RunConfig(bilstm_units=2, lstm_units=(2,), dropout_rates=(0.1, 0.1), dense_units=2)
    cfg = run.model_config(1, 3)
    ck = Checkpoint(init_params(cfg, 0), cfg, run, {"label_dim": "valence"},
                    NormStats(np.zeros(3), np.ones(3)))
    buf = encode_checkpoint(ck)
    return buf, 12 + int.from_bytes(buf[8:12], "little") + 4


def decode_npy_checked(buf):
    arr = decode_npy(buf)
    assert arr.dtype == np.float32


FORMATS = {
    "eegb": (sample_eegb, decode_eegb),
    "npy": (sample_npy, decode_npy_checked),
    "feat": (sample_feat, decode_feat),
    "emoc": (sample_emoc, decode_checkpoint),
}


def mutate(buf: bytes, head: int, rng: np.random.Generator) -> bytes:
    b = bytearray(buf)
    kind = rng.integers(0, 6)
    if kind == 0:  # flip bits in the header
        for _ in range(rng.integers(1, 4)):
            b[rng.integers(0, head)] ^= 1 << int(rng.integers(0, 8))
    elif kind == 1:  # random bytes over a header span
        start = int(rng.integers(0, head))
        n = int(rng.integers(1, min(8, head - start) + 1))
        b[start : start + n] = rng.integers(0, 256, n, dtype=np.uint8).tobytes()
    elif kind == 2:  # truncate
        del b[int(rng.integers(0, len(b))):]
    elif kind == 3:  # append garbage
        b += rng.integers(0, 256, int(rng.integers(1, 16)), dtype=np.uint8).tobytes()
    elif kind == 4:  # extreme value in a header field
        start = int(rng.integers(0, max(1, head - 4)))
        b[start : start + 4] = rng.choice([b"\xff\xff\xff\xff", b"\0\0\0\0", b"\0\0\x80\x7f", b"\0\0\xc0\x7f"])
    else:  # swap two header bytes
        i, j = rng.integers(0, head, 2)
        b[i], b[j] = b[j], b[i]
    return bytes(b)


@pytest.mark.parametrize("name", sorted(FORMATS))
def test_header_mutations_raise_typed_errors(name):
    make, decode = FORMATS[name]
    buf, head = make()
    decode(buf)  # the pristine sample decodes
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    typed = accepted = 0
    for _ in range(MUTANTS_PER_FORMAT):
        m = mutate(buf, head, rng)
        try:
            decode(m)
            accepted += 1
        except EmoError:
            typed += 1
    assert typed + accepted == MUTANTS_PER_FORMAT
    assert typed > MUTANTS_PER_FORMAT // 2


def test_total_mutant_count():
    assert MUTANTS_PER_FORMAT * len(FORMATS) >= 10_000


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=96))
def test_arbitrary_bytes(blob):
    for _, decode in FORMATS.values():
        try:
            decode(blob)
        except EmoError:
            pass


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=120))
def test_arbitrary_npy_header_text(text):
    raw = text.encode("utf-8", "surrogatepass")
    buf = b"\x93NUMPY\x01\x00" + len(raw).to_bytes(2, "little") + raw
    try:
        decode_npy(buf)
    except EmoError:
        pass


@pytest.mark.parametrize("header", [
    "{'descr': '<f4', 'fortran_order': False, 'shape': (2,), 'extra': 1}",
    "{'descr': '<f4', 'fortran_order': False}",
    "{'descr': '<f4', 'fortran_order': 'no', 'shape': (2,)}",
    "{'descr': '<f4', 'fortran_order': False, 'shape': (-2,)}",
    "{'descr': '<f4', 'fortran_order': False, 'shape': [2]}",
    "{'descr': '<f4', 'fortran_order': False, 'shape': (2.0,)}",
    "{'descr': '<f4', 'fortran_order': False, 'shape': (True,)}",
    "{'descr': '<f4', 'fortran_order': False, 'shape': (99999999999,)}",
    "{'descr': '>f4', 'fortran_order': False, 'shape': (2,)}",
    "{'descr': '<i4', 'fortran_order': False, 'shape': (2,)}",
    "{'descr': '<f4', 'fortran_order': True, 'shape': (2,)}",
    "[1, 2, 3]",
    "__import__('os')",
    "(" * 200,
])
def test_hostile_npy_headers(header):
    raw = header.encode()
    buf = b"\x93NUMPY\x01\x00" + len(raw).to_bytes(2, "little") + raw + b"\0" * 8
    with pytest.raises(EmoError):
        decode_npy(buf)
