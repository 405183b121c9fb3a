import io
import struct

import numpy as np
import pytest

from eegemo.data_model import LabelDim, TrialSet
from eegemo.dsp import Spectrum, band_power, one_sided_power
from eegemo.errors import (
    ConfigError,
    FormatError,
    InvalidLabel,
    IoError,
    ShapeError,
    UnsupportedDtype,
    UnsupportedLayout,
)
from eegemo.ingest import (
    EEGB_HEADER_SIZE,
    SynthSpec,
    decode_eegb,
    encode_eegb,
    read_eegb,
    read_npy_pair,
    synth_generate,
    write_eegb,
)


def test_eegb_roundtrip_bitwise(tmp_path, small_trials):
    p = tmp_path / "x.eegb"
    write_eegb(small_trials, p)
    back = read_eegb(p)
    assert back == small_trials
    assert back.n_trials == 3 and back.n_channels == 32 and back.n_samples == 512


def test_eegb_layout(small_trials):
    buf = encode_eegb(small_trials)
    assert EEGB_HEADER_SIZE == 28
    assert len(buf) == 28 + 4 * (3 * 32 * 512) + 4 * (3 * 4)
    magic, version, flags, nt, nc, ns, fs, nl = struct.unpack_from("<4sHHIIIfI", buf)
    assert (magic, version, flags, nt, nc, ns, fs, nl) == (b"EEGB", 1, 0, 3, 32, 512, 128.0, 4)
    first = struct.unpack_from("<f", buf, 28)[0]
    assert first == small_trials.data[0, 0, 0]
    last_label = struct.unpack_from("<f", buf, len(buf) - 4)[0]
    assert last_label == small_trials.labels[-1, -1]


def test_eegb_bad_magic(small_trials):
    buf = bytearray(encode_eegb(small_trials))
    buf[:4] = b"EEGX"
    with pytest.raises(FormatError):
        decode_eegb(bytes(buf))


def test_eegb_bad_version(small_trials):
    buf = bytearray(encode_eegb(small_trials))
    buf[4:6] = struct.pack("<H", 2)
    with pytest.raises(FormatError):
        decode_eegb(bytes(buf))


def test_eegb_truncated(small_trials):
    buf = encode_eegb(small_trials)
    with pytest.raises(FormatError):
        decode_eegb(buf[:-4])
    with pytest.raises(FormatError):
        decode_eegb(buf[:10])


def test_eegb_label_out_of_range(small_trials):
    buf = bytearray(encode_eegb(small_trials))
    struct.pack_into("<f", buf, len(buf) - 4, 11.0)
    with pytest.raises(InvalidLabel):
        decode_eegb(bytes(buf))
    ts = decode_eegb(bytes(buf), lenient=True)
    assert ts.labels[-1, -1] == 9.0


def test_eegb_missing_file(tmp_path):
    with pytest.raises(IoError):
        read_eegb(tmp_path / "nope.eegb")


def _save(path, arr):
    np.save(path, arr)
    return path


def test_npy_pair_deap_shape(tmp_path):
    data = np.zeros((40, 40, 8064), dtype=np.float64)
    labels = np.full((40, 4), 5.0)
    ts = read_npy_pair(_save(tmp_path / "d.npy", data), _save(tmp_path / "l.npy", labels))
    assert (ts.n_trials, ts.n_channels, ts.n_samples) == (40, 40, 8064)
    assert ts.sample_rate_hz == 128.0
    assert ts.data.dtype == np.float32


def test_npy_pair_f4_and_rate(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.standard_normal((2, 3, 16)).astype(np.float32)
    labels = np.array([[1, 2, 3, 4], [5, 6, 7, 8.5]], dtype=np.float32)
    ts = read_npy_pair(_save(tmp_path / "d.npy", data), _save(tmp_path / "l.npy", labels), 256.0)
    assert np.array_equal(ts.data, data) and np.array_equal(ts.labels, labels)
    assert ts.sample_rate_hz == 256.0


def test_npy_labels_wrong_width(tmp_path):
    with pytest.raises(ShapeError):
        read_npy_pair(_save(tmp_path / "d.npy", np.zeros((40, 2, 8))),
                      _save(tmp_path / "l.npy", np.full((40, 3), 5.0)))


def test_npy_data_rank(tmp_path):
    with pytest.raises(ShapeError):
        read_npy_pair(_save(tmp_path / "d.npy", np.zeros((40, 8))),
                      _save(tmp_path / "l.npy", np.full((40, 4), 5.0)))


def test_npy_fortran_rejected(tmp_path):
    data = np.asfortranarray(np.zeros((2, 3, 4)))
    with pytest.raises(UnsupportedLayout):
        read_npy_pair(_save(tmp_path / "d.npy", data), _save(tmp_path / "l.npy", np.full((2, 4), 5.0)))


@pytest.mark.parametrize("dtype", [np.int32, np.float16, ">f8", np.complex64])
def test_npy_dtype_rejected(tmp_path, dtype):
    with pytest.raises(UnsupportedDtype):
        read_npy_pair(_save(tmp_path / "d.npy", np.zeros((2, 3, 4), dtype=dtype)),
                      _save(tmp_path / "l.npy", np.full((2, 4), 5.0)))


def test_npy_missing_magic(tmp_path):
    p = tmp_path / "d.npy"
    p.write_bytes(b"NOTNUMPY" + bytes(100))
    with pytest.raises(FormatError):
        read_npy_pair(p, p)


def test_npy_version_2_rejected(tmp_path):
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.zeros((2, 3, 4)), version=(2, 0))
    p = tmp_path / "d.npy"
    p.write_bytes(buf.getvalue())
    with pytest.raises(FormatError):
        read_npy_pair(p, _save(tmp_path / "l.npy", np.full((2, 4), 5.0)))


def test_synth_pure_tone():
    amp = np.zeros((9, 5))
    amp[:, 1] = 1.0  # alpha band, 10 Hz
    spec = SynthSpec(n_trials=2, n_channels=3, n_samples=256, class_band_map=amp,
                     noise_std=0.0, random_phase=False)
    ts = synth_generate(spec)
    t = np.arange(256) / 128.0
    expected = np.sin(2 * np.pi * 10 * t).astype(np.float32)
    assert np.allclose(ts.data, expected[None, None, :], atol=1e-6)


def test_synth_deterministic():
    a = synth_generate(SynthSpec(n_trials=4, n_samples=300, seed=9))
    b = synth_generate(SynthSpec(n_trials=4, n_samples=300, seed=9))
    c = synth_generate(SynthSpec(n_trials=4, n_samples=300, seed=10))
    assert a == b
    assert not np.array_equal(a.data, c.data)


def test_synth_labels():
    ts = synth_generate(SynthSpec(n_trials=11, n_channels=1, n_samples=256, label_dim=LabelDim.AROUSAL))
    assert ts.labels[:, 1].tolist() == [1, 2, 3, 4, 5, 6, 7, 8, 9, 1, 2]
    assert np.all(ts.labels[:, [0, 2, 3]] == 5.0)


def test_synth_band_energy_analytic():
    # rectangular window, integer cycles: energy of each component = A^2 N / 2
    amp = np.ones((9, 5)) * np.array([1.0, 2.0, 0.5, 1.5, 3.0])
    spec = SynthSpec(n_trials=1, n_channels=2, n_samples=256, class_band_map=amp, noise_std=0.0)
    ts = synth_generate(spec)
    bins = [12, 20, 28, 46, 75]  # 6, 10, 14, 23, 37.5 Hz at 0.5 Hz resolution
    for ch in range(2):
        p = one_sided_power(ts.data[0, ch].astype(np.float64), np.ones(256))
        for a, k in zip(amp[0], bins):
            energy = p[k] * 256
            assert energy == pytest.approx(a * a * 256 / 2, rel=0.01)


def test_synth_gamma_ratio():
    # class 9 carries 9x class 1's gamma amplitude -> 81x gamma power
    amp = np.zeros((9, 5))
    amp[0, 4], amp[8, 4] = 1.0, 9.0
    spec = SynthSpec(n_trials=9, n_channels=1, n_samples=256, class_band_map=amp, noise_std=0.0)
    ts = synth_generate(spec)
    from eegemo.dsp import hann_window
    w = hann_window(256)
    s1 = Spectrum(one_sided_power(ts.data[0, 0].astype(np.float64), w), 0.5)
    s9 = Spectrum(one_sided_power(ts.data[8, 0].astype(np.float64), w), 0.5)
    ratio = band_power(s9, 30, 45, closed_upper=True) / band_power(s1, 30, 45, closed_upper=True)
    assert ratio == pytest.approx(81.0, rel=1e-3)


def test_synth_spec_validation():
    with pytest.raises(ConfigError):
        SynthSpec(noise_std=-1.0)
    with pytest.raises(ConfigError):
        SynthSpec(class_band_map=-np.ones((9, 5)))
    with pytest.raises(ConfigError):
        SynthSpec(class_band_map=np.ones((8, 5)))
