import numpy as np
import pytest

from eegemo import cli
from eegemo.featfile import read_feat
from eegemo.ingest import EEGB_HEADER, read_eegb
from eegemo.train import load_checkpoint

SYNTH = """\
n_trials = 9
n_channels = 32
n_samples = 384
noise_std = 0.1
seed = 4
"""

TINY_CFG = """\
# small model for fast CLI runs
[model]
bilstm_units = 4
lstm_units = 5
dropout_rates = 0.1,0.1
dense_units = 6
[optim]
batch_size = 16
chunk_size = 8
epochs = 2
lr = 0.01
"""


def npy_bytes(arr, descr="<f4", fortran=False):
    header = f"{{'descr': '{descr}', 'fortran_order': {fortran}, 'shape': {tuple(arr.shape)}, }}"
    pad = 64 - (10 + len(header) + 1) % 64
    header = header + " " * pad + "\n"
    return b"\x93NUMPY\x01\x00" + len(header).to_bytes(2, "little") + header.encode() + arr.astype(descr).tobytes()


@pytest.fixture
def work(tmp_path):
    (tmp_path / "synth.spec").write_text(SYNTH)
    (tmp_path / "run.cfg").write_text(TINY_CFG)
    return tmp_path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_synth_deterministic(work):
    a, b = work / "a.eegb", work / "b.eegb"
    assert run("synth", "--spec", work / "synth.spec", "--out", a) == 0
    assert run("synth", "--spec", work / "synth.spec", "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    ts = read_eegb(a)
    assert (ts.n_trials, ts.n_channels, ts.n_samples) == (9, 32, 384)
    assert len(a.read_bytes()) == EEGB_HEADER.size + 4 * 9 * 32 * 384 + 4 * 9 * 4


def test_synth_bad_spec(work, capsys):
    (work / "bad.spec").write_text("noise_std = -1\n")
    assert run("synth", "--spec", work / "bad.spec", "--out", work / "x.eegb") == 2
    assert "noise_std" in capsys.readouterr().err


def test_convert(work, capsys):
    rng = np.random.default_rng(0)
    (work / "d.npy").write_bytes(npy_bytes(rng.standard_normal((2, 3, 300)), "<f8"))
    (work / "l.npy").write_bytes(npy_bytes(rng.uniform(1, 9, (2, 4))))
    assert run("convert", "--data", work / "d.npy", "--labels", work / "l.npy", "--out", work / "z.eegb") == 0
    assert read_eegb(work / "z.eegb").n_samples == 300
    (work / "r2.npy").write_bytes(npy_bytes(rng.standard_normal((3, 300))))
    assert run("convert", "--data", work / "r2.npy", "--labels", work / "l.npy", "--out", work / "z.eegb") == 2
    missing = work / "nope.npy"
    capsys.readouterr()
    assert run("convert", "--data", missing, "--labels", work / "l.npy", "--out", work / "z.eegb") == 1
    assert str(missing) in capsys.readouterr().err


def test_features_and_channel_override(work):
    run("synth", "--spec", work / "synth.spec", "--out", work / "s.eegb")
    assert run("features", "--in", work / "s.eegb", "--out", work / "f.feat") == 0
    ds = read_feat(work / "f.feat")
    assert ds.n_samples == 9 * 9 and ds.seq_len == 70 and ds.input_dim == 1
    assert run("features", "--in", work / "s.eegb", "--channels", "1,2,3,4,5,6,7,8,9,10",
               "--out", work / "g.feat") == 0
    assert read_feat(work / "g.feat").seq_len == 50
    assert run("features", "--in", work / "s.eegb", "--channels", "1,2,2", "--out", work / "h.feat") == 2


def test_features_pools_inputs(work):
    run("synth", "--spec", work / "synth.spec", "--out", work / "s.eegb")
    run("synth", "--spec", work / "synth.spec", "--seed", "5", "--out", work / "t.eegb")
    assert run("features", "--in", work / "s.eegb", work / "t.eegb", "--out", work / "f.feat") == 0
    ds = read_feat(work / "f.feat")
    assert ds.n_samples == 2 * 81
    assert np.array_equal(np.unique(ds.trial_index), np.arange(18))


@pytest.fixture
def trained(work):
    run("synth", "--spec", work / "synth.spec", "--out", work / "s.eegb")
    run("features", "--in", work / "s.eegb", "--out", work / "f.feat")
    out = work / "valence"
    assert run("train", "--feat", work / "f.feat", "--label-dim", "valence", "--config",
               work / "run.cfg", "--out", out, "--quiet") == 0
    return work, out


def test_train_outputs(trained):
    work, out = trained
    for name in ("model.emoc", "metrics.csv", "effective.cfg"):
        assert (out / name).is_file()
    rows = (out / "metrics.csv").read_text().splitlines()
    assert rows[0] == "epoch,split,loss,accuracy"
    assert rows[1].startswith("1,train,") and rows[2].startswith("1,test,")
    assert len(rows) == 1 + 4
    # effective.cfg reproduces the run bitwise
    again = work / "again"
    assert run("train", "--feat", work / "f.feat", "--config", out / "effective.cfg",
               "--out", again, "--quiet") == 0
    assert (again / "model.emoc").read_bytes() == (out / "model.emoc").read_bytes()


def test_train_label_dims_distinct(trained):
    work, out = trained
    other = work / "liking"
    assert run("train", "--feat", work / "f.feat", "--label-dim", "liking", "--config",
               work / "run.cfg", "--out", other, "--quiet") == 0
    assert (other / "model.emoc").read_bytes() != (out / "model.emoc").read_bytes()
    assert load_checkpoint(other / "model.emoc").meta["label_dim"] == "liking"


def test_train_bad_label_dim(work):
    with pytest.raises(SystemExit) as e:
        run("train", "--feat", work / "f.feat", "--label-dim", "joy", "--out", work / "o")
    assert e.value.code == 2


def test_train_unknown_config_key(work):
    (work / "bad.cfg").write_text("learning_rate = 0.1\n")
    run("synth", "--spec", work / "synth.spec", "--out", work / "s.eegb")
    run("features", "--in", work / "s.eegb", "--out", work / "f.feat")
    assert run("train", "--feat", work / "f.feat", "--config", work / "bad.cfg", "--out", work / "o") == 2


def test_eval_reports(trained, capsys):
    work, out = trained
    capsys.readouterr()
    assert run("eval", "--checkpoint", out / "model.emoc", "--feat", work / "f.feat", "--vote-per-trial") == 0
    text = capsys.readouterr().out
    assert "per window" in text and "majority vote per trial" in text
    assert text.count("confusion") == 2
    stored = float(load_checkpoint(out / "model.emoc").meta["test_accuracy"])
    assert f"accuracy {stored:.4f}" in text


def test_eval_shape_mismatch(trained):
    work, out = trained
    run("features", "--in", work / "s.eegb", "--channels", "1,2,3", "--out", work / "small.feat")
    assert run("eval", "--checkpoint", out / "model.emoc", "--feat", work / "small.feat") == 2


def test_eval_corrupt_checkpoint(trained):
    work, out = trained
    buf = bytearray((out / "model.emoc").read_bytes())
    buf[0] ^= 0xFF
    (work / "bad.emoc").write_bytes(bytes(buf))
    assert run("eval", "--checkpoint", work / "bad.emoc", "--feat", work / "f.feat") == 2


def test_report_side_by_side(trained, capsys):
    work, out = trained
    for dim in ("arousal", "dominance", "liking"):
        run("train", "--feat", work / "f.feat", "--label-dim", dim, "--config", work / "run.cfg",
            "--out", work / dim, "--quiet")
    capsys.readouterr()
    cks = [out / "model.emoc"] + [work / d / "model.emoc" for d in ("arousal", "dominance", "liking")]
    assert run("report", "--feat", work / "f.feat", "--checkpoints", *cks) == 0
    head, row = capsys.readouterr().out.strip().splitlines()
    assert head.split() == ["Valence", "Arousal", "Dominance", "Liking", "Overall"]
    assert len(row.split()) == 5 and all(v.endswith("%") for v in row.split())


def test_gradcheck_exit_codes(monkeypatch, capsys):
    assert run("gradcheck", "--seed", "0") == 0
    out = capsys.readouterr().out
    assert "bilstm_fwd.W" in out and "PASS" in out

    def corrupt(grads):
        return {k: g * 1.05 if k == "dense.W" else g for k, g in grads.items()}

    monkeypatch.setattr(cli, "GRAD_HOOK", corrupt)
    assert run("gradcheck") == 3


def test_missing_feat_names_path(work, capsys):
    missing = work / "absent.feat"
    assert run("train", "--feat", missing, "--out", work / "o") == 1
    assert str(missing) in capsys.readouterr().err


def test_nonpositive_threads(work):
    assert run("features", "--in", work / "x.eegb", "--threads", "0", "--out", work / "f") == 2
