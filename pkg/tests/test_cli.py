import math
import struct
import subprocess
import sys

import numpy as np
import pytest

from weakprior import TagSet, fuse_foreground, loss_weak
from weakprior.cli import main
from weakprior.io import read_image, read_tensor, write_image, write_tags, write_tensor


def run(*argv):
    return main([str(a) for a in argv])


def test_fuse_cam_combine_crf_chain(tmp_path, rng):
    write_tensor(tmp_path / "c4.tsr", rng.random((4, 8, 8)))
    write_tensor(tmp_path / "c5.tsr", rng.random((4, 4, 4)))
    write_tensor(tmp_path / "f.tsr", rng.random((4, 4, 4)))
    write_tensor(tmp_path / "w.tsr", rng.normal(size=(2, 4)))
    write_image(tmp_path / "img.ppm", rng.integers(0, 256, size=(3, 8, 8)))
    write_image(tmp_path / "reg.pgm", np.repeat(np.arange(4), 16).reshape(8, 8), maxval=65535)

    assert run("fuse", "--conv4", tmp_path / "c4.tsr", "--conv5", tmp_path / "c5.tsr", "--out", tmp_path / "pf.tsr") == 0
    pf = read_tensor(tmp_path / "pf.tsr")
    np.testing.assert_array_equal(pf, fuse_foreground(read_tensor(tmp_path / "c4.tsr"), read_tensor(tmp_path / "c5.tsr")))
    assert run("cam", "--features", tmp_path / "f.tsr", "--weights", tmp_path / "w.tsr", "--out", tmp_path / "cam.tsr",
               "--binary-out", tmp_path / "bin.tsr") == 0
    assert set(np.unique(read_tensor(tmp_path / "bin.tsr"))) <= {0.0, 1.0}
    assert run("combine", "--pf", tmp_path / "pf.tsr", "--cams", tmp_path / "cam.tsr", "--out", tmp_path / "p.tsr") == 0
    probs = read_tensor(tmp_path / "p.tsr")
    assert probs.shape == (3, 8, 8)
    rc = run("crf", "--probs", tmp_path / "p.tsr", "--image", tmp_path / "img.ppm", "--out-labels", tmp_path / "lab.pgm",
             "--regions", tmp_path / "reg.pgm", "--out-probs", tmp_path / "q.tsr", "--iters", 3)
    assert rc == 0
    labels = read_image(tmp_path / "lab.pgm")
    np.testing.assert_array_equal(labels, read_tensor(tmp_path / "q.tsr").argmax(0))


def test_loss_command(tmp_path, rng, capsys):
    s = rng.normal(size=(3, 2, 2))
    write_tensor(tmp_path / "s.tsr", s)
    write_tags(tmp_path / "t.txt", TagSet(frozenset({2}), 3))
    assert run("loss", "--scores", tmp_path / "s.tsr", "--tags", tmp_path / "t.txt", "--variant", "weak",
               "--grad-out", tmp_path / "g.tsr") == 0
    printed = float(capsys.readouterr().out.strip())
    assert math.isclose(printed, loss_weak(s, TagSet(frozenset({2}), 3)), rel_tol=1e-15)
    assert read_tensor(tmp_path / "g.tsr").shape == (3, 2, 2)
    # multiclass with a directory of per-label masks; label 0 defaults to the complement
    (tmp_path / "m").mkdir()
    write_image(tmp_path / "m" / "2.pgm", np.array([[1, 0], [0, 0]]))
    assert run("loss", "--scores", tmp_path / "s.tsr", "--tags", tmp_path / "t.txt", "--variant", "multiclass",
               "--masks", tmp_path / "m") == 0


def test_synth_train_predict_eval(tmp_path, capsys):
    data = tmp_path / "data"
    assert run("synth", "--seed", 1, "--count", 3, "--out", data, "--h", 24, "--w", 24, "--classes", 3) == 0
    assert run("train", "--data", data, "--variant", "fgbg", "--epochs", 2, "--seed", 0, "--out", tmp_path / "m.tsr",
               "--history", tmp_path / "h.csv") == 0
    assert (tmp_path / "h.csv").read_text().startswith("epoch,loss\n0,")
    assert run("predict", "--model", tmp_path / "m.tsr", "--data", data, "--out", tmp_path / "pred") == 0
    capsys.readouterr()
    assert run("eval", "--pred", tmp_path / "pred", "--gt", data, "--trimap-band", 2, "--confusion",
               "--classes", 3, "--csv", tmp_path / "r.csv") == 0
    out = capsys.readouterr().out
    assert "mean" in out and "trimap accuracy" in out and "gt\\pr" in out
    assert (tmp_path / "r.csv").read_text().startswith("class,iou\n")


def test_commands_deterministic(tmp_path):
    for tag in ("a", "b"):
        assert run("synth", "--seed", 2, "--count", 2, "--out", tmp_path / tag, "--h", 16, "--w", 16, "--classes", 2) == 0
        assert run("train", "--data", tmp_path / tag, "--variant", "multiclass", "--epochs", 2, "--seed", 5,
                   "--out", tmp_path / f"{tag}.tsr") == 0
    assert (tmp_path / "a.tsr").read_bytes() == (tmp_path / "b.tsr").read_bytes()
    for name in ("image.ppm", "conv4.tsr", "regions.pgm", "tags.txt"):
        assert (tmp_path / "a" / "scene_0001" / name).read_bytes() == (tmp_path / "b" / "scene_0001" / name).read_bytes()


def test_format_errors_exit_3(tmp_path, capsys):
    (tmp_path / "bad.tsr").write_bytes(b"TSR1\x02\x03" + struct.pack("<3I", 2**16, 2**16, 2))
    assert run("fuse", "--conv4", tmp_path / "bad.tsr", "--conv5", tmp_path / "bad.tsr", "--out", tmp_path / "o") == 3
    assert "2^32" in capsys.readouterr().err
    (tmp_path / "short.tsr").write_bytes(b"TSR1\x02\x03\x01\x00")
    assert run("fuse", "--conv4", tmp_path / "short.tsr", "--conv5", tmp_path / "short.tsr", "--out", tmp_path / "o") == 3
    write_tensor(tmp_path / "r2.tsr", np.zeros((2, 2)))
    assert run("fuse", "--conv4", tmp_path / "r2.tsr", "--conv5", tmp_path / "r2.tsr", "--out", tmp_path / "o") == 3
    assert run("fuse", "--conv4", tmp_path / "missing.tsr", "--conv5", tmp_path / "r2.tsr", "--out", tmp_path / "o") == 3


def test_numeric_failure_exit_4(tmp_path):
    write_tensor(tmp_path / "s.tsr", np.full((2, 1, 1), np.nan))
    write_tags(tmp_path / "t.txt", TagSet(frozenset(), 2))
    assert run("loss", "--scores", tmp_path / "s.tsr", "--tags", tmp_path / "t.txt", "--variant", "weak") == 4


def test_usage_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("fuse", "--conv4", "x")
    assert exc.value.code == 2
    write_tensor(tmp_path / "s.tsr", np.zeros((2, 1, 1)))
    write_tags(tmp_path / "t.txt", TagSet(frozenset(), 2))
    with pytest.raises(SystemExit) as exc:
        run("loss", "--scores", tmp_path / "s.tsr", "--tags", tmp_path / "t.txt", "--variant", "fgbg")
    assert exc.value.code == 2
    assert run("synth", "--seed", 0, "--count", 1, "--out", tmp_path / "d", "--classes", 12) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "weakprior", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "synth" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "weakprior", "nope"], capture_output=True, text=True)
    assert proc.returncode == 2
