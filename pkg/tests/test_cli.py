import json

import numpy as np
import pytest

from bumpercar.cli import main
from bumpercar.core import read_csv


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """A tiny pipeline shared by the tests below."""
    d = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--duration", "240", "--seed", "3", "--out", str(d / "truth.csv")]) == 0
    assert main(["generate", "--duration", "240", "--seed", "3", "--noise", "1e-3 1e-3 1e-3", "--pose-only",
                 "--out", str(d / "raw.csv")]) == 0
    assert main(["split", "--in", str(d / "truth.csv"), "--train", str(d / "train.csv"),
                 "--val", str(d / "val.csv")]) == 0
    return d


def test_generate_is_byte_identical(work, tmp_path):
    main(["generate", "--duration", "240", "--seed", "3", "--out", str(tmp_path / "again.csv")])
    assert (tmp_path / "again.csv").read_bytes() == (work / "truth.csv").read_bytes()


def test_pose_only_file(work):
    raw = read_csv(work / "raw.csv")
    assert raw.velocities is None and raw.kin_states is None and len(raw) == 2400


def test_split_sizes(work):
    assert len(read_csv(work / "val.csv")) == 1100
    assert len(read_csv(work / "train.csv")) == 1300


def test_estimate(work, capsys):
    assert main(["estimate", "--in", str(work / "raw.csv"), "--out", str(work / "labeled.csv")]) == 0
    lab = read_csv(work / "labeled.csv")
    assert lab.kin_states.shape == (2400, 4)
    assert "median NIS" in capsys.readouterr().out


def test_fit_train_evaluate_rollout(work, capsys):
    tr, va = str(work / "train.csv"), str(work / "val.csv")
    assert main(["ga-fit", "--data", tr, "--out", str(work / "fit.toml"), "--population", "12",
                 "--generations", "3", "--history", str(work / "hist.txt")]) == 0
    hist = [float(line.split()[1]) for line in (work / "hist.txt").read_text().splitlines()]
    assert len(hist) == 4 and all(b <= a for a, b in zip(hist, hist[1:]))
    assert main(["sindy-fit", "--data", tr, "--out", str(work / "m.sindy")]) == 0
    assert main(["sindy-fit", "--data", tr, "--sweep", "0.005,0.02"]) == 0
    assert "support" in capsys.readouterr().out
    for kind, extra in (("kmlp", []), ("narx", []), ("residual", ["--base", str(work / "m.sindy")])):
        assert main(["mlp-train", "--kind", kind, "--data", tr, "--out", str(work / f"{kind}.npz"),
                     "--epochs", "3", *extra]) == 0
    capsys.readouterr()
    models = (f"ne,ne={work / 'fit.toml'},reference,ksindy={work / 'm.sindy'},kmlp={work / 'kmlp.npz'},"
              f"narx={work / 'narx.npz'},ksindy-mlp={work / 'residual.npz'}")
    assert main(["evaluate", "--models", models, "--val", va, "--train", tr, "--repeats", "1", "--json",
                 "--out", str(work / "report.json")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [m["name"] for m in doc["models"]] == ["NE", "NE", "Reference", "K-SINDy", "K-MLP", "NARX-MLP",
                                                   "K-SINDy-MLP"]
    assert doc["models"][0]["nmse_e3"] < 1e-6
    assert json.loads((work / "report.json").read_text())["dataset"] == doc["dataset"]
    assert main(["rollout", "--model", f"ksindy={work / 'm.sindy'}", "--ref", va, "--out", str(work / "ro.csv"),
                 "--segments", str(work / "seg.txt")]) == 0
    ro = read_csv(work / "ro.csv")
    assert ro.velocities.shape == (1100, 3)
    assert len((work / "seg.txt").read_text().splitlines()) >= 55


def test_evaluate_table(work, capsys):
    assert main(["evaluate", "--models", "ne", "--val", str(work / "val.csv"), "--repeats", "1"]) == 0
    out = capsys.readouterr().out
    assert "NMSE x1e3" in out and "oracle-relative" in out


def test_errors_exit_nonzero(work, capsys, tmp_path):
    assert main(["estimate", "--in", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o.csv")]) == 1
    assert "error" in capsys.readouterr().err
    assert main(["evaluate", "--models", "warp-drive", "--val", str(work / "val.csv")]) == 1
    assert main(["evaluate", "--models", "ksindy", "--val", str(work / "val.csv")]) == 1
    assert main(["mlp-train", "--kind", "residual", "--data", str(work / "train.csv"),
                 "--out", str(tmp_path / "x.npz")]) == 1


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--noise", "1 2", "--out", "x.csv"])
    assert exc.value.code == 2
