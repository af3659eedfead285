import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from compressible_features.baselines import FeatureFile
from compressible_features.cli import main
from compressible_features.data import DatasetSpec, generate_synthetic, save_binary_records
from compressible_features.training import Model

FAST = ["--steps", "40", "--batch", "32"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def trained(workdir):
    out = workdir / "model"
    assert main(["train", "--lambda", "0.01", "--out", str(out), *FAST]) == 0
    return out


def test_train_writes_artifacts(trained):
    assert (trained / "model.cfck").read_bytes()[:4] == b"CFCK"
    assert (trained / "tables.cftb").read_bytes()[:4] == b"CFTB"


def test_compress_decompress_roundtrip(trained, workdir):
    blobs, feats = workdir / "blobs", workdir / "feats.cfft"
    main(["compress", "--model", str(trained), "--out", str(blobs)])
    names = sorted(os.listdir(blobs))
    assert len(names) == 1000 and all(open(blobs / n, "rb").read(4) == b"CFZ1" for n in names[:5])
    main(["decompress", "--model", str(trained), "--blobs", str(blobs), "--out", str(feats)])
    decoded = FeatureFile.load(feats).values
    model = Model.load(trained)
    expected = model.quantized_features(generate_synthetic(DatasetSpec()).x_val)
    np.testing.assert_array_equal(decoded, expected.astype(np.float32))


def test_eval_writes_record(trained, workdir, capsys):
    out = workdir / "eval.csv"
    main(["eval", "--model", str(trained), "--reference-bytes", "100000", "--out", str(out)])
    rows = list(csv.DictReader(open(out)))
    assert rows[0]["method"] == "ours" and float(rows[0]["lambda"]) == 0.01
    assert "method,lambda" in capsys.readouterr().out


def test_baseline_on_plain_model(workdir):
    plain = workdir / "plain"
    main(["train", "--out", str(plain), *FAST])
    out = workdir / "base.csv"
    main(["baseline", "--model", str(plain), "--out", str(out)])
    methods = [r["method"] for r in csv.DictReader(open(out))]
    assert methods[:2] == ["lossless", "f16"] and "quant_16" in methods and "pca_64" in methods


def test_sweep_report_plot(workdir, capsys):
    out = workdir / "sweep"
    main(["sweep", "--lambdas", "0.001", "0.1", "--out", str(out), *FAST])
    for name in ("records.csv", "curve.svg", "summary.txt"):
        assert (out / name).exists()
    rows = list(csv.DictReader(open(out / "records.csv")))
    assert len(rows) == 2 + 13
    capsys.readouterr()
    main(["report", "--records", str(out / "records.csv"), "--raw-bytes", "512000"])
    assert "lossless" in capsys.readouterr().out
    main(["plot", "--records", str(out / "records.csv"), "--out", str(workdir / "c.svg")])
    assert (workdir / "c.svg").read_text().startswith("<svg")


def test_binary_dataset_input(workdir, trained):
    rng = np.random.default_rng(0)
    path = workdir / "rec.bin"
    save_binary_records(path, rng.uniform(size=(60, 64)), rng.integers(0, 10, size=60))
    main(["eval", "--model", str(trained), "--dataset", str(path), "--dim", "64"])
    with pytest.raises(SystemExit):
        main(["eval", "--model", str(trained), "--dataset", str(path)])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "compressible_features", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("train", "sweep", "compress", "decompress", "eval", "baseline", "report", "plot"):
        assert cmd in res.stdout
