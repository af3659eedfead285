import math

import numpy as np
import pytest

from compressible_features import harness
from compressible_features.data import DatasetSpec, generate_synthetic
from compressible_features.harness import RunRecord, read_csv, report_table, select_table_row, write_csv
from compressible_features.plotting import svg_curve
from compressible_features.training import TrainConfig

SMALL = TrainConfig(hidden=(32, 64), steps=150, batch=64)


@pytest.fixture(scope="module")
def ds():
    return generate_synthetic(DatasetSpec(train_size=800, val_size=200, margin=5.0))


@pytest.fixture(scope="module")
def small_sweep(ds):
    return harness.sweep(ds, (1e-3, 1e-1), (0,), SMALL, keep_models=True)


def test_sweep_row_count(small_sweep):
    baseline_rows = [r for r in small_sweep.records if r.method != "ours"]
    ours = [r for r in small_sweep.records if r.method == "ours"]
    assert len(ours) == 2
    assert len(baseline_rows) == 2 + 4 + 7
    assert not small_sweep.failures


def test_lossless_relative_is_one(small_sweep):
    lossless = [r for r in small_sweep.records if r.method == "lossless"]
    assert lossless[0].relative_compression == 1.0


def test_codec_path_equals_in_memory(small_sweep, ds):
    model = small_sweep.models[(1e-3, 0)]
    rec, details = harness.evaluate(model, ds, 1000, 0)
    assert np.array_equal(details.decoded, details.in_memory)
    pred_mem = model.predict_from_features(details.in_memory)
    pred_dec = model.predict_from_features(details.decoded)
    assert np.array_equal(pred_mem, pred_dec)
    assert rec.val_error == pytest.approx(model.error(ds.x_val, ds.y_val))
    assert rec.total_bytes == sum(len(b) for b in details.blobs)
    assert rec.relative_compression == rec.total_bytes / 1000


def test_plain_model_evaluates_as_lossless(small_sweep, ds):
    rec, _ = harness.evaluate(small_sweep.models[(0.0, 0)], ds)
    assert rec.method == "lossless" and rec.relative_compression == 1.0


def test_sixteen_bit_quantization_is_harmless(small_sweep):
    rows = {r.method: r for r in small_sweep.records}
    assert abs(rows["quant_16"].val_error - rows["lossless"].val_error) <= 0.1
    assert rows["f16"].total_bytes < rows["lossless"].total_bytes


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_failed_run_recorded(ds):
    cfg = SMALL.with_(steps=20)
    result = harness.sweep(ds, (1e-3, math.inf), (0,), cfg)
    assert len(result.failures) == 1
    bad = [r for r in result.records if r.method == "ours" and math.isnan(r.val_error)]
    assert len(bad) == 1 and bad[0].lam == math.inf


def test_sweep_needs_two_lambdas(ds):
    with pytest.raises(ValueError):
        harness.sweep(ds, (1e-3,), (0,), SMALL)


def test_csv_roundtrip(tmp_path, small_sweep):
    path = tmp_path / "r.csv"
    write_csv(path, small_sweep.records)
    assert path.read_text().splitlines()[0] == "method,lambda,bits_per_example,total_bytes,relative_compression,train_error,val_error,seed"
    assert read_csv(path) == small_sweep.records
    write_csv(tmp_path / "again.csv", read_csv(path))
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def _rec(method, lam, size, val, train=0.0, seed=0):
    return RunRecord(method, lam, 8.0 * size, size, size / 1000, train, val, seed)


def test_selection_rule():
    records = [
        _rec("lossless", 0, 1000, 10.0),
        _rec("ours", 1e-3, 300, 9.0),
        _rec("ours", 1e-2, 120, 9.5),
        _rec("ours", 1e-1, 80, 9.9),
        _rec("ours", 1, 40, 30.0),
    ]
    row, ok = select_table_row(records)
    assert ok and row.lam == 1e-1
    row, ok = select_table_row([records[0], _rec("ours", 1, 40, 30.0), _rec("ours", 2, 30, 20.0)])
    assert not ok and row.val_error == 20.0


def test_report_table_contents():
    records = [_rec("lossless", 0, 4000, 10.0, 1.0), _rec("ours", 0.01, 500, 9.0, 3.0)]
    text = report_table(records, raw_bytes=200 * 64 * 4)
    assert "50.00KB" in text and "3.91KB" in text and "500B" in text
    # gap columns: 10 - 1 for lossless, 9 - 3 for ours
    assert "9.00      6.00" in text
    flagged = report_table([records[0], _rec("ours", 1, 10, 50.0)])
    assert "no model beats lossless" in flagged


def test_gap_definition():
    assert _rec("ours", 1, 10, 12.0, 4.0).gap == 8.0


def test_svg_curve(small_sweep):
    svg = svg_curve(small_sweep.records)
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    for family in ("ours", "f16", "quant", "pca"):
        assert family in svg
