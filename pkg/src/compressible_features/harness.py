"""Evaluation through the real codec, baselines, lambda sweeps and summaries."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import baselines
from .codec import decode, encode
from .data import Dataset
from .training import Model, TrainConfig, train_model

__all__ = [
    "RunRecord",
    "CSV_FIELDS",
    "DEFAULT_LAMBDAS",
    "EvalDetails",
    "evaluate",
    "baseline_records",
    "SweepResult",
    "sweep",
    "select_table_row",
    "report_table",
    "write_csv",
    "read_csv",
]

log = logging.getLogger(__name__)

CSV_FIELDS = ["method", "lambda", "bits_per_example", "total_bytes", "relative_compression", "train_error", "val_error", "seed"]
DEFAULT_LAMBDAS = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


@dataclass
class RunRecord:
    method: str
    lam: float
    bits_per_example: float
    total_bytes: int
    relative_compression: float
    train_error: float
    val_error: float
    seed: int = 0

    @property
    def gap(self) -> float:
        """Generalization gap, validation minus training error (points)."""
        return self.val_error - self.train_error

    def row(self) -> Dict[str, object]:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return {k: d[k] for k in CSV_FIELDS}


def write_csv(path, records: Iterable[RunRecord]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in records:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.row().items()})


def read_csv(path) -> List[RunRecord]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_FIELDS:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        return [
            RunRecord(
                row["method"],
                float(row["lambda"]),
                float(row["bits_per_example"]),
                int(row["total_bytes"]),
                float(row["relative_compression"]),
                float(row["train_error"]),
                float(row["val_error"]),
                int(row["seed"]),
            )
            for row in reader
        ]


def _error(pred: np.ndarray, y: np.ndarray) -> float:
    return 100.0 * float(np.mean(pred != y)) if len(y) else 0.0


@dataclass
class EvalDetails:
    blobs: List[bytes] = field(default_factory=list)
    decoded: Optional[np.ndarray] = None
    in_memory: Optional[np.ndarray] = None
    rate_bits: float = 0.0
    payload_bytes: int = 0
    escape_count: int = 0


def evaluate(model: Model, dataset: Dataset, reference_bytes: Optional[int] = None, seed: int = 0):
    """Score ``model`` on the validation split through the full storage path.

    Bottleneck models: every example is quantized, range coded to bytes,
    decoded from those bytes, and classified from the decoded symbols.
    Plain models are scored as the lossless baseline. Returns
    ``(RunRecord, EvalDetails)``.
    """
    details = EvalDetails()
    if not model.uses_bottleneck:
        comp = baselines.deflate_lossless(model.features(dataset.x_val))
        details.blobs = comp.blobs
        total = comp.total_bytes
        ref = reference_bytes or total
        rec = RunRecord(
            "lossless", 0.0, comp.bits_per_example, total, total / ref if ref else 1.0,
            model.error(dataset.x_train, dataset.y_train), _error(model.predict_from_features(comp.reconstruction), dataset.y_val), seed,
        )
        return rec, details
    if model.tables is None:
        raise ValueError("model has no probability tables")
    z_hat = model.quantized_features(dataset.x_val)
    decoded = np.empty_like(z_hat)
    for i, row in enumerate(z_hat):
        blob = encode(row, model.tables)
        details.payload_bytes += len(blob.payload)
        details.escape_count += len(blob.escapes)
        data = blob.to_bytes()
        details.blobs.append(data)
        decoded[i] = decode(data, model.tables)
    details.decoded = decoded
    details.in_memory = z_hat
    if len(z_hat):
        details.rate_bits = model.density.rate_bits_discrete(z_hat).total_bits
    total = sum(len(b) for b in details.blobs)
    n = max(len(z_hat), 1)
    rec = RunRecord(
        "ours", model.lam, 8.0 * total / n, total,
        total / reference_bytes if reference_bytes else math.nan,
        model.error(dataset.x_train, dataset.y_train),
        _error(model.predict_from_features(decoded), dataset.y_val), seed,
    )
    return rec, details


def baseline_records(model: Model, dataset: Dataset, seed: int = 0) -> List[RunRecord]:
    """Lossless, f16, uniform quantization and PCA rows for a plain model.

    Quantizer ranges and the PCA basis come from training-split features only.
    """
    z_train = model.features(dataset.x_train).astype(np.float32)
    z_val = model.features(dataset.x_val).astype(np.float32)
    lossless = baselines.deflate_lossless(z_val)
    ref = lossless.total_bytes
    n = max(len(z_val), 1)

    def row(method, comp_val, comp_train):
        return RunRecord(
            method, 0.0, 8.0 * comp_val.total_bytes / n, comp_val.total_bytes, comp_val.total_bytes / ref,
            _error(model.predict_from_features(comp_train.reconstruction), dataset.y_train),
            _error(model.predict_from_features(comp_val.reconstruction), dataset.y_val), seed,
        )

    records = [
        row("lossless", lossless, baselines.deflate_lossless(z_train)),
        row("f16", baselines.f16_deflate(z_val), baselines.f16_deflate(z_train)),
    ]
    quant = baselines.UniformQuantizer.fit(z_train)
    for bins in baselines.QUANT_BINS:
        name = f"quant_{int(math.log2(bins))}"
        records.append(row(name, quant.compress(z_val, bins), quant.compress(z_train, bins)))
    basis = baselines.pca_fit(z_train)
    for m in baselines.PCA_COMPONENTS:
        if m <= basis.dim:
            records.append(row(f"pca_{m}", baselines.pca_compress(z_val, basis, m), baselines.pca_compress(z_train, basis, m)))
    return records


@dataclass
class SweepResult:
    records: List[RunRecord]
    models: Dict[tuple, Model] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)


def sweep(
    dataset: Dataset,
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    seeds: Sequence[int] = (0,),
    config: TrainConfig = TrainConfig(),
    keep_models: bool = False,
) -> SweepResult:
    """Train a plain baseline plus one bottleneck model per ``(lambda, seed)``.

    A failed run leaves a row of NaNs rather than aborting the sweep.
    """
    if len(lambdas) < 2:
        raise ValueError("a sweep needs at least two lambda values")
    result = SweepResult([])
    for seed in seeds:
        base = train_model(dataset, config.with_(lam=0.0, seed=seed))
        base_rows = baseline_records(base, dataset, seed)
        result.records.extend(base_rows)
        ref = base_rows[0].total_bytes
        if keep_models:
            result.models[(0.0, seed)] = base
        for lam in lambdas:
            try:
                model = train_model(dataset, config.with_(lam=lam, seed=seed))
                rec, _ = evaluate(model, dataset, ref, seed)
            except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
                log.warning("run lambda=%g seed=%d failed: %s", lam, seed, exc)
                result.failures.append(f"lambda={lam:g} seed={seed}: {exc}")
                rec = RunRecord("ours", lam, math.nan, 0, math.nan, math.nan, math.nan, seed)
                model = None
            result.records.append(rec)
            if keep_models and model is not None:
                result.models[(lam, seed)] = model
            log.info("lambda=%g seed=%d bits/example=%.1f val_error=%.2f", lam, seed, rec.bits_per_example, rec.val_error)
    return result


def select_table_row(records: Sequence[RunRecord]):
    """Lowest-rate ``ours`` row whose validation error beats lossless.

    Returns ``(row, qualified)``; when nothing qualifies the lowest-error
    ``ours`` row is returned with ``qualified=False``.
    """
    lossless = [r for r in records if r.method == "lossless"]
    ours = [r for r in records if r.method == "ours" and not math.isnan(r.val_error)]
    if not lossless or not ours:
        raise ValueError("need a lossless row and at least one ours row")
    baseline_error = lossless[0].val_error
    better = [r for r in ours if r.val_error < baseline_error]
    if better:
        return min(better, key=lambda r: (r.total_bytes, r.val_error)), True
    return min(ours, key=lambda r: (r.val_error, r.total_bytes)), False


def _fmt_bytes(n: float) -> str:
    for unit, scale in (("GB", 2**30), ("MB", 2**20), ("KB", 2**10)):
        if n >= scale:
            return f"{n / scale:.2f}{unit}"
    return f"{int(n)}B"


def report_table(records: Sequence[RunRecord], raw_bytes: Optional[int] = None) -> str:
    """Errors, generalization gap and split sizes, lossless versus the selected model, per seed."""
    lines = [
        f"{'seed':>4}  {'train err':>19}  {'val err':>19}  {'gap (val-train)':>19}  {'validation set size':>32}",
        f"{'':>4}" + f"  {'lossless':>9} {'ours':>9}" * 3 + f"  {'lossless':>10} {'ours':>10} {'raw':>10}  lambda",
    ]
    for seed in sorted({r.seed for r in records}):
        rows = [r for r in records if r.seed == seed]
        lossless = next(r for r in rows if r.method == "lossless")
        best, qualified = select_table_row(rows)
        raw = _fmt_bytes(raw_bytes) if raw_bytes is not None else "-"
        flag = "" if qualified else "  (no model beats lossless; lowest-error model shown)"
        lines.append(
            f"{seed:>4}  {lossless.train_error:>9.2f} {best.train_error:>9.2f}  {lossless.val_error:>9.2f} {best.val_error:>9.2f}  "
            f"{lossless.gap:>9.2f} {best.gap:>9.2f}  "
            f"{_fmt_bytes(lossless.total_bytes):>10} {_fmt_bytes(best.total_bytes):>10} {raw:>10}  {best.lam:g}{flag}"
        )
    return "\n".join(lines)
