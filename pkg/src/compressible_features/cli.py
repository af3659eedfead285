"""Command line entry point: ``python -m compressible_features <command>``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import harness
from .baselines import FeatureFile
from .codec import decode, encode
from .data import DatasetSpec, generate_synthetic, load_binary_records, split
from .plotting import svg_curve
from .training import Model, TrainConfig, train_model

log = logging.getLogger("compressible_features")


def _load_dataset(args):
    if args.dataset == "synthetic":
        return generate_synthetic(DatasetSpec(seed=args.data_seed))
    if args.dim is None:
        raise SystemExit("--dim is required for binary record files")
    x, y = load_binary_records(args.dataset, args.dim, args.classes)
    return split(x, y, args.classes)


def _config(args, lam=None, seed=None) -> TrainConfig:
    return TrainConfig(
        lam=args.lam if lam is None else lam,
        steps=args.steps,
        seed=args.seed[0] if seed is None else seed,
        lr0=args.lr,
        batch=args.batch,
    )


def _split_arrays(dataset, which):
    return (dataset.x_val, dataset.y_val) if which == "val" else (dataset.x_train, dataset.y_train)


def cmd_train(args):
    dataset = _load_dataset(args)
    model = train_model(dataset, _config(args))
    model.save(args.out)
    print(f"saved model to {args.out} (train error {model.error(dataset.x_train, dataset.y_train):.2f}%, "
          f"val error {model.error(dataset.x_val, dataset.y_val):.2f}%)")


def cmd_sweep(args):
    dataset = _load_dataset(args)
    result = harness.sweep(dataset, args.lambdas, args.seed, _config(args, lam=0.0))
    os.makedirs(args.out, exist_ok=True)
    harness.write_csv(os.path.join(args.out, "records.csv"), result.records)
    with open(os.path.join(args.out, "curve.svg"), "w") as f:
        f.write(svg_curve(result.records))
    raw = dataset.x_val.shape[0] * _config(args).hidden[-1] * 4
    summary = harness.report_table(result.records, raw)
    with open(os.path.join(args.out, "summary.txt"), "w") as f:
        f.write(summary + "\n")
    print(summary)
    for failure in result.failures:
        print(f"failed run: {failure}", file=sys.stderr)


def cmd_compress(args):
    dataset = _load_dataset(args)
    model = Model.load(args.model)
    if not model.uses_bottleneck:
        raise SystemExit("model was trained without a bottleneck (lambda = 0)")
    x, _ = _split_arrays(dataset, args.split)
    os.makedirs(args.out, exist_ok=True)
    total = 0
    for i, row in enumerate(model.quantized_features(x)):
        data = encode(row, model.tables).to_bytes()
        total += len(data)
        with open(os.path.join(args.out, f"{i:06d}.cfz"), "wb") as f:
            f.write(data)
    print(f"wrote {len(x)} blobs, {total} bytes ({8 * total / max(len(x), 1):.1f} bits/example)")


def cmd_decompress(args):
    model = Model.load(args.model)
    names = sorted(n for n in os.listdir(args.blobs) if n.endswith(".cfz"))
    rows = []
    for name in names:
        with open(os.path.join(args.blobs, name), "rb") as f:
            rows.append(decode(f.read(), model.tables))
    values = np.array(rows, dtype=np.float32).reshape(len(rows), model.channels)
    FeatureFile(values).save(args.out)
    print(f"decoded {len(rows)} examples into {args.out}")


def cmd_eval(args):
    dataset = _load_dataset(args)
    model = Model.load(args.model)
    rec, details = harness.evaluate(model, dataset, args.reference_bytes, args.seed[0])
    if details.decoded is not None and not np.array_equal(details.decoded, details.in_memory):
        raise SystemExit("decoded features differ from in-memory features")
    if args.out:
        harness.write_csv(args.out, [rec])
    print(",".join(harness.CSV_FIELDS))
    print(",".join(str(v) for v in rec.row().values()))


def cmd_baseline(args):
    dataset = _load_dataset(args)
    model = Model.load(args.model)
    records = harness.baseline_records(model, dataset, args.seed[0])
    if args.out:
        harness.write_csv(args.out, records)
    for r in records:
        print(f"{r.method:>10}  bits/example {r.bits_per_example:9.1f}  relative {r.relative_compression:7.4f}  val error {r.val_error:6.2f}%")


def cmd_report(args):
    print(harness.report_table(harness.read_csv(args.records), args.raw_bytes))


def cmd_plot(args):
    with open(args.out, "w") as f:
        f.write(svg_curve(harness.read_csv(args.records)))
    print(f"wrote {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compressible_features", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p):
        p.add_argument("--dataset", default="synthetic", help="'synthetic' or a binary record file")
        p.add_argument("--data-seed", type=int, default=0)
        p.add_argument("--dim", type=int, help="feature bytes per record (binary files)")
        p.add_argument("--classes", type=int, default=10)

    def train_args(p):
        p.add_argument("--lambda", dest="lam", type=float, default=0.0)
        p.add_argument("--seed", type=int, nargs="+", default=[0])
        p.add_argument("--steps", type=int, default=5000)
        p.add_argument("--lr", type=float, default=0.005)
        p.add_argument("--batch", type=int, default=128)

    p = sub.add_parser("train", help="train one model")
    data_args(p)
    train_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="baseline plus a lambda sweep")
    data_args(p)
    train_args(p)
    p.add_argument("--lambdas", type=float, nargs="+", default=list(harness.DEFAULT_LAMBDAS))
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compress", help="range-code features of a split to .cfz blobs")
    data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=["train", "val"], default="val")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="decode .cfz blobs into a CFFT feature file")
    p.add_argument("--model", required=True)
    p.add_argument("--blobs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("eval", help="evaluate a model through the codec")
    data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, nargs="+", default=[0])
    p.add_argument("--reference-bytes", type=int, help="lossless size used for relative compression")
    p.add_argument("--out", help="CSV file for the record")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="classical compressors on a plain model's features")
    data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, nargs="+", default=[0])
    p.add_argument("--out", help="CSV file for the records")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("report", help="summary table from a records CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--raw-bytes", type=int)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("plot", help="SVG curve from a records CSV")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
