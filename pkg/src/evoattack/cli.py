"""Command line entry point: ``attack {run,train-fixture,transfer,eval}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .defenses import DefenseSpec, defended_oracle
from .harness.datasets import DatasetFormatError, load_cifar_bin, load_mnist_idx
from .harness.experiment import ExperimentConfig, run_experiment
from .harness.export import ExportError, export_report, load_report
from .harness.transfer import run_transferability
from .model_runtime import (
    Model,
    QueryOracle,
    TrainConfig,
    TrainingDivergedError,
    WeightFileError,
    dense_net,
    load_weights,
    save_weights,
    table2_cnn,
    train_fixture,
)
from .query_attack import ConfigError
from .tensor_ops import parse_eps

log = logging.getLogger("evoattack")


def _int_list(text):
    return tuple(int(v) for v in text.split(",") if v)


def _load_data(args):
    if args.format == "cifar":
        return load_cifar_bin(args.data, limit=args.limit)
    if not args.labels:
        raise SystemExit("--labels is required for IDX data")
    return load_mnist_idx(args.data, args.labels, limit=args.limit)


def _add_data_args(p, required=True):
    p.add_argument("--data", required=required, help="IDX images file, or CIFAR-10 binary batch")
    p.add_argument("--labels", help="IDX labels file (IDX format only)")
    p.add_argument("--format", choices=["idx", "cifar"], default="idx")
    p.add_argument("--limit", type=int, default=None, help="read only the first N records")


def cmd_run(args) -> int:
    cfg = ExperimentConfig(
        model_path=args.model,
        images_path=args.data,
        labels_path=args.labels,
        data_format=args.format,
        attack=args.attack,
        eps=parse_eps(args.eps),
        lam=args.lam,
        pop_size=args.pop,
        tournament=args.tournament,
        budget=args.budget,
        p0=args.p0,
        init_mode=args.init,
        eval_chunk=args.eval_chunk or None,
        defense=args.defense,
        count=args.count,
        seed=args.seed,
        out_dir=args.out,
        workers=args.workers,
    )
    report = run_experiment(cfg)
    if args.out:
        export_report(report, args.out, images=not args.no_images)
    median = "n/a" if report.median_queries is None else f"{report.median_queries:g}"
    print(
        f"attack={cfg.attack} eps={cfg.eps:.6g} defense={cfg.defense or 'none'} "
        f"images={len(report.attacked)} ASR={report.asr:.4f} median_queries={median} budget={report.budget}"
    )
    return 0


def cmd_train(args) -> int:
    data = _load_data(args)
    if args.arch == "cnn":
        spec = table2_cnn(widths=_int_list(args.widths), hidden=args.hidden,
                          input_shape=data.images.shape[1:], num_classes=data.num_classes)
    else:
        spec = dense_net(hidden=_int_list(args.widths), input_shape=data.images.shape[1:],
                         num_classes=data.num_classes)
    hyper = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, optimizer=args.optimizer,
                        learning_rate=args.lr, weight_decay=args.weight_decay, seed=args.seed)
    weights = train_fixture(spec, data, hyper)
    save_weights(args.out, spec, weights)
    msg = f"saved {args.out}"
    if args.test_data:
        test = (load_cifar_bin(args.test_data) if args.format == "cifar"
                else load_mnist_idx(args.test_data, args.test_labels))
        msg += f" test_accuracy={Model(spec, weights).accuracy(test.images, test.labels):.4f}"
    print(msg)
    return 0


def cmd_eval(args) -> int:
    spec, weights = load_weights(args.model)
    model = Model(spec, weights)
    data = _load_data(args)
    if args.defense:
        oracle = defended_oracle(QueryOracle(model), DefenseSpec.parse(args.defense))
        preds = [int(np.argmax(oracle.predict_logits(x))) for x in data.images]
        acc = float(np.mean(np.asarray(preds) == data.labels))
    else:
        acc = model.accuracy(data.images, data.labels)
    print(f"accuracy={acc:.4f} images={len(data)} defense={args.defense or 'none'}")
    return 0


def cmd_transfer(args) -> int:
    spec, weights = load_weights(args.target)
    target = QueryOracle(Model(spec, weights))
    reports = [load_report(p) for p in args.source_report]
    results = run_transferability(reports, target, filter_clean=not args.no_filter)
    rows = []
    for eps in sorted(results):
        r = results[eps]
        rows.append({"eps": eps, "tsr": r.tsr, "evaluated": r.evaluated, "transferred": r.transferred,
                     "source_successes": r.source_successes, "dropped_unclean": r.dropped_unclean})
        print(f"eps={eps:.6g} TSR={r.tsr:.4f} ({r.transferred}/{r.evaluated}, dropped {r.dropped_unclean})")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=1)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attack", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="attack a set of correctly classified images")
    run.add_argument("--model", required=True)
    _add_data_args(run)
    run.add_argument("--attack", choices=["query", "random-search"], default="query")
    run.add_argument("--eps", default="60/255", help="'k/255' or a decimal")
    run.add_argument("--budget", type=int, default=42_000)
    run.add_argument("--pop", type=int, default=70)
    run.add_argument("--tournament", type=int, default=25)
    run.add_argument("--lambda", dest="lam", type=float, default=1.0)
    run.add_argument("--p0", type=float, default=0.1)
    run.add_argument("--init", choices=["full_stripes", "sparse_stripes"], default="full_stripes")
    run.add_argument("--eval-chunk", type=int, default=1,
                     help="candidates per oracle call; 0 sends whole generations (faster, coarser query counts)")
    run.add_argument("--defense", default=None, help="jpeg:Q, bitdepth:D, smooth:W or meansmooth:W")
    run.add_argument("--count", type=int, default=200)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--out", default=None)
    run.add_argument("--no-images", action="store_true", help="skip the PGM/PPM dumps")
    run.set_defaults(func=cmd_run)

    train = sub.add_parser("train-fixture", help="train a small victim model")
    _add_data_args(train)
    train.add_argument("--arch", choices=["cnn", "dense"], default="cnn")
    train.add_argument("--widths", default="16,32,64", help="conv widths (cnn) or hidden sizes (dense)")
    train.add_argument("--hidden", type=int, default=128, help="dense width after the conv blocks")
    train.add_argument("--epochs", type=int, default=3)
    train.add_argument("--batch-size", type=int, default=64)
    train.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    train.add_argument("--lr", type=float, default=1e-3)
    train.add_argument("--weight-decay", type=float, default=1e-6)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--test-data")
    train.add_argument("--test-labels")
    train.add_argument("--out", required=True)
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="report accuracy only")
    ev.add_argument("--model", required=True)
    _add_data_args(ev)
    ev.add_argument("--defense", default=None)
    ev.set_defaults(func=cmd_eval)

    tr = sub.add_parser("transfer", help="transfer success rate of a report's adversarial images")
    tr.add_argument("--source-report", required=True, action="append", help="report.json; repeat for several eps")
    tr.add_argument("--target", required=True)
    tr.add_argument("--no-filter", action="store_true", help="do not drop images the target already misclassifies")
    tr.add_argument("--out", default=None)
    tr.set_defaults(func=cmd_transfer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, ConfigError, WeightFileError, DatasetFormatError,
            ExportError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
