"""Command-line entry point: ``redre <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal-consistency failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import _kernels
from .config import ConfigError, load_config
from .container import ContainerError
from .data import DataError, Dataset, load_transactions, prepare_dataset
from .encoder import load_checkpoint, save_checkpoint
from .metrics import ConsistencyError, config_digest, evaluate
from .rotary import PositionMode
from .synthetic import generate_synthetic
from .training import compare_models, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONSISTENCY = 0, 1, 2, 3

log = logging.getLogger("redre")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dataset_from_records(records, cfg) -> Dataset:
    d = cfg.data
    return prepare_dataset(records, d.grouping_columns, d.max_seq_len, d.valid_fraction,
                           d.split_seed, d.feature_columns, d.hash_buckets)


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    records = generate_synthetic(args.entities, args.mean_len, args.fraud_rate, args.burst,
                                 args.seed, max_len=cfg.data.max_seq_len)
    if args.csv_dir:
        out = Path(args.csv_dir)
        out.mkdir(parents=True, exist_ok=True)
        records.to_csv(out / "train_transaction.csv", index=False)
    cfg.data.split_seed = args.seed
    ds = _dataset_from_records(records, cfg)
    ds.meta["source"] = {
        "kind": "synthetic", "entities": args.entities, "mean_len": args.mean_len,
        "fraud_rate": args.fraud_rate, "burst_strength": args.burst, "seed": args.seed,
    }
    ds.save(args.out)
    print(f"wrote {args.out}: {len(ds.train)} train / {len(ds.valid)} valid sequences, "
          f"{ds.feature_dim} features")
    return EXIT_OK


def cmd_ingest(args) -> int:
    cfg = load_config(args.config)
    transactions = args.transactions or cfg.data.transactions
    if not transactions:
        raise UsageError("no transaction table given (--transactions or [data] transactions)")
    identity = args.identity or cfg.data.identity
    records = load_transactions(transactions, identity)
    ds = _dataset_from_records(records, cfg)
    ds.meta["source"] = {"kind": "ieeecis", "transactions": Path(transactions).name,
                         "identity": Path(identity).name if identity else None}
    ds.save(args.out)
    print(f"wrote {args.out}: {len(ds.train)} train / {len(ds.valid)} valid sequences, "
          f"{ds.feature_dim} features")
    for w in ds.meta.get("split_warnings", []):
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    ds = Dataset.load(args.data)
    enc = cfg.encoder_config(ds.feature_dim, args.mode)
    params, history = train(ds.train, ds.valid, enc, cfg.train)
    save_checkpoint(args.out, enc, params, {
        "best_epoch": history.best_epoch,
        "seed": cfg.train.seed,
        "config_digest": config_digest(enc.to_dict(), cfg.train.to_dict()),
    })
    Path(args.out).with_suffix(".history.tsv").write_text(history.to_tsv(include_time=False))
    print(history.to_tsv(), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = Dataset.load(args.data)
    enc, params, meta = load_checkpoint(args.checkpoint)
    if enc.input_dim != ds.feature_dim:
        raise DataError(f"checkpoint expects {enc.input_dim} features, dataset has {ds.feature_dim}")
    report = evaluate(params, ds.valid, enc, meta.get("seed", 0), meta.get("config_digest", ""))
    report.write(args.report)
    print(f"{enc.position_mode.value}\tauc={report.auc:.6f}\tn_pos={report.n_pos}\tn_neg={report.n_neg}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    ds = Dataset.load(args.data)
    result = compare_models(ds, cfg.encoder_config(ds.feature_dim), cfg.train, cfg.modes)
    result.write(args.report_dir)
    print(result.summary(), end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    cfg = load_config(args.config)
    section = cfg.gradcheck
    if args.eps is not None:
        if not 0 < args.eps <= 1e-2:
            raise UsageError(f"--eps must lie in (0, 1e-2], got {args.eps}")
        section.eps = args.eps
    ok = True
    for mode, report in run_suite(section).items():
        passed = report.passed(section.tolerance)
        ok &= passed
        print(f"{mode}\tmax_rel_err={report.max_error:.3e}\tworst={report.worst_param}"
              f"{list(report.worst_index)}\t{'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CONSISTENCY


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="redre", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--entities", type=int, default=5000)
    p.add_argument("--fraud-rate", type=float, default=0.035)
    p.add_argument("--burst", type=float, default=8.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mean-len", type=float, default=12.0)
    p.add_argument("--config")
    p.add_argument("--csv-dir", help="also write the raw table as train_transaction.csv here")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="build a dataset from ieeecis-style CSV tables")
    p.add_argument("--transactions")
    p.add_argument("--identity")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=[m.value for m in PositionMode])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the validation split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train and evaluate every configured position mode")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--report-dir", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference check of the encoder in all modes")
    p.add_argument("--config")
    p.add_argument("--eps", type=float)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.debug("kernel backend: %s", _kernels.BACKEND)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ContainerError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConsistencyError as exc:
        print(f"consistency failure: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
