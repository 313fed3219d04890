"""Command-line pipeline: prepare, train, eval, compare, bench.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
abort during training.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import kernels
from .blocks import estimate_thresholds, pack_sequences, segment_dataset, write_histogram_csv
from .core import ConfigError, DataError, TrainConfig
from .eval import CANDIDATE_MODES, evaluate
from .ingest import Dataset, Schema, dataset_stats, prepare
from .persist import load_checkpoint, save_checkpoint
from .train import NumericError, TrainTrace, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

_CONFIG_FLAGS = ("eta", "lam", "k", "epochs", "b", "B", "alpha", "mu", "seed", "init_scale", "bpr_steps", "eta_over_sqrt_n")


def _parse_schema(text: str) -> Schema:
    if text == "binary":
        return Schema(mode="binary")
    if text == "explicit":
        return Schema(mode="explicit")
    if text.startswith("explicit:"):
        try:
            return Schema(mode="explicit", threshold=float(text.split(":", 1)[1]))
        except ValueError:
            pass
    raise ConfigError(f"--schema must be 'explicit[:THRESHOLD]' or 'binary', got {text!r}")


def _parse_ks(text: str) -> list[int]:
    try:
        ks = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"--k-at must be a comma list of integers, got {text!r}") from None
    if not ks or min(ks) < 1:
        raise ConfigError(f"--k-at values must be positive, got {text!r}")
    return ks


def _sep_flag(text: str):
    return {"auto": None, "tab": "\t", "comma": ","}[text]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with config values (flags take precedence)")
    p.add_argument("--eta", type=float, default=None, help="SGD learning rate")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="L2 regularization weight")
    p.add_argument("--k", type=int, default=None, help="latent dimension")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--b", type=int, default=None, help="lower block threshold (saros_b)")
    p.add_argument("--B", type=int, default=None, help="upper block threshold (saros_b)")
    p.add_argument("--alpha", type=float, default=None, help="momentum step size (saros_m)")
    p.add_argument("--mu", type=float, default=None, help="momentum coefficient (saros_m)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--init-scale", dest="init_scale", type=float, default=None)
    p.add_argument("--steps", dest="bpr_steps", type=int, default=None, help="triplet steps for bpr (default epochs * |train|)")
    p.add_argument("--eta-over-sqrt-n", dest="eta_over_sqrt_n", action="store_const", const=True, default=None,
                   help="treat --eta as c and step with c / sqrt(n_users)")


def _merge_config(args) -> TrainConfig:
    """Precedence: flags > config file > defaults."""
    file_cfg = {}
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text())
    cfg = TrainConfig.from_dict(file_cfg)
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    return cfg.validate()


def cmd_prepare(args) -> int:
    schema = _parse_schema(args.schema)
    if args.sep != "auto":
        schema = Schema(schema.mode, schema.threshold, _sep_flag(args.sep), schema.has_header)
    dataset, discards = prepare(args.input, schema, args.train_fraction)
    out = Path(args.out)
    dataset.save(out)
    discards.write(out / "discard_report.txt")
    stats = dataset_stats(dataset)
    stats["n_discarded_users"] = discards.n_users
    stats["n_discarded_interactions"] = discards.n_interactions
    (out / "stats.json").write_text(json.dumps(stats, sort_keys=True, indent=1) + "\n")
    sequences = segment_dataset(dataset)
    write_histogram_csv(sequences, out / "block_size_hist.csv", out / "blocks_per_user_hist.csv")
    print(f"prepared {dataset.n_users} users x {dataset.n_items} items, "
          f"{stats['n_train']} train / {stats['n_test']} test interactions "
          f"({discards.n_users} users discarded) -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = Dataset.load(args.dataset)
    cfg = _merge_config(args)
    kwargs = {}
    if args.trace_every is not None:
        kwargs["trace_period"] = args.trace_every
    if args.trainer in ("saros_b", "saros_m"):
        sequences = segment_dataset(dataset)
        if args.thresholds == "auto":
            b, B = estimate_thresholds(sequences)
            cfg.b, cfg.B = b, B
            print(f"thresholds auto: b={b} B={B}")
        kwargs["packed"] = pack_sequences(sequences)
    elif args.thresholds == "auto":
        raise ConfigError(f"--thresholds auto only applies to saros trainers, not {args.trainer}")
    t_start = time.perf_counter()
    params, trace = train(dataset, args.trainer, cfg, **kwargs)
    elapsed = time.perf_counter() - t_start
    meta = {
        "trainer": args.trainer,
        "epoch": cfg.epochs,
        "dataset": str(args.dataset),
        "backend": kernels.BACKEND,
        "user_ids": dataset.user_map.raw_ids,
        "item_ids": dataset.item_map.raw_ids,
    }
    save_checkpoint(params, cfg, meta, args.out)
    trace_path = str(args.out) + ".trace.csv"
    trace.to_csv(trace_path)
    print(f"{args.trainer}: {trace.total_updates} updates in {elapsed:.2f}s "
          f"({kernels.BACKEND} backend), train loss {trace.initial_loss:.6f} -> {trace.final_loss:.6f}")
    print(f"checkpoint -> {args.out}, trace -> {trace_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params, cfg, meta = load_checkpoint(args.checkpoint)
    dataset = Dataset.load(args.dataset)
    report = evaluate(
        params,
        dataset,
        ks=_parse_ks(args.k_at),
        candidate_mode=args.candidate_mode,
        lam=cfg.lam,
        include_reg=not args.loss_no_reg,
        dataset_name=meta.get("dataset", str(args.dataset)),
        trainer=meta.get("trainer", ""),
        config_hash=cfg.hash(),
        seed=cfg.seed,
    )
    report.to_json(str(args.out) + ".json")
    report.to_csv(str(args.out) + ".csv")
    loss_s = f"{report.test_loss:.6f}" if report.test_loss is not None else "n/a"
    print(f"test loss {loss_s} over {report.n_eval_users} users")
    for k in sorted(report.metrics):
        m = report.metrics[k]
        print(f"  MAP@{k} {m['map']:.4f}  NDCG@{k} {m['ndcg']:.4f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    labels = args.labels.split(",") if args.labels else None
    if labels and len(labels) != len(args.traces):
        raise ConfigError(f"--labels needs {len(args.traces)} entries, got {len(labels)}")
    rows = []
    for idx, path in enumerate(args.traces):
        entries = TrainTrace.read_csv(path)
        label = labels[idx] if labels else Path(path).name.removesuffix(".csv").removesuffix(".trace")
        rows += [(label, *entry) for entry in entries]
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trainer", "seconds", "epoch", "updates", "loss"])
        for label, sec, epoch, updates, loss in rows:
            w.writerow([label, f"{sec:.6f}", epoch, updates, repr(loss)])
    print(f"merged {len(args.traces)} traces ({len(rows)} rows) -> {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    """Time the sequential trainers under every available kernel backend."""
    from .synth import planted_dataset

    dataset = planted_dataset(args.users, args.items, args.k, args.per_user, args.seed)
    cfg = TrainConfig(eta=0.05, lam=0.001, k=args.k, epochs=args.epochs, seed=args.seed)
    packed = pack_sequences(segment_dataset(dataset))
    backends = kernels.available_backends()
    timings = {}
    finals = {}
    for name in sorted(backends):
        with kernels.use_backend(name):
            for trainer in ("saros_b", "saros_m", "bpr"):
                kwargs = {"packed": packed} if trainer.startswith("saros") else {}
                t0 = time.perf_counter()
                params, trace = train(dataset, trainer, cfg, **kwargs)
                timings[(trainer, name)] = time.perf_counter() - t0
                finals[(trainer, name)] = params
    print(f"{args.users} users x {args.items} items, k={args.k}, {args.epochs} epochs, "
          f"{packed.n_blocks} blocks/epoch")
    print(f"{'trainer':<10} " + " ".join(f"{name + ' (s)':>12}" for name in sorted(backends))
          + ("   speedup   max|delta|" if len(backends) > 1 else ""))
    for trainer in ("saros_b", "saros_m", "bpr"):
        cells = [f"{timings[(trainer, name)]:>12.3f}" for name in sorted(backends)]
        line = f"{trainer:<10} " + " ".join(cells)
        if len(backends) > 1:
            speedup = timings[(trainer, "python")] / timings[(trainer, "c")]
            pc, cc = finals[(trainer, "python")], finals[(trainer, "c")]
            delta = max(
                float(np.abs(pc.user_embeddings - cc.user_embeddings).max()),
                float(np.abs(pc.item_embeddings - cc.item_embeddings).max()),
            )
            line += f"   {speedup:>6.1f}x   {delta:.3e}"
        print(line)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saros", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse a raw log, binarize and split it")
    p.add_argument("input", help="raw interaction log (user,item,value,timestamp per line)")
    p.add_argument("--schema", default="explicit:4", help="explicit[:THRESHOLD] or binary")
    p.add_argument("--sep", choices=("auto", "tab", "comma"), default="auto")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one model on a prepared dataset")
    p.add_argument("dataset", help="prepared dataset directory")
    p.add_argument("--trainer", required=True, choices=("saros_b", "saros_m", "bpr", "bpr_batch"))
    p.add_argument("--thresholds", choices=("auto",), default=None,
                   help="'auto' sets b/B from the block-count distribution")
    p.add_argument("--trace-every", type=int, default=None, help="loss-trace period in updates")
    p.add_argument("--out", required=True, help="checkpoint output path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compute ranking metrics for a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("dataset", help="prepared dataset directory")
    p.add_argument("--k-at", default="5,10", help="comma list of cutoffs, e.g. 5,10")
    p.add_argument("--candidate-mode", choices=CANDIDATE_MODES, default="test")
    p.add_argument("--loss-no-reg", action="store_true",
                   help="report the test loss without the regularization term")
    p.add_argument("--out", required=True, help="report path prefix (.json/.csv appended)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="merge trace CSVs into one long-format CSV")
    p.add_argument("traces", nargs="+", help="trace CSV files from `saros train`")
    p.add_argument("--labels", default=None, help="comma list overriding the file-stem tags")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="benchmark compiled vs pure-python kernels")
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--items", type=int, default=500)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--per-user", type=int, default=40)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"saros: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"saros: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"saros: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
