"""Command-line entry point: ``mrca <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Option precedence: command-line flag > ``--config`` file > built-in default.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import loss as losses
from .data import (FORMATS, SPLITS, CorpusFormatError, dataset_stats, export_canonical,
                   format_stats, import_files)
from .embedding import (MalformedEmbeddingError, encode_sentence, load_embeddings_file,
                        tokenize)
from .evaluation import evaluate_model
from .gradcheck import run_gradcheck
from .network import MRCAModel
from .train import (NumericalError, TrainConfig, fit, multi_run, read_metrics_log,
                    write_metrics_log)

log = logging.getLogger("mrca")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` text; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _parse_span(text: str) -> tuple[int, int]:
    try:
        a, b = text.split(":")
        s, e = int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"span must look like START:END, got {text!r}")
    if not 0 <= s < e:
        raise argparse.ArgumentTypeError(f"span {text!r} must satisfy 0 <= START < END")
    return s, e


def _positive_float(text: str) -> float:
    v = float(text)
    if v <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--learning-rate", type=float, default=d.learning_rate,
                   help="initial Adam step size")
    p.add_argument("--decay", type=float, default=d.decay,
                   help="inverse-time decay per optimizer step")
    p.add_argument("--batch-size", type=int, default=d.batch_size, help="sentences per step")
    p.add_argument("--max-epochs", type=int, default=d.max_epochs, help="epoch budget")
    p.add_argument("--patience", type=int, default=d.patience,
                   help="epochs without validation F1 gain before stopping")
    p.add_argument("--dropout", type=float, default=d.dropout, help="rate before the dense layer")
    p.add_argument("--seed", type=int, default=d.seed, help="seed of run 0; run k uses seed+k")
    p.add_argument("--loss", choices=losses.LOSSES, default=d.loss, help="training objective")
    p.add_argument("--gamma", type=_positive_float, default=d.gamma, help="Dice smoothing value")
    p.add_argument("--reduction", choices=losses.REDUCTIONS, default=d.reduction,
                   help="how Dice terms combine over a batch")
    p.add_argument("--hidden", type=int, default=d.hidden, help="LSTM units per direction")
    p.add_argument("--seq-len", type=int, default=d.seq_len, help="padded sentence length")
    p.add_argument("--pool", type=int, default=d.pool, help="average-pool window")
    p.add_argument("--stride", type=int, default=d.stride, help="average-pool stride")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="mrca", description=__doc__, formatter_class=fmt)
    parser.add_argument("--config", help="flat key = value file of option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("import", help="convert release files to canonical splits",
                       formatter_class=fmt)
    p.add_argument("--train", required=True)
    p.add_argument("--validation", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--format", choices=FORMATS, default="copyre-json", help="input layout")
    p.add_argument("--name", default="corpus", help="dataset label in reports")
    p.add_argument("--out-dir", help="where to write train/validation/test.jsonl")
    p.add_argument("--json", action="store_true", help="print statistics as JSON")

    p = sub.add_parser("train", help="train (or --runs N times) and save the best model",
                       formatter_class=fmt)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--data-dir", required=True, help="directory with canonical splits")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--runs", type=int, default=1, help="independent seeds to train")
    p.add_argument("--no-timing", action="store_true",
                   help="write null elapsed_ms so logs are byte-reproducible")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="score a checkpoint on a split", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--split", choices=SPLITS, default="test", help="split to score")
    p.add_argument("--threshold", type=float, default=0.5, help="score cutoff")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("predict", help="relations for one sentence", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--sentence", required=True, help="whitespace-tokenized text")
    p.add_argument("--subject", action="append", type=_parse_span, default=[],
                   metavar="START:END")
    p.add_argument("--object", action="append", type=_parse_span, default=[],
                   metavar="START:END")
    p.add_argument("--threshold", type=float, default=0.5, help="score cutoff")

    p = sub.add_parser("losstable", help="Dice vs RC-Dice on the reference (y, p) rows",
                       formatter_class=fmt)
    p.add_argument("--gamma", type=_positive_float, default=losses.DEFAULT_GAMMA)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients",
                       formatter_class=fmt)
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--hidden", type=int, default=3, help="LSTM units")
    p.add_argument("--seq-len", type=int, default=5, help="sentence length")
    p.add_argument("--relations", type=int, default=3, help="output size")
    p.add_argument("--embed-dim", type=int, default=3, help="word vector size")
    p.add_argument("--tolerance", type=float, default=1e-4, help="max relative error")
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("plot", help="validation F1 per epoch from a metrics log",
                       formatter_class=fmt)
    p.add_argument("log")
    p.add_argument("--width", type=int, default=50, help="bar width for F1 = 1")
    p.add_argument("--image", help="also write a PNG (needs matplotlib)")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        cfg = read_config(known.config)
        for action in parser._subparsers._group_actions[0].choices.values():
            dests = {a.dest: a for a in action._actions}
            overrides = {}
            for key, value in cfg.items():
                if key in dests:
                    a = dests[key]
                    overrides[key] = a.type(value) if a.type else value
            action.set_defaults(**overrides)
    return parser.parse_args(argv)


def _train_config(args) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    try:
        return TrainConfig(**{k: v for k, v in vars(args).items() if k in names})
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_dataset(data_dir):
    d = Path(data_dir)
    paths = [d / f"{s}.jsonl" for s in SPLITS]
    for p in paths:
        if not p.exists():
            raise DataError(f"missing split file {p}")
    return import_files(*paths, format="canonical-jsonl", name=d.name)


def _load_checkpoint(path, store):
    ck = ckpt_io.load(path)
    if ck.embedding.get("d") != store.d:
        raise DataError(f"checkpoint expects {ck.embedding.get('d')}-d embeddings, "
                        f"got {store.d}")
    if ck.embedding != store.fingerprint():
        log.warning("embedding fingerprint differs from the one used in training")
    return ck


def cmd_import(args) -> int:
    ds = import_files(args.train, args.validation, args.test, format=args.format,
                      name=args.name)
    stats = dataset_stats(ds)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for s in SPLITS:
            with open(out / f"{s}.jsonl", "w", encoding="utf-8") as fh:
                export_canonical(ds, fh, split=s)
    print(json.dumps(stats, indent=2) if args.json else format_stats(stats))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _train_config(args)
    if args.runs < 1:
        raise UsageError("--runs must be at least 1")
    store = load_embeddings_file(args.embeddings)
    ds = _load_dataset(args.data_dir)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.runs == 1:
        runs = [fit(ds, store, cfg)]
        reports = [evaluate_model(runs[0].model, ds["test"], store)]
        aggregate = None
    else:
        result = multi_run(ds, store, cfg, args.runs)
        runs, reports, aggregate = result.runs, result.reports, result.aggregate

    for k, (res, rep) in enumerate(zip(runs, reports)):
        suffix = "" if args.runs == 1 else f"_run{k}"
        ckpt_io.save(ckpt_io.Checkpoint(res.params, ds.relation_vocab, store.fingerprint(),
                                        {"config": cfg.to_dict() | {"seed": cfg.seed + k},
                                         "best_epoch": res.best_epoch}),
                     out / f"checkpoint{suffix}.mrca")
        with open(out / f"metrics{suffix}.jsonl", "w", encoding="utf-8") as fh:
            write_metrics_log(res.history, fh, include_timing=not args.no_timing)
        print(f"run {k} (seed {cfg.seed + k}): best epoch {res.best_epoch}, "
              f"test P {100 * rep.precision:.2f} R {100 * rep.recall:.2f} "
              f"F1 {100 * rep.f1:.2f}")

    report = {"config": cfg.to_dict(), "runs": [r.to_record() for r in reports]}
    if aggregate is not None:
        report["aggregate"] = aggregate.to_record()
        for m in ("precision", "recall", "f1"):
            print(f"{m:<10} {aggregate.formatted(m)}")
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_eval(args) -> int:
    store = load_embeddings_file(args.embeddings)
    ck = _load_checkpoint(args.checkpoint, store)
    ds = _load_dataset(args.data_dir)
    if tuple(ds.relation_vocab) != tuple(ck.relation_vocab):
        raise DataError("relation vocabulary of the corpus does not match the checkpoint "
                        f"({ds.n_relations} vs {len(ck.relation_vocab)} relations)")
    rep = evaluate_model(MRCAModel(ck.params), ds[args.split], store, args.threshold)
    print(json.dumps(rep.to_record(), indent=2) if args.json else rep.to_table())
    return EXIT_OK


def cmd_predict(args) -> int:
    store = load_embeddings_file(args.embeddings)
    ck = _load_checkpoint(args.checkpoint, store)
    tokens = tokenize(args.sentence)
    if not tokens:
        raise UsageError("empty sentence")
    for s, e in args.subject + args.object:
        if e > len(tokens):
            raise UsageError(f"span {s}:{e} exceeds sentence length {len(tokens)}")
    model = MRCAModel(ck.params)
    enc = encode_sentence(tokens, args.subject, args.object, store, model.shape.seq_len)
    scores = model.scores(enc)[0]
    labels = model.predict(enc, args.threshold)[0]
    hits = sorted(((float(scores[i]), ck.relation_vocab[i]) for i in np.flatnonzero(labels)),
                  reverse=True)
    if not hits:
        print("(no relation)")
    for score, name in hits:
        print(f"{name}\t{score:.4f}")
    return EXIT_OK


def cmd_losstable(args) -> int:
    print(f"gamma = {args.gamma:g}")
    print(f"{'y':>2} {'p':>5} {'Dice':>14} {'RC_Dice':>14}")
    for row in losses.loss_table(args.gamma):
        active = row["y"] == 0 and row["p"] < losses.NEGATIVE_BOUNDARY
        flag = "  suppressed" if active else ""
        print(f"{row['y']:>2} {row['p']:>5.1f} {row['dice']:>14.6g} {row['rc_dice']:>14.6g}{flag}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    result = run_gradcheck(seed=args.seed, hidden=args.hidden, seq_len=args.seq_len,
                           n_relations=args.relations, embed_dim=args.embed_dim,
                           corrupt=args.corrupt)
    for name, err in sorted(result.items()):
        print(f"{name:<12} {err:.3e}")
    worst = max(result.values())
    ok = worst < args.tolerance
    print(f"worst relative error {worst:.3e} ({'PASS' if ok else 'FAIL'}, "
          f"tolerance {args.tolerance:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


def text_chart(values: list[float], width: int = 50) -> str:
    lines = []
    for epoch, v in enumerate(values, start=1):
        bar = "#" * int(round(max(0.0, min(1.0, v)) * width))
        lines.append(f"{epoch:>4} {v:6.4f} |{bar}")
    return "\n".join(lines)


def cmd_plot(args) -> int:
    with open(args.log, encoding="utf-8") as fh:
        try:
            rows = read_metrics_log(fh)
        except ValueError as exc:
            raise DataError(f"{args.log}: {exc}") from None
    if not rows:
        raise UsageError(f"{args.log}: empty metrics log")
    values = [float(r["val_f1"]) for r in rows]
    print("validation F1 per epoch")
    print(text_chart(values, args.width))
    if args.image:
        try:
            import matplotlib
        except ImportError:
            raise UsageError("--image needs matplotlib installed") from None
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(range(1, len(values) + 1), values)
        ax.set_xlabel("epoch")
        ax.set_ylabel("validation F1")
        fig.tight_layout()
        fig.savefig(args.image)
    return EXIT_OK


COMMANDS = {"import": cmd_import, "train": cmd_train, "eval": cmd_eval,
            "predict": cmd_predict, "losstable": cmd_losstable,
            "gradcheck": cmd_gradcheck, "plot": cmd_plot}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"mrca: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"mrca: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mrca: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"mrca: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CorpusFormatError, MalformedEmbeddingError, ckpt_io.CheckpointError,
            OSError, ValueError) as exc:
        print(f"mrca: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
