"""``opinionxf`` command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or numeric failure.
"""
import argparse
import sys
from pathlib import Path

from . import pipeline
from .config import VARIANTS, load_run_config
from .dataset import load_records, split
from .errors import ConfigError, OpinionXfError
from .evaluation import baseline_majority, evaluate_predictions
from .training import encode_dataset

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; route that to our usage code instead."""

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=int, help="overrides OPINIONXF_SEED and the config seed")
    p.add_argument("--threads", type=int, default=None, help="data-parallel training threads")


def build_parser():
    parser = _Parser(prog="opinionxf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("datagen", help="write the synthetic corpus, decks and embeddings")
    _common(p)

    p = sub.add_parser("train", help="train one model variant")
    _common(p)
    p.add_argument("--variant", choices=sorted(VARIANTS) + ["majority"],
                   help="model variant (default: flags from the config file)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--dataset", type=Path, help="JSONL records (default: config dataset)")

    p = sub.add_parser("compare", help="train all variants and baselines on one split")
    _common(p)

    p = sub.add_parser("verify", help="run the numerical self-check suite")
    _common(p)
    return parser


def _say(*parts):
    print(*parts, flush=True)


def _run_config(args):
    run = load_run_config(args.config, args.seed, args.out)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        run.training.threads = args.threads
    return run


def cmd_datagen(args):
    run = _run_config(args)
    (dataset, decks, emb), rows = pipeline.generate_files(run, args.out)
    _say(f"wrote {dataset}, {decks}, {emb}")
    _say(f"{'topic':<14} {'q':>2} {'measured':>9} {'expected':>9}")
    for topic, q, measured, expected in rows:
        _say(f"{topic:<14} {q:>2} {measured:9.4f} {expected:9.4f}")
    return EXIT_OK


def cmd_train(args):
    run = _run_config(args)
    corpus = pipeline.load_corpus(run)
    out = run.paths.output_dir
    out.mkdir(parents=True, exist_ok=True)
    run.echo(out)
    sp = split(corpus.records, run.split_ratio, run.seed)
    if args.variant == "majority":
        deck_vectors = corpus.embedder.deck_vectors(corpus.decks)
        train_data = encode_dataset(sp.train, corpus.vocab, corpus.decks, deck_vectors)
        val_data = encode_dataset(sp.validation, corpus.vocab, corpus.decks, deck_vectors)
        report, model = baseline_majority(train_data, val_data, corpus.vocab.sizes)
        pipeline.BaselinePredictor(model, corpus.vocab, corpus.decks, deck_vectors).save(
            out / "checkpoint.npz")
    else:
        ckpt, history = pipeline.train_variant(run, corpus, sp, args.variant, log=_say)
        ckpt.save(out / "checkpoint.npz")
        history.to_csv(out / "history.csv")
        val_data = ckpt.encode(sp.validation)
        report = evaluate_predictions(ckpt.predict_ids(val_data), val_data)
        _say(f"best epoch {ckpt.epoch}: val loss {ckpt.val_loss:.6f}")
    report.to_csv(out / "eval_report.csv")
    report.topics_to_csv(out / "per_topic.csv")
    _say(f"validation macro-F1 {report.macro_f1:.4f}  accuracy {report.micro_accuracy:.4f}")
    _say(f"outputs in {out}")
    return EXIT_OK


def cmd_eval(args):
    run = _run_config(args)
    dataset = args.dataset or run.paths.dataset
    if not Path(dataset).exists():
        raise ConfigError(f"dataset {dataset} not found")
    if not Path(args.checkpoint).exists():
        raise ConfigError(f"checkpoint {args.checkpoint} not found")
    records = load_records(dataset)
    report = pipeline.evaluate_checkpoint(args.checkpoint, records)
    out = run.paths.output_dir
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "eval_report.csv")
    report.topics_to_csv(out / "per_topic.csv")
    _say(f"macro-F1 {report.macro_f1:.4f}  accuracy {report.micro_accuracy:.4f}  n={report.n_eval}")
    for topic, row in sorted(report.per_topic.items()):
        _say(f"  {topic:<14} macro-F1 {row['macro_f1']:.4f}  shift agreement "
             f"{row['shift_agreement']:.4f}  shift rate {row['shift_rate']:.4f}")
    return EXIT_OK


def cmd_compare(args):
    run = _run_config(args)
    corpus = pipeline.load_corpus(run)
    out = run.paths.output_dir
    run.echo(out)
    table, _, oracle = pipeline.run_comparison(run, corpus, out, log=_say)
    _say(table.format())
    if oracle is not None:
        report, expected = oracle
        _say(f"Bayes oracle on the same split: macro-F1 {report.macro_f1:.3f} "
             f"(population {expected:.3f})")
    return EXIT_OK


def cmd_verify(args):
    from .verify import format_table, run_all

    results = run_all()
    _say(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


COMMANDS = {
    "datagen": cmd_datagen,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "verify": cmd_verify,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OpinionXfError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
