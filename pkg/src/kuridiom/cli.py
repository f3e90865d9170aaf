"""Command-line entry point: ``kuridiom <command> ...``.

Exit codes: 0 success, 1 usage or input validation error, 2 runtime failure.
Logs go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

log = logging.getLogger("kuridiom")

KIND_CHOICES = ("transformer", "rcnn", "bilstm-attn")


class UsageError(Exception):
    """Bad flags or bad input files; exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


class _Help(argparse.HelpFormatter):
    """Appends the default to every optional flag that has one."""

    def _get_help_string(self, action):
        text = action.help or ""
        default = action.default
        if default is not None and default is not False and default != argparse.SUPPRESS and action.option_strings:
            text += " (default: %(default)s)"
        return text


def _fmt(prog):
    return _Help(prog, max_help_position=32)


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such file: {p}")
    return p


def _read_lines(path: Path):
    return path.read_text(encoding="utf-8").splitlines()


def _write_text(path: str, text: str):
    p = Path(path)
    if p.parent and not p.parent.exists():
        raise UsageError(f"output directory does not exist: {p.parent}")
    p.write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_normalize(args):
    from .textnorm import load_table, normalize

    table = load_table(str(_existing(args.table))) if args.table else load_table()
    lines = _read_lines(_existing(args.input))
    _write_text(args.out, "".join(normalize(line, table=table) + "\n" for line in lines))


def cmd_vocab_train(args):
    from .textnorm import normalize
    from .tokenizer import train_vocab

    lines = [normalize(line) for line in _read_lines(_existing(args.corpus))]
    vocab = train_vocab(lines, args.size, args.min_freq)
    vocab.save(args.out)
    log.info("wrote %d tokens to %s", len(vocab), args.out)


def cmd_encode(args):
    from .textnorm import normalize
    from .tokenizer import Vocab, encode

    vocab = Vocab.load(_existing(args.vocab))
    out = []
    for line in _read_lines(_existing(args.input)):
        enc = encode(normalize(line), vocab, args.max_len)
        out.append(" ".join(map(str, enc.ids.tolist())) + "\t" + " ".join(map(str, enc.mask.tolist())) + "\n")
    _write_text(args.out, "".join(out))


def cmd_gen_data(args):
    from .dataset import SyntheticSpec, generate_synthetic, save_dataset

    spec = SyntheticSpec(num_idioms=args.idioms, contexts_per_idiom=args.contexts,
                         variants_per_context=args.variants, non_idiom_count=args.non_idiom,
                         seed=args.seed)
    ds = generate_synthetic(spec)
    save_dataset(ds, args.out)
    log.info("wrote %d examples in %d classes to %s", len(ds), ds.num_classes, args.out)


def cmd_validate(args):
    from .dataset import load_dataset, validate

    report = validate(load_dataset(_existing(args.data)), min_count=args.min_count)
    text = json.dumps(report.to_dict(), indent=1, ensure_ascii=False) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    for e in report.errors:
        log.error("%s", e)
    if not report.ok:
        raise UsageError(f"{len(report.errors)} validation error(s) in {args.data}")


def cmd_split(args):
    from .dataset import DatasetError, load_dataset, stratified_nested_folds

    ds = load_dataset(_existing(args.data))
    try:
        plan = stratified_nested_folds(ds, args.k, args.seed)
    except DatasetError as exc:
        if "fewer than k" in str(exc):
            raise UsageError(f"class with fewer than k examples: {exc}") from exc
        raise
    plan.save(args.out)


def _train_config(args, kind):
    from .training import TrainConfig

    return TrainConfig(kind=kind, preset=args.preset, epochs=args.epochs, batch_size=args.batch_size,
                       base_lr=args.lr, eval_every=args.eval_every, seed=args.seed,
                       weight_decay=args.weight_decay, max_len=args.max_len, vocab_size=args.vocab_size)


def cmd_train(args):
    from .dataset import FoldPlan, load_dataset
    from .training import train_fold

    ds = load_dataset(_existing(args.data))
    plan = FoldPlan.load(_existing(args.plan))
    cfg = _train_config(args, args.model)
    record = train_fold(ds, plan, args.fold, cfg, out_dir=args.out)
    log.info("fold %d test accuracy %.2f f1 %.2f", args.fold, record.test["accuracy"], record.test["f1"])


def cmd_cv(args):
    from .dataset import load_dataset
    from .evaluation import render_report
    from .training import run_cross_validation

    ds = load_dataset(_existing(args.data))
    cfg = _train_config(args, args.model)
    out = Path(args.out)
    records, avg = run_cross_validation(ds, args.k, args.seed, cfg, out_dir=out, parallel=args.parallel)
    render_report({cfg.kind: [r.to_dict() for r in records]}, out / "report")
    log.info("mean test accuracy %.2f f1 %.2f", avg.accuracy, avg.f1)


def _load_run(checkpoint, config_path=None, vocab_path=None):
    from .models import ModelConfig, load_params
    from .tokenizer import Vocab

    ckpt = _existing(checkpoint)
    config_path = _existing(config_path) if config_path else _existing(ckpt.parent / "config.json")
    vocab_path = _existing(vocab_path) if vocab_path else _existing(ckpt.parent / "vocab.txt")
    meta = json.loads(config_path.read_text(encoding="utf-8"))
    mcfg = ModelConfig.from_dict(meta["model"])
    return load_params(ckpt, mcfg), Vocab.load(vocab_path), meta


def cmd_eval(args):
    from .dataset import FoldPlan, load_dataset
    from .evaluation import evaluate
    from .models import logits, predict
    from .training import encode_texts

    params, vocab, meta = _load_run(args.checkpoint, args.config, args.vocab)
    ds = load_dataset(_existing(args.data))
    plan = FoldPlan.load(_existing(args.plan))
    plan.check_covers(ds)
    idx = plan.indices(args.fold, args.role)
    ids, mask = encode_texts([ds.texts[i] for i in idx], vocab, params.config.max_len)
    row = evaluate(predict(logits(params, ids, mask)), ds.labels[idx], params.config.num_classes,
                   average=args.average)
    text = json.dumps({"fold": args.fold, "role": args.role, "count": int(len(idx)), **row.to_dict()},
                      indent=1) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_classify(args):
    from .models import logits, predict, probabilities
    from .training import encode_texts

    params, vocab, meta = _load_run(args.checkpoint, args.config, args.vocab)
    ids, mask = encode_texts([args.text], vocab, params.config.max_len)
    scores = logits(params, ids, mask)
    probs = probabilities(scores)[0]
    label = int(predict(scores)[0])
    classes = meta.get("classes", {})
    result = {
        "class": label,
        "idiom": classes.get(str(label), ""),
        "probabilities": {str(c): float(p) for c, p in enumerate(probs)},
    }
    sys.stdout.write(json.dumps(result, indent=1, ensure_ascii=False) + "\n")


def cmd_report(args):
    from .evaluation import render_report

    root = _existing(args.runs)
    runs = {}
    for path in sorted(root.rglob("record.json")):
        rec = json.loads(path.read_text(encoding="utf-8"))
        runs.setdefault(rec["kind"], []).append(rec)
    if not runs:
        raise UsageError(f"no record.json files under {root}")
    for paths in render_report(runs, args.out):
        log.debug("wrote %s", paths)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_training_flags(p):
    p.add_argument("--preset", choices=("paper", "desk"), default="paper",
                   help="model dimensions: paper (12 layers, 768 hidden, ...) or desk (small, CPU-scale)")
    p.add_argument("--epochs", type=int, default=None,
                   help="training epochs; default per model: transformer 15, rcnn 50, bilstm-attn 50")
    p.add_argument("--batch-size", type=int, default=16, help="mini-batch size")
    p.add_argument("--lr", type=float, default=None,
                   help="base learning rate; default 2e-5 for the paper preset, "
                        "1e-3 (transformer, bilstm-attn) or 3e-3 (rcnn) for desk")
    p.add_argument("--eval-every", type=int, default=5, help="validate every N epochs and at the last epoch")
    p.add_argument("--weight-decay", type=float, default=0.01, help="decoupled AdamW weight decay")
    p.add_argument("--max-len", type=int, default=128, help="token sequence length incl. [CLS]/[SEP]")
    p.add_argument("--vocab-size", type=int, default=4000, help="target size of the per-fold vocabulary")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kuridiom", description="Sorani Kurdish idiom classification toolkit.",
                     formatter_class=_fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("normalize", help="normalize text lines", formatter_class=_fmt)
    p.add_argument("--in", dest="input", required=True, help="input text file, one sentence per line")
    p.add_argument("--out", required=True, help="output file")
    p.add_argument("--table", default=None, help="character unification table (default: bundled)")
    p.set_defaults(func=cmd_normalize)

    vocab = sub.add_parser("vocab", help="vocabulary commands", formatter_class=_fmt)
    vsub = vocab.add_subparsers(dest="vocab_command", required=True, parser_class=_Parser)
    p = vsub.add_parser("train", help="learn a subword vocabulary", formatter_class=_fmt)
    p.add_argument("--corpus", required=True, help="text file, one sentence per line")
    p.add_argument("--size", type=int, required=True, help="target vocabulary size")
    p.add_argument("--min-freq", type=int, default=1, help="minimum count for characters and merges")
    p.add_argument("--out", required=True, help="vocabulary file to write")
    p.set_defaults(func=cmd_vocab_train)

    p = sub.add_parser("encode", help="encode text lines to ids and masks", formatter_class=_fmt)
    p.add_argument("--vocab", required=True, help="vocabulary file")
    p.add_argument("--max-len", type=int, default=128, help="sequence length incl. [CLS]/[SEP]")
    p.add_argument("--in", dest="input", required=True, help="input text file")
    p.add_argument("--out", required=True, help="output: 'ids<TAB>mask' per line, space-separated")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("gen-data", help="write a synthetic idiom dataset", formatter_class=_fmt)
    p.add_argument("--idioms", type=int, default=101, help="number of idiom classes")
    p.add_argument("--contexts", type=int, default=35, help="contexts per idiom")
    p.add_argument("--variants", type=int, default=3, help="sentence variants per context")
    p.add_argument("--non-idiom", type=int, default=0, help="sentences in the non-idiom class")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", required=True, help="dataset TSV to write")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("validate", help="check a dataset TSV", formatter_class=_fmt)
    p.add_argument("--data", required=True, help="dataset TSV (y, x, idiom_y)")
    p.add_argument("--min-count", type=int, default=1, help="classes with fewer examples are errors")
    p.add_argument("--out", default=None, help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("split", help="make a nested stratified fold plan", formatter_class=_fmt)
    p.add_argument("--data", required=True, help="dataset TSV")
    p.add_argument("--k", type=int, default=5, help="number of outer folds")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", required=True, help="fold plan JSON to write")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one fold", formatter_class=_fmt)
    p.add_argument("--model", choices=KIND_CHOICES, required=True, help="architecture")
    p.add_argument("--data", required=True, help="dataset TSV")
    p.add_argument("--plan", required=True, help="fold plan JSON")
    p.add_argument("--fold", type=int, required=True, help="outer fold to hold out")
    p.add_argument("--seed", type=int, default=0, help="initialisation and shuffling seed")
    p.add_argument("--out", required=True, help="run directory")
    _add_training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="train and test every fold", formatter_class=_fmt)
    p.add_argument("--model", choices=KIND_CHOICES, required=True, help="architecture")
    p.add_argument("--data", required=True, help="dataset TSV")
    p.add_argument("--k", type=int, default=5, help="number of outer folds")
    p.add_argument("--seed", type=int, default=0, help="seed for the fold plan and the models")
    p.add_argument("--parallel", type=int, default=1, help="folds to run concurrently")
    p.add_argument("--out", required=True, help="output directory")
    _add_training_flags(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one fold split", formatter_class=_fmt)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset TSV")
    p.add_argument("--plan", required=True, help="fold plan JSON")
    p.add_argument("--fold", type=int, required=True, help="fold id")
    p.add_argument("--role", choices=("test", "validation", "train"), default="test", help="split to score")
    p.add_argument("--average", choices=("weighted", "macro"), default="weighted", help="metric averaging")
    p.add_argument("--config", default=None, help="run config.json (default: next to the checkpoint)")
    p.add_argument("--vocab", default=None, help="vocabulary (default: vocab.txt next to the checkpoint)")
    p.add_argument("--out", default=None, help="write metrics JSON here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("classify", help="classify one sentence", formatter_class=_fmt)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--vocab", required=True, help="vocabulary file")
    p.add_argument("--text", required=True, help="sentence to classify")
    p.add_argument("--config", default=None, help="run config.json (default: next to the checkpoint)")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("report", help="tables and curve data from run records", formatter_class=_fmt)
    p.add_argument("--runs", required=True, help="directory searched for record.json files")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    from .dataset import DatasetError
    from .models import CheckpointError
    from .training import TrainingError

    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return 1
    except (DatasetError, CheckpointError) as exc:
        log.error("%s", exc)
        return 1
    except (TrainingError, OSError, MemoryError) as exc:
        log.error("runtime failure: %s", exc)
        return 2
    except ValueError as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
