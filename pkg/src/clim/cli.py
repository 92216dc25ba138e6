"""``clim`` command line: train, eval, predict, convert, stats.

Exit status is 0 on success, 1 for configuration or usage errors and 2 for
data or runtime failures.  Failures print a single stderr line of the form
``clim-error: <kind>: <message>``.

Every file the tool writes lands under ``$CLIM_OUTPUT_ROOT`` (default
``./clim-runs``).  ``train`` writes ``<root>/<run_name>/`` containing
``config.cfg``, ``seed``, ``checkpoint.ckpt``, ``trace.csv``, ``steps.csv``
and ``summary.json``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from clim import __version__
from clim.config import load_run_config
from clim.data import build_vocabs, convert_conll, dataset_statistics, load_split
from clim.estimator import ClimTagger
from clim.exceptions import ClimError, ConfigError
from clim.metrics import count_repairs, write_prediction_dump

OUTPUT_ROOT_ENV = "CLIM_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

logger = logging.getLogger("clim")


class UsageError(ConfigError):
    kind = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or "clim-runs")


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    for key in ("seed", "epochs", "encoder_variant", "schedule", "run_name"):
        value = getattr(args, key)
        if value is not None:
            out[key] = str(value)
    if args.dpg is not None:
        out["dpg_enabled"] = str(args.dpg)
    return out


def _metrics(m: dict) -> dict:
    return {k: m[k] for k in ("slot_precision", "slot_recall", "slot_f1", "intent_acc", "intent_error_rate")}


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, _overrides(args))
    data = cfg.data_path()
    train = load_split(data, cfg.values["train_split"])
    valid_name, test_name = cfg.split("valid_split"), cfg.split("test_split")
    valid = load_split(data, valid_name) if valid_name else None
    test = load_split(data, test_name) if test_name else None

    run_dir = output_root() / cfg.run_name()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.cfg").write_text(cfg.dumps(), encoding="utf-8")
    (run_dir / "seed").write_text(f"{cfg.values['seed']}\n", encoding="utf-8")

    est = cfg.estimator()
    est.fit_examples(train, valid)
    est.save(run_dir / "checkpoint.ckpt")
    est.trace_.write_csv(run_dir / "trace.csv")
    with open(run_dir / "steps.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,loss\n")
        for i, loss in enumerate(est.trace_.step_losses, 1):
            fh.write(f"{i},{loss:.10f}\n")

    summary = {"run_name": cfg.run_name(), "seed": cfg.values["seed"], "best_epoch": est.best_epoch_,
               "epochs_run": len(est.trace_),
               "valid": _metrics(est.evaluate_examples(valid or train))}
    if test is not None:
        summary["test"] = _metrics(est.evaluate_examples(test))
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    final = summary.get("test", summary["valid"])
    print(f"run_dir={run_dir}")
    print(f"slot_f1={final['slot_f1']:.6f} intent_acc={final['intent_acc']:.6f} "
          f"intent_error_rate={final['intent_error_rate']:.6f}")
    return EXIT_OK


def _load(path) -> ClimTagger:
    if not Path(path).is_file():
        raise ConfigError(f"checkpoint {path} does not exist")
    return ClimTagger.load(path)


def cmd_eval(args) -> int:
    est = _load(args.checkpoint)
    examples = load_split(args.data, args.split)
    m = est.evaluate_examples(examples)
    out = Path(args.out) if args.out else output_root() / Path(args.checkpoint).resolve().parent.name
    if args.out is None:
        out = out / f"predictions.{args.split}.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_prediction_dump(out, [e.tokens for e in examples], [e.slot_labels for e in examples],
                          m["pred_tags"], [e.intent for e in examples], m["pred_intents"])
    print(f"slot_precision={m['slot_precision']:.6f} slot_recall={m['slot_recall']:.6f} "
          f"slot_f1={m['slot_f1']:.6f}")
    print(f"intent_acc={m['intent_acc']:.6f} intent_error_rate={m['intent_error_rate']:.6f}")
    print(f"predictions={out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    tokens = [t for t in args.tokens if t != "--"]
    if not tokens:
        raise UsageError("predict needs at least one token after --")
    est = _load(args.checkpoint)
    [(tags, intent)] = est.predict([tokens])
    for token, tag in zip(tokens, tags):
        print(f"{token}\t{tag}")
    print(f"# intent {intent}")
    repairs = count_repairs(tags)
    if repairs:
        print(f"note: {repairs} inside tag(s) had no matching begin and were read as chunk starts",
              file=sys.stderr)
    return EXIT_OK


def cmd_convert(args) -> int:
    out_root = Path(args.out) if args.out else output_root() / "data"
    path = convert_conll(args.conll, out_root, args.split)
    print(path)
    return EXIT_OK


def cmd_stats(args) -> int:
    splits = [load_split(args.data, s) for s in ("train", "valid", "test")]
    stats = dataset_statistics(*splits, build_vocabs(splits[0]))
    print(json.dumps(stats, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="clim", description="Joint slot filling and intent detection.")
    p.add_argument("--version", action="version", version=f"clim {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("--config", required=True)
    t.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key; repeatable; wins over the file")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--encoder-variant", dest="encoder_variant", choices=["B-B", "B-T", "B-T(V)"])
    t.add_argument("--schedule", choices=["joint", "continual"])
    t.add_argument("--dpg", dest="dpg", action="store_true", default=None)
    t.add_argument("--no-dpg", dest="dpg", action="store_false")
    t.add_argument("--run-name", dest="run_name")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a data split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", required=True)
    e.add_argument("--out", help="prediction dump path (default: under the output root)")
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("predict", help="tag one pre-tokenised utterance")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("tokens", nargs=argparse.REMAINDER)
    r.set_defaults(fn=cmd_predict)

    c = sub.add_parser("convert", help="convert a CoNLL file into the split layout")
    c.add_argument("conll")
    c.add_argument("--split", required=True)
    c.add_argument("--out")
    c.set_defaults(fn=cmd_convert)

    s = sub.add_parser("stats", help="print split sizes and vocabulary counts")
    s.add_argument("--data", required=True)
    s.set_defaults(fn=cmd_stats)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.fn(args)
    except ClimError as exc:
        msg = " ".join(str(exc).split())
        print(f"clim-error: {exc.kind}: {msg}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc, ConfigError) else EXIT_RUNTIME
    except OSError as exc:
        print(f"clim-error: io: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
