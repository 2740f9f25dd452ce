"""Command-line entry point: ``train``, ``eval``, ``score`` and ``gradcheck``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
divergence, 5 gradcheck failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, TextIO

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .data import load_tsv
from .embedding import tokenize
from .errors import AmmsnnError, ConfigError, DataError, GradcheckFailure
from .trainer import EncodedQuestion, encode_dataset, evaluate, rank_question, train

logger = logging.getLogger("ammsnn")

EXIT_OK = 0


def _write_jsonl(fh: TextIO, rec: dict) -> None:
    fh.write(json.dumps(rec, sort_keys=True) + "\n")
    fh.flush()


def cmd_train(args) -> int:
    overrides = {"train.seed": str(args.seed)} if args.seed is not None else None
    cfg = load_config(args.config, overrides)
    train_path = cfg.path("data.train")
    if train_path is None:
        raise ConfigError("missing required config key data.train")
    tc = cfg.train_config()
    train_ds = load_tsv(train_path, "train")
    dev_path = cfg.path("data.dev")
    dev_ds = load_tsv(dev_path, "dev") if dev_path is not None else None

    log_path = cfg.path("output.log")
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w", encoding="utf-8") as fh:
        _write_jsonl(fh, {"event": "config", "config": cfg.resolved(), "seed": tc.seed,
                          "version": __version__})

        def on_epoch(rec):
            _write_jsonl(fh, {"event": "epoch", **rec})
            logger.info("epoch %d loss %.5f", rec["epoch"], rec["loss"])

        model, log = train(train_ds, tc, dev_ds, on_epoch=on_epoch)
        final = {"event": "final", "epochs": len(log)}
        if dev_ds is not None:
            report, _ = evaluate(model, encode_dataset(dev_ds, model.vocab, tc.model.max_len))
            final.update({f"dev_{k}": v for k, v in report.metrics().items()})
            best = [r["epoch"] for r in log if r.get("best")]
            final["best_epoch"] = best[-1] if best else None
        _write_jsonl(fh, final)

    ckpt = cfg.path("output.checkpoint")
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, ckpt)
    if cfg["output.vocab"]:
        model.vocab.save(cfg.path("output.vocab"))
    if cfg["output.figures"] and log:
        from .plotting import plot_training_curve

        plot_training_curve(log, cfg.path("output.figures") / "training_curve.png")
    print(f"wrote {ckpt}")
    return EXIT_OK


def _check_compatible(model, cfg: RunConfig) -> None:
    want = cfg.model_config().to_dict()
    have = model.config.to_dict()
    diff = [k for k in want if want[k] != have[k]]
    if diff:
        raise ConfigError(f"checkpoint does not match config in model fields: {', '.join(sorted(diff))}")


def cmd_eval(args) -> int:
    cfg = load_config(args.config) if args.config else None
    ckpt = args.checkpoint or (cfg and cfg.path("output.checkpoint"))
    if not ckpt:
        raise ConfigError("no checkpoint given (--checkpoint or output.checkpoint)")
    test_path = args.test or (cfg and cfg.path("data.test"))
    if not test_path:
        raise ConfigError("no test split given (--test or data.test)")
    model = load_checkpoint(ckpt)
    if cfg is not None:
        _check_compatible(model, cfg)
    ds = load_tsv(test_path, "test")
    if len(ds) == 0:
        raise DataError(f"{test_path}: no question with a relevant candidate")
    questions = encode_dataset(ds, model.vocab, model.config.max_len)
    report, dumps = evaluate(model, questions, dump_attention=args.dump_attention)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text() + "\n" + report.type_table(), encoding="utf-8")
    (out / "report.kv").write_text(report.to_kv(), encoding="utf-8")
    (out / "per_type.tsv").write_text(report.type_table(), encoding="utf-8")
    if args.dump_attention:
        with open(out / "attention.jsonl", "w", encoding="utf-8") as fh:
            for rec in dumps:
                _write_jsonl(fh, rec)
    if not args.no_figures:
        from .plotting import plot_attention, plot_question_types

        plot_question_types(report, out / "question_types.png")
        if dumps:
            plot_attention(dumps[0], out / "attention_0.png")
    sys.stdout.write(report.to_text())
    return EXIT_OK


def _read_pool(fh: TextIO):
    lines = [ln.strip() for ln in fh.read().splitlines() if ln.strip()]
    if len(lines) < 2:
        raise DataError("score input needs a question line followed by at least one candidate line")
    return lines[0], lines[1:]


def cmd_score(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if args.input and args.input != "-":
        with open(args.input, encoding="utf-8") as fh:
            question, cands = _read_pool(fh)
    else:
        question, cands = _read_pool(sys.stdin)
    qtok = tokenize(question)
    ctoks = [tokenize(c) for c in cands]
    if not qtok or not all(ctoks):
        raise DataError("every line must contain at least one token")
    q = EncodedQuestion("stdin", qtok, model.prepare(qtok), [model.prepare(t) for t in ctoks],
                        ctoks, [0] * len(cands))
    ranking, _ = rank_question(model, q)
    for rank, c in enumerate(ranking, start=1):
        sys.stdout.write(f"{rank}\t{c.candidate_id}\t{c.score:.6f}\t{cands[c.candidate_id]}\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOY_CONFIG, check_model_gradients

    config = load_config(args.config).model_config() if args.config else TOY_CONFIG
    result = check_model_gradients(config, samples=args.samples, tolerance=args.tolerance,
                                   seed=args.seed if args.seed is not None else 0)
    for line in result.lines():
        print(line)
    if not result.passed:
        raise GradcheckFailure(
            f"gradient check failed (tolerance {args.tolerance:g}) for: {', '.join(result.failing)}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ammsnn", description="Multi-size CNN + two-way attention answer selection")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a run configuration")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a test split")
    e.add_argument("--checkpoint")
    e.add_argument("--config")
    e.add_argument("--test")
    e.add_argument("--out", default="eval_out")
    e.add_argument("--dump-attention", type=int, default=0, metavar="N")
    e.add_argument("--no-figures", action="store_true")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("score", help="rank one question's candidates (question line, then one candidate per line)")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", help="file to read instead of stdin")
    s.set_defaults(func=cmd_score)

    g = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    g.add_argument("--config")
    g.add_argument("--samples", type=int, default=3)
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AmmsnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
