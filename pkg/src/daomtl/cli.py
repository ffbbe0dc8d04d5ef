"""Command-line entry point: ``daomtl {train,eval,sweep,gen-data,verify}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import TrainConfig, load_config
from .data import load_corpus, save_corpus, synth_generate
from .errors import ConfigError, FormatError, IngestionError, NumericError
from .trainer import SWEEP_GRID, Trainer, evaluate, run, sweep

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return [float(x) for x in text.replace(" ", ",").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _base_config(args) -> TrainConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else TrainConfig()
    changes = {}
    if getattr(args, "mode", None):
        changes["mode"] = args.mode.replace("-", "_")
    if getattr(args, "wc", None) is not None and not isinstance(args.wc, list):
        changes.update(w_c=args.wc, w_r=1.0 - args.wc)
    if getattr(args, "lora_rank", None) is not None:
        changes["lora_rank"] = args.lora_rank
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    if getattr(args, "data", None):
        changes["data"] = args.data
    if getattr(args, "grad_norm_scope", None):
        changes["grad_norm_scope"] = args.grad_norm_scope
    return cfg.replace(**changes) if changes else cfg


def _print_record(rec: dict):
    for k, v in rec.items():
        print(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")


def cmd_train(args):
    cfg = _base_config(args)
    res = run(cfg, args.out, resume=args.resume)
    _print_record(res.report.as_record())
    print(f"steps_log={res.steps_log}\nepochs_log={res.epochs_log}\ncheckpoint={res.checkpoint}")


def cmd_eval(args):
    trainer = Trainer.load(args.checkpoint)
    _print_record(evaluate(trainer, load_corpus(args.data)).as_record())


def cmd_sweep(args):
    cfg = _base_config(args)
    rows = sweep(cfg, args.out, wc_values=args.wc or SWEEP_GRID)
    print("mode,w_c,mse,acc")
    for r in rows:
        print(f"{r['mode']},{r['w_c']:.2f},{r['mse']:.6f},{r['acc']:.4f}")


def cmd_gen_data(args):
    corpus = synth_generate(args.n, tuple(args.mix), args.noise, args.seed)
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} examples to {args.out}")


def cmd_verify(args):
    from . import verify

    results = verify.run_all()
    if args.desk:
        from .desk import desk_checks

        results += desk_checks(Path(args.out), echo=print)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser():
    p = _Parser(prog="daomtl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--config")
    t.add_argument("--mode", choices=["dao", "constant", "single-task", "single_task"])
    t.add_argument("--wc", type=float, help="classification weight for constant mode (w_r = 1 - wc)")
    t.add_argument("--lora-rank", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--data", help="corpus file (.jsonl or .csv); synthetic data when omitted")
    t.add_argument("--grad-norm-scope", choices=["trunk", "all"])
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out", default="runs/train")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="constant-weight sweep plus one DAO run")
    s.add_argument("--config")
    s.add_argument("--wc", type=_floats)
    s.add_argument("--epochs", type=int)
    s.add_argument("--data")
    s.add_argument("--out", default="runs/sweep")
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gen-data", help="write a synthetic corpus")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--mix", type=float, nargs=5, default=[0.05, 0.15, 0.60, 0.15, 0.05])
    g.add_argument("--noise", type=float, default=0.3)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    v = sub.add_parser("verify", help="run the gradient/invariant oracle suite")
    v.add_argument("--desk", action="store_true", help="also run the desk-scale training checks (minutes)")
    v.add_argument("--out", default="runs/verify")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or EXIT_OK
    except (IngestionError, FileNotFoundError, FormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
