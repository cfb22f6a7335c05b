"""Command-line entry point: ``raseq <subcommand> ...``.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from . import checkpoint
from .data import SyntheticSpec, TASKS, build_vocab, encode_corpus, generate_synthetic, load_corpus, read_lines
from .errors import RaseqError
from .evaluation import bleu
from .inference import DEFAULT_BEAM, decode, dump_attention, output_labels, unk_replace
from .model import ModelConfig, Seq2Seq
from .training import TrainConfig, train

log = logging.getLogger("raseq")


def env_seed() -> Optional[int]:
    value = os.environ.get("RASEQ_SEED")
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError:
        raise RaseqError(f"RASEQ_SEED must be an integer, got {value!r}") from None


def cmd_train(args) -> int:
    overrides = {
        "k": args.window,
        "use_dyn": False if args.no_dynamic else None,
        "total_epochs": args.epochs,
        "batch_size": args.batch_size,
        "lr_initial": args.lr,
        "seed": args.seed,
        "emb": args.emb,
        "hidden": args.hidden,
        "mem": args.mem,
        "src_vocab_size": args.src_vocab_size,
        "tgt_vocab_size": args.tgt_vocab_size,
        "max_len": args.max_len,
    }
    if args.seed is None and env_seed() is not None:
        # the environment only fills in a seed the config file leaves unset
        file_has_seed = args.config and any(
            ln.split("#", 1)[0].split("=", 1)[0].strip() == "seed"
            for ln in Path(args.config).read_text(encoding="utf-8").splitlines()
        )
        if not file_has_seed:
            overrides["seed"] = env_seed()
    cfg = TrainConfig.from_file(args.config, **overrides) if args.config else TrainConfig(
        **{k: v for k, v in overrides.items() if v is not None}
    )

    corpus = load_corpus(args.src, args.tgt).filter_length(cfg.max_len)
    src_vocab = build_vocab(corpus.sources, cfg.src_vocab_size)
    tgt_vocab = build_vocab(corpus.targets, cfg.tgt_vocab_size)
    valid = None
    if args.valid_src or args.valid_tgt:
        if not (args.valid_src and args.valid_tgt):
            raise RaseqError("--valid-src and --valid-tgt must be given together")
        valid = encode_corpus(load_corpus(args.valid_src, args.valid_tgt), src_vocab, tgt_vocab)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    src_vocab.save(out / "src.vocab")
    tgt_vocab.save(out / "tgt.vocab")
    (out / "train.cfg").write_text(cfg.to_text(), encoding="utf-8")

    model = Seq2Seq.initialize(
        ModelConfig(len(src_vocab), len(tgt_vocab), emb=cfg.emb, hidden=cfg.hidden, mem=cfg.mem,
                    k=cfg.k, use_dyn=cfg.use_dyn),
        seed=cfg.seed,
    )
    try:
        train(encode_corpus(corpus, src_vocab, tgt_vocab), cfg, model, valid=valid, out_dir=out,
              vocabs=(src_vocab, tgt_vocab),
              on_epoch=lambda r: log.info("epoch %d  lr %.5g  nll %.4f  ppl %.3f", r.epoch, r.lr,
                                          r.train_nll, r.valid_ppl))
    finally:
        for tmp in out.glob("*.tmp"):
            tmp.unlink()
    if not (out / "model.ckpt").exists():
        checkpoint.save(out / "model.ckpt", model, src_vocab, tgt_vocab, extra={"epoch": 0})
    return 0


def _load_model(path):
    model, src_vocab, tgt_vocab, _ = checkpoint.load(path)
    if src_vocab is None or tgt_vocab is None:
        raise RaseqError(f"checkpoint {path} carries no vocabularies")
    return model, src_vocab, tgt_vocab


def cmd_translate(args) -> int:
    model, src_vocab, tgt_vocab = _load_model(args.model)
    lines = []
    for raw in read_lines(args.input):
        tokens = raw.split()
        if not tokens:
            lines.append("")
            continue
        result = decode(model, src_vocab.encode(tokens), beam_width=args.beam)
        if args.unk_replace:
            words = unk_replace(result.trace, tokens, tgt_vocab)
        else:
            words = tgt_vocab.decode(result.ids)
        lines.append(" ".join(words))
    Path(args.output).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")
    return 0


def cmd_evaluate(args) -> int:
    report = bleu(read_lines(args.hyp), read_lines(args.ref))
    print(report.format())
    return 0


def cmd_dump_attention(args) -> int:
    model, src_vocab, tgt_vocab = _load_model(args.model)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for n, raw in enumerate(read_lines(args.input), 1):
        tokens = raw.split()
        if not tokens:
            continue
        result = decode(model, src_vocab.encode(tokens), beam_width=args.beam)
        dump_attention(result.trace, out / f"sent{n:05d}", tokens, output_labels(result.trace, tgt_vocab))
    return 0


def cmd_make_synthetic(args) -> int:
    seed = args.seed if args.seed is not None else (env_seed() or 0)
    spec = SyntheticSpec(args.task, args.n, seed=seed, vocab_size=args.vocab_size, min_len=args.min_len,
                         max_len=args.max_len, rule_seed=args.rule_seed)
    generate_synthetic(spec).write(f"{args.out_prefix}.src", f"{args.out_prefix}.tgt")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raseq", description="Seq2seq with recurrent attention memory.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--valid-src")
    p.add_argument("--valid-tgt")
    p.add_argument("--config", help="key=value training config; flags override it")
    p.add_argument("--out", required=True, help="output directory for checkpoints and report.tsv")
    p.add_argument("--window", type=int, help="window radius k (window length 2k+1)")
    p.add_argument("--no-dynamic", action="store_true", help="train the plain attention baseline")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--emb", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--mem", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--src-vocab-size", type=int)
    p.add_argument("--tgt-vocab-size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="decode a file, one sentence per line")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam", type=int, default=DEFAULT_BEAM)
    p.add_argument("--unk-replace", action="store_true", help="copy the most-attended source word for UNK")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="corpus BLEU in multi-bleu layout")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("dump-attention", help="write attention matrices as .attn.tsv and .pgm")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--beam", type=int, default=DEFAULT_BEAM)
    p.set_defaults(func=cmd_dump_attention)

    p = sub.add_parser("make-synthetic", help="generate a synthetic parallel corpus")
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--vocab-size", type=int, default=20)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--rule-seed", type=int, default=0, help="fixes the fertility map")
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (RaseqError, OSError, ValueError) as exc:
        print(f"raseq {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
