"""Train-and-score runs on the synthetic tasks."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import List, Optional

from .data import ParallelCorpus, SyntheticSpec, Vocab, build_vocab, encode_corpus, generate_synthetic
from .evaluation import bleu, exact_match
from .inference import decode, unk_replace
from .model import ModelConfig, Seq2Seq
from .training import TrainConfig, TrainReport, train


@dataclass
class RunResult:
    bleu: float
    exact: float
    exact_unk: Optional[float]
    report: TrainReport
    seconds: float
    model: Seq2Seq
    hypotheses: List[List[str]]


def make_split(task: str, n_train: int, n_test: int, seed: int, **spec_kwargs) -> tuple:
    """Train/test corpora that share the task rule but not sampling seeds."""
    train_spec = SyntheticSpec(task, n_train, seed=2 * seed + 1, **spec_kwargs)
    test_spec = replace(train_spec, n_pairs=n_test, seed=2 * seed + 2)
    return generate_synthetic(train_spec), generate_synthetic(test_spec)


def translate_corpus(model: Seq2Seq, corpus: ParallelCorpus, src_vocab: Vocab, tgt_vocab: Vocab,
                     beam: int = 1, replace_unk: bool = False) -> List[List[str]]:
    out = []
    for src in corpus.sources:
        result = decode(model, src_vocab.encode(src), beam_width=beam)
        if replace_unk:
            out.append(unk_replace(result.trace, src, tgt_vocab))
        else:
            out.append(tgt_vocab.decode(result.ids))
    return out


def run_synthetic(
    train_corpus: ParallelCorpus,
    test_corpus: ParallelCorpus,
    cfg: TrainConfig,
    vocab_cap: int = 1000,
    beam: int = 1,
    with_unk: bool = False,
) -> RunResult:
    """Train one model variant from scratch and score it on the test set.

    Source and target share one vocabulary, built from the training corpus.
    """
    started = time.perf_counter()
    vocab = build_vocab(train_corpus.sources + train_corpus.targets, vocab_cap)
    model = Seq2Seq.initialize(
        ModelConfig(len(vocab), len(vocab), emb=cfg.emb, hidden=cfg.hidden, mem=cfg.mem,
                    k=cfg.k, use_dyn=cfg.use_dyn),
        seed=cfg.seed,
    )
    model, report = train(encode_corpus(train_corpus, vocab, vocab), cfg, model)
    hyps = translate_corpus(model, test_corpus, vocab, vocab, beam=beam)
    refs = test_corpus.targets
    exact_unk = None
    if with_unk:
        exact_unk = exact_match(translate_corpus(model, test_corpus, vocab, vocab, beam, replace_unk=True), refs)
    return RunResult(
        bleu=bleu(hyps, refs).bleu,
        exact=exact_match(hyps, refs),
        exact_unk=exact_unk,
        report=report,
        seconds=time.perf_counter() - started,
        model=model,
        hypotheses=hyps,
    )
