"""Vocabularies, parallel corpora and synthetic seq2seq tasks."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, FormatError

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN = "<pad>", "<s>", "</s>", "<unk>"
RESERVED = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)

Pair = Tuple[List[str], List[str]]


class Vocab:
    """Bidirectional token/id map with PAD=0, BOS=1, EOS=2, UNK=3."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            tokens = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        if len(set(tokens)) != len(tokens):
            raise ContractError("vocabulary contains duplicate tokens")
        self.tokens: List[str] = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, tokens: Iterable[str]) -> List[int]:
        return [self.index.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> List[str]:
        """Map ids back to tokens, dropping BOS/EOS/PAD unless ``strip`` is off."""
        out = []
        for i in ids:
            i = int(i)
            if strip and i in (PAD, BOS, EOS):
                continue
            out.append(self.tokens[i])
        return out

    def save(self, path) -> None:
        lines = ["# raseq vocab: id = line index + 4 (counting data lines from 0); "
                 "ids 0-3 are reserved <pad> <s> </s> <unk>"]
        lines.extend(self.tokens[4:])
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("#"):
            raise FormatError(f"{path}: missing vocab header line")
        return cls(list(RESERVED) + [ln for ln in lines[1:] if ln])


def build_vocab(sentences: Iterable[Sequence[str]], cap: int) -> Vocab:
    """Keep the ``cap - 4`` most frequent tokens; ties break lexicographically."""
    if cap < 5:
        raise ContractError(f"vocabulary cap must be at least 5, got {cap}")
    counts = Counter()
    n = 0
    for sent in sentences:
        counts.update(t for t in sent if t not in RESERVED)
        n += 1
    if n == 0:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab(list(RESERVED) + [t for t, _ in ranked[: cap - 4]])


@dataclass
class ParallelCorpus:
    pairs: List[Pair] = field(default_factory=list)

    def __post_init__(self):
        for src, tgt in self.pairs:
            if not src or not tgt:
                raise ContractError("parallel corpus pairs must have non-empty sides")

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def sources(self) -> List[List[str]]:
        return [s for s, _ in self.pairs]

    @property
    def targets(self) -> List[List[str]]:
        return [t for _, t in self.pairs]

    def filter_length(self, max_len: int) -> "ParallelCorpus":
        """Drop pairs where either side exceeds ``max_len`` tokens."""
        kept = [(s, t) for s, t in self.pairs if len(s) <= max_len and len(t) <= max_len]
        if len(kept) < len(self.pairs):
            logger.info("dropped %d pairs longer than %d tokens", len(self.pairs) - len(kept), max_len)
        return ParallelCorpus(kept)

    def write(self, src_path, tgt_path) -> None:
        Path(src_path).write_text("".join(" ".join(s) + "\n" for s in self.sources), encoding="utf-8")
        Path(tgt_path).write_text("".join(" ".join(t) + "\n" for t in self.targets), encoding="utf-8")


def read_lines(path) -> List[str]:
    with open(path, encoding="utf-8") as fh:
        return [ln.rstrip("\n") for ln in fh]


def load_corpus(src_path, tgt_path) -> ParallelCorpus:
    src_lines, tgt_lines = read_lines(src_path), read_lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise FormatError(
            f"line count mismatch: {src_path} has {len(src_lines)} lines, "
            f"{tgt_path} has {len(tgt_lines)}"
        )
    pairs, dropped = [], 0
    for s, t in zip(src_lines, tgt_lines):
        s_tok, t_tok = s.split(), t.split()
        if not s_tok or not t_tok:
            dropped += 1
            continue
        pairs.append((s_tok, t_tok))
    if dropped:
        logger.warning("dropped %d pairs with an empty side", dropped)
    return ParallelCorpus(pairs)


# ----------------------------------------------------------------- synthetic
TASKS = ("copy", "fertility", "reorder", "rare-word")


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic corpus.

    ``seed`` drives sentence sampling. ``rule_seed`` fixes the task rule
    itself (the fertility map), so train and test sets drawn with different
    seeds share one rule.
    """

    task: str
    n_pairs: int
    seed: int = 0
    vocab_size: int = 20
    min_len: int = 3
    max_len: int = 10
    rule_seed: int = 0
    rare_rate: float = 0.2
    tail_size: int = 1000

    def __post_init__(self):
        if self.task not in TASKS:
            raise ContractError(f"unknown synthetic task {self.task!r}; choose from {TASKS}")
        if not 1 <= self.min_len <= self.max_len:
            raise ContractError(f"bad length range [{self.min_len}, {self.max_len}]")
        if self.vocab_size < 1 or self.n_pairs < 0:
            raise ContractError("vocab_size must be positive and n_pairs non-negative")


def core_tokens(vocab_size: int) -> List[str]:
    width = len(str(vocab_size - 1))
    return [f"w{i:0{width}d}" for i in range(vocab_size)]


def fertility_map(spec: SyntheticSpec) -> dict:
    """Per-token repetition counts in {1, 2, 3}, fixed by ``rule_seed``."""
    rng = np.random.default_rng([spec.rule_seed, 0xFE27])
    reps = rng.integers(1, 4, size=spec.vocab_size)
    return dict(zip(core_tokens(spec.vocab_size), (int(r) for r in reps)))


def apply_fertility(source: Sequence[str], reps: dict) -> List[str]:
    return [t for t in source for _ in range(reps[t])]


def swap_adjacent(source: Sequence[str]) -> List[str]:
    out = list(source)
    for i in range(0, len(out) - 1, 2):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


def generate_synthetic(spec: SyntheticSpec) -> ParallelCorpus:
    rng = np.random.default_rng(spec.seed)
    vocab = core_tokens(spec.vocab_size)
    tail = [f"r{i:04d}" for i in range(spec.tail_size)]
    reps = fertility_map(spec) if spec.task == "fertility" else None
    pairs = []
    for _ in range(spec.n_pairs):
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        src = [vocab[j] for j in rng.integers(0, spec.vocab_size, size=length)]
        if spec.task == "rare-word":
            rare = rng.random(length) < spec.rare_rate
            picks = rng.integers(0, spec.tail_size, size=length)
            src = [tail[p] if r else t for t, r, p in zip(src, rare, picks)]
        if spec.task == "fertility":
            tgt = apply_fertility(src, reps)
        elif spec.task == "reorder":
            tgt = swap_adjacent(src)
        else:
            tgt = list(src)
        pairs.append((src, tgt))
    return ParallelCorpus(pairs)


def encode_corpus(
    corpus: ParallelCorpus, src_vocab: Vocab, tgt_vocab: Vocab
) -> List[Tuple[List[int], List[int]]]:
    return [(src_vocab.encode(s), tgt_vocab.encode(t)) for s, t in corpus]


def batch_padding(pairs: Sequence[Tuple[Sequence[int], Sequence[int]]]) -> dict:
    """Pad a batch of id pairs.

    Targets are wrapped as decoder inputs ``BOS y_1..y_T`` and outputs
    ``y_1..y_T EOS``. Returns id matrices and float masks (1 = real token).
    """
    if not pairs:
        raise ContractError("cannot pad an empty batch")
    B = len(pairs)
    S = max(len(s) for s, _ in pairs)
    T = max(len(t) for _, t in pairs) + 1
    src = np.full((B, S), PAD, dtype=np.int64)
    src_mask = np.zeros((B, S), dtype=np.float32)
    tgt_in = np.full((B, T), PAD, dtype=np.int64)
    tgt_out = np.full((B, T), PAD, dtype=np.int64)
    tgt_mask = np.zeros((B, T), dtype=np.float32)
    for b, (s, t) in enumerate(pairs):
        if not s or not t:
            raise ContractError(f"batch item {b} has an empty side")
        src[b, : len(s)] = s
        src_mask[b, : len(s)] = 1
        tgt_in[b, : len(t) + 1] = [BOS, *t]
        tgt_out[b, : len(t) + 1] = [*t, EOS]
        tgt_mask[b, : len(t) + 1] = 1
    return {"src": src, "src_mask": src_mask, "tgt_in": tgt_in, "tgt_out": tgt_out, "tgt_mask": tgt_mask}
