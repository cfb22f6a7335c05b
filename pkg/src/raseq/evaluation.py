"""Corpus-level BLEU with the conventions of multi-bleu.perl.

Counts are pooled over the whole corpus before any division, a single
reference is used per sentence, there is no smoothing, and tokens are
whitespace-split and case-sensitive.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import List, Sequence, Union

from .errors import ContractError

MAX_ORDER = 4

Sentence = Union[str, Sequence[str]]


@dataclass(frozen=True)
class BleuReport:
    bleu: float  # percentage
    precisions: tuple  # p_1..p_4 in [0, 1]
    brevity_penalty: float
    hyp_len: int
    ref_len: int

    @property
    def ratio(self) -> float:
        return self.hyp_len / self.ref_len if self.ref_len else 0.0

    def format(self) -> str:
        ps = "/".join(f"{100 * p:.1f}" for p in self.precisions)
        return (
            f"BLEU = {self.bleu:.2f}, {ps} (BP={self.brevity_penalty:.3f}, ratio={self.ratio:.3f}, "
            f"hyp_len={self.hyp_len}, ref_len={self.ref_len})"
        )

    __str__ = format


def _tokens(s: Sentence) -> List[str]:
    return s.split() if isinstance(s, str) else list(s)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: Sequence[Sentence], references: Sequence[Sentence]) -> BleuReport:
    if len(hypotheses) != len(references):
        raise ContractError(
            f"hypothesis count {len(hypotheses)} does not match reference count {len(references)}"
        )
    if not hypotheses:
        raise ContractError("cannot score an empty corpus")
    correct = [0] * MAX_ORDER
    total = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = _tokens(hyp), _tokens(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, MAX_ORDER + 1):
            hc, rc = ngrams(h, n), ngrams(r, n)
            total[n - 1] += sum(hc.values())
            correct[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
    precisions = tuple(c / t if t else 0.0 for c, t in zip(correct, total))
    if hyp_len == 0:
        # multi-bleu divides by zero here; report the degenerate corpus as 0
        return BleuReport(0.0, precisions, math.exp(1 - ref_len) if ref_len else 1.0, 0, ref_len)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    if min(precisions) == 0.0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    return BleuReport(score, precisions, bp, hyp_len, ref_len)


def exact_match(hypotheses: Sequence[Sentence], references: Sequence[Sentence]) -> float:
    """Fraction of sentences whose token sequence equals the reference."""
    if len(hypotheses) != len(references):
        raise ContractError("hypothesis and reference counts differ")
    if not hypotheses:
        return 0.0
    return sum(_tokens(h) == _tokens(r) for h, r in zip(hypotheses, references)) / len(hypotheses)
