"""Beam/greedy decoding, attention traces and UNK replacement."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import tensor as T
from .data import EOS, UNK, Vocab
from .errors import ContractError
from .model import ContextSet, DecoderState, DynamicMemoryState, Seq2Seq, decoder_step, start
from .tensor import Tensor

DEFAULT_BEAM = 5


@dataclass
class DecodeTrace:
    alpha: np.ndarray  # [T, S]
    source_ids: List[int]
    output_ids: List[int]

    @property
    def argmax(self) -> np.ndarray:
        # np.argmax returns the first maximum, so ties go to the lowest index
        return np.argmax(self.alpha, axis=1) if self.alpha.size else np.zeros(0, dtype=np.int64)


@dataclass
class Hypothesis:
    tokens: List[int]
    logprob: float
    rows: List[np.ndarray] = field(default_factory=list)

    @property
    def normalized(self) -> float:
        return self.logprob / max(len(self.tokens), 1)


@dataclass
class DecodeResult:
    ids: List[int]  # includes the final EOS
    trace: DecodeTrace
    score: float  # summed log-probability of ``ids``
    finished: List[Hypothesis]
    max_live: int  # largest number of hypotheses expanded in one step

    def __iter__(self):
        return iter((self.ids, self.trace, self.score))


def length_cap(source_len: int, max_len_factor: float = 2.0) -> int:
    return int(max_len_factor * source_len) + 10


def _select_rows(t: Optional[Tensor], idx: np.ndarray) -> Optional[Tensor]:
    return None if t is None else Tensor(t.data[idx])


def _reorder(state: DecoderState, dmem, idx: np.ndarray, tokens: np.ndarray):
    new_state = DecoderState(
        hidden=_select_rows(state.hidden, idx),
        cell=_select_rows(state.cell, idx),
        c_prev=_select_rows(state.c_prev, idx),
        y_prev=tokens,
        prev_weights=_select_rows(state.prev_weights, idx),
    )
    if dmem is not None:
        dmem = DynamicMemoryState(_select_rows(dmem.hidden, idx), _select_rows(dmem.cell, idx), dmem.k)
    return new_state, dmem


def _expand(ctx: ContextSet, size: int) -> ContextSet:
    idx = np.zeros(size, dtype=np.int64)
    return ContextSet(
        Tensor(ctx.annotations.data[idx]), ctx.mask[idx], ctx.source_ids[idx], Tensor(ctx.keys.data[idx])
    )


def decode(
    model: Seq2Seq,
    source_ids: Sequence[int],
    beam_width: int = DEFAULT_BEAM,
    max_len_factor: float = 2.0,
) -> DecodeResult:
    """Beam search; the best completed hypothesis by ``logprob / length`` wins.

    Completed hypotheses leave the beam, so the number of live hypotheses is
    ``beam_width`` minus the number already finished. The final step allows
    only EOS, which guarantees termination within the length cap.
    """
    if beam_width < 1:
        raise ContractError(f"beam width must be at least 1, got {beam_width}")
    source_ids = [int(i) for i in source_ids]
    if not source_ids:
        raise ContractError("cannot decode an empty source sentence")
    cap = length_cap(len(source_ids), max_len_factor)
    V = model.config.tgt_vocab

    with T.no_grad():
        ctx1, state, dmem = start(model, source_ids)
        live = [Hypothesis([], 0.0)]
        finished: List[Hypothesis] = []
        max_live = 0
        for t in range(cap):
            ctx = _expand(ctx1, len(live)) if len(live) > 1 else ctx1
            out = decoder_step(model, state, ctx, dmem)
            max_live = max(max_live, len(live))
            logp = out.log_probs.data.astype(np.float64)
            if t == cap - 1:
                forced = np.full_like(logp, -np.inf)
                forced[:, EOS] = logp[:, EOS]
                logp = forced
            cand = np.array([h.logprob for h in live])[:, None] + logp
            room = beam_width - len(finished)
            order = np.argsort(-cand.reshape(-1), kind="stable")[:room]
            weights = out.attention.weights.data
            keep_idx, keep_tok, next_live = [], [], []
            for flat in order:
                h_idx, tok = divmod(int(flat), V)
                score = float(cand[h_idx, tok])
                if not np.isfinite(score):
                    continue
                parent = live[h_idx]
                hyp = Hypothesis(parent.tokens + [tok], score, parent.rows + [weights[h_idx].copy()])
                if tok == EOS:
                    finished.append(hyp)
                else:
                    next_live.append(hyp)
                    keep_idx.append(h_idx)
                    keep_tok.append(tok)
            if not next_live or len(finished) >= beam_width:
                break
            live = next_live
            state, dmem = _reorder(out.state, out.dmem, np.array(keep_idx), np.array(keep_tok, dtype=np.int64))

    best = max(finished, key=lambda h: h.normalized)
    trace = DecodeTrace(np.stack(best.rows).astype(np.float64), source_ids, best.tokens)
    return DecodeResult(best.tokens, trace, best.logprob, finished, max_live)


def greedy_decode(model: Seq2Seq, source_ids: Sequence[int], max_len_factor: float = 2.0) -> tuple:
    """Repeated argmax of the output distribution; returns ``(ids, logprob)``."""
    cap = length_cap(len(source_ids), max_len_factor)
    ids, total = [], 0.0
    with T.no_grad():
        ctx, state, dmem = start(model, list(source_ids))
        for t in range(cap):
            out = decoder_step(model, state, ctx, dmem)
            logp = out.log_probs.data[0].astype(np.float64)
            tok = EOS if t == cap - 1 else int(np.argmax(logp))
            ids.append(tok)
            total += float(logp[tok])
            if tok == EOS:
                break
            state, dmem = out.state, out.dmem
            state.y_prev = np.array([tok], dtype=np.int64)
    return ids, total


def sequence_logprob(model: Seq2Seq, source_ids: Sequence[int], output_ids: Sequence[int]) -> float:
    """Model log-probability of a full output sequence (EOS included)."""
    total = 0.0
    with T.no_grad():
        ctx, state, dmem = start(model, list(source_ids))
        for tok in output_ids:
            out = decoder_step(model, state, ctx, dmem)
            total += float(out.log_probs.data[0, tok])
            state, dmem = out.state, out.dmem
            state.y_prev = np.array([tok], dtype=np.int64)
    return total


def unk_replace(trace: DecodeTrace, source_surface: Sequence[str], tgt_vocab: Vocab) -> List[str]:
    """Surface tokens of the output with every UNK copied from its most-attended source word.

    EOS is dropped; all other tokens keep their position.
    """
    if len(source_surface) != trace.alpha.shape[1]:
        raise ContractError(
            f"source has {len(source_surface)} tokens but the trace covers {trace.alpha.shape[1]}"
        )
    aligned = trace.argmax
    out = []
    for j, tok in enumerate(trace.output_ids):
        if tok == EOS:
            continue
        out.append(source_surface[aligned[j]] if tok == UNK else tgt_vocab.tokens[tok])
    return out


def surface(trace: DecodeTrace, tgt_vocab: Vocab) -> List[str]:
    return tgt_vocab.decode(trace.output_ids)


def dump_attention(
    trace: DecodeTrace,
    path,
    source_tokens: Optional[Sequence[str]] = None,
    output_tokens: Optional[Sequence[str]] = None,
) -> List[Path]:
    """Write ``<path>.attn.tsv`` and ``<path>.pgm`` for one trace."""
    alpha = np.asarray(trace.alpha, dtype=np.float64)
    rows, cols = alpha.shape
    src = list(source_tokens) if source_tokens is not None else [str(i) for i in trace.source_ids]
    outs = list(output_tokens) if output_tokens is not None else [str(i) for i in trace.output_ids]
    if len(src) != cols or len(outs) != rows:
        raise ContractError(f"token labels ({len(outs)}x{len(src)}) do not match trace shape {alpha.shape}")
    base = Path(path)
    tsv = base.with_name(base.name + ".attn.tsv")
    pgm = base.with_name(base.name + ".pgm")
    lines = ["\t" + "\t".join(src)]
    lines += [outs[j] + "\t" + "\t".join(f"{v:.6f}" for v in alpha[j]) for j in range(rows)]
    pixels = np.clip(np.rint(255.0 * alpha), 0, 255).astype(np.uint8)
    try:
        tsv.write_text("\n".join(lines) + "\n", encoding="utf-8")
        pgm.write_bytes(f"P5\n{cols} {rows}\n255\n".encode("ascii") + pixels.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write attention dump at {base}: {exc}") from exc
    return [tsv, pgm]


def read_attention_tsv(path) -> tuple:
    """Inverse of the text half of :func:`dump_attention`: ``(src, out, alpha)``."""
    lines = Path(path).read_text(encoding="utf-8").rstrip("\n").split("\n")
    src = lines[0].split("\t")[1:]
    outs, rows = [], []
    for ln in lines[1:]:
        cells = ln.split("\t")
        outs.append(cells[0])
        rows.append([float(c) for c in cells[1:]])
    return src, outs, np.array(rows, dtype=np.float64)


def output_labels(trace: DecodeTrace, tgt_vocab: Vocab) -> List[str]:
    return [tgt_vocab.tokens[i] for i in trace.output_ids]

