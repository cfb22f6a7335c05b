"""Encoder-attention-decoder network with optional recurrent attention memory.

All operations are batched: ids are ``[B, S]`` integer arrays and hidden
states carry a leading batch axis. Padded source positions are excluded from
the attention softmax and read as zero attention inside memory windows.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .data import BOS
from .errors import ContractError, DimensionError
from .tensor import Tensor

INIT_SCALE = 0.1


@dataclass(frozen=True)
class ModelConfig:
    """Hyper-parameters of the network.

    The attention hidden size and the output MLP width both equal ``hidden``.
    ``mem`` and ``k`` are ignored when ``use_dyn`` is false.
    """

    src_vocab: int
    tgt_vocab: int
    emb: int = 64
    hidden: int = 64
    mem: int = 32
    k: int = 0
    use_dyn: bool = True

    def __post_init__(self):
        if min(self.src_vocab, self.tgt_vocab, self.emb, self.hidden) < 1:
            raise ContractError("vocabulary and layer sizes must be positive")
        if self.use_dyn and (self.mem < 1 or self.k < 0):
            raise ContractError(f"dynamic memory needs mem >= 1 and k >= 0 (got {self.mem}, {self.k})")

    @property
    def window(self) -> int:
        return 2 * self.k + 1

    def param_shapes(self) -> Dict[str, tuple]:
        e, n, m = self.emb, self.hidden, self.mem
        shapes = {
            "W_S": (self.src_vocab, e),
            "W_T": (self.tgt_vocab, e),
        }
        for prefix, d, h in (("enc_fwd", e, n), ("enc_bwd", e, n), ("dec", e + 2 * n, n)):
            shapes[f"{prefix}.W"] = (4 * h, d)
            shapes[f"{prefix}.U"] = (4 * h, h)
            shapes[f"{prefix}.b"] = (4 * h,)
        shapes["W_init"] = (n, 2 * n)
        if self.use_dyn:
            shapes["dmem.W"] = (4 * m, self.window)
            shapes["dmem.U"] = (4 * m, m)
            shapes["dmem.b"] = (4 * m,)
        shapes["v_a"] = (n,)
        shapes["W_a"] = (n, 2 * n + (m if self.use_dyn else 0))
        shapes["U_a"] = (n, n)
        shapes["W_1"] = (n, 3 * n)
        shapes["b_1"] = (n,)
        shapes["W_2"] = (self.tgt_vocab, n)
        return shapes


@dataclass
class ContextSet:
    annotations: Tensor  # [B, S, 2n]
    mask: np.ndarray  # [B, S], 1 for real tokens
    source_ids: np.ndarray  # [B, S]
    keys: Tensor  # annotations projected by the static columns of W_a, [B, S, n]

    @property
    def length(self) -> int:
        return self.annotations.shape[1]


@dataclass
class DynamicMemoryState:
    hidden: Tensor  # [B, S, m]
    cell: Tensor
    k: int


@dataclass
class DecoderState:
    hidden: Tensor  # [B, n]
    cell: Tensor
    c_prev: Tensor  # [B, 2n]
    y_prev: np.ndarray  # [B]
    prev_weights: Optional[Tensor] = None  # attention of the previous step, [B, S]


@dataclass
class AttentionResult:
    weights: Tensor  # [B, S]
    context: Tensor  # [B, 2n]
    scores: Tensor  # [B, S]


@dataclass
class StepOutput:
    state: DecoderState
    dmem: Optional[DynamicMemoryState]
    attention: AttentionResult
    log_probs: Tensor  # [B, V_tgt]


@dataclass
class Seq2Seq:
    config: ModelConfig
    params: Dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0, dtype=np.float32) -> "Seq2Seq":
        """Draw every weight uniformly from [-0.1, 0.1]."""
        rng = np.random.default_rng(seed)
        params = {
            name: Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape).astype(dtype),
                         requires_grad=True, name=name)
            for name, shape in config.param_shapes().items()
        }
        return cls(config, params)

    def __post_init__(self):
        expected = self.config.param_shapes()
        if self.params:
            if set(self.params) != set(expected):
                raise ContractError(
                    f"parameter names do not match config: {sorted(set(self.params) ^ set(expected))}"
                )
            for name, shape in expected.items():
                if self.params[name].shape != shape:
                    raise DimensionError(
                        f"parameter {name} has shape {self.params[name].shape}, expected {shape}"
                    )

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def astype(self, dtype) -> "Seq2Seq":
        params = {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in self.params.items()}
        return Seq2Seq(self.config, params)

    def copy(self) -> "Seq2Seq":
        return self.astype(self.dtype)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def lstm_weights(self, prefix: str) -> tuple:
        return self.params[f"{prefix}.W"], self.params[f"{prefix}.U"], self.params[f"{prefix}.b"]

    def zeros(self, *shape) -> Tensor:
        return Tensor(np.zeros(shape, dtype=self.dtype))


def _as_batch(source_ids, mask=None) -> tuple:
    ids = np.asarray(source_ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.ndim != 2 or ids.shape[1] == 0:
        raise ContractError(f"source must be a non-empty id sequence, got shape {ids.shape}")
    if mask is None:
        mask = np.ones(ids.shape, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.float32)
    if mask.shape != ids.shape:
        raise DimensionError(f"mask shape {mask.shape} does not match ids {ids.shape}")
    if np.any(mask.sum(axis=1) == 0):
        raise ContractError("every source sentence needs at least one token")
    return ids, mask


def _blend(mask_col: np.ndarray, new: Tensor, old: Tensor) -> Tensor:
    return T.add(T.mul(new, mask_col), T.mul(old, 1.0 - mask_col))


def encode(model: Seq2Seq, source_ids, mask=None) -> ContextSet:
    """Run the bidirectional encoder and return the annotation set."""
    cfg = model.config
    ids, mask = _as_batch(source_ids, mask)
    if ids.max() >= cfg.src_vocab or ids.min() < 0:
        raise ContractError(f"source id out of range for vocabulary of {cfg.src_vocab}")
    B, S = ids.shape
    n = cfg.hidden
    padded = bool(np.any(mask == 0))
    emb = T.embedding(model["W_S"], ids)

    fwd: List[Tensor] = []
    state = (model.zeros(B, n), model.zeros(B, n))
    weights = model.lstm_weights("enc_fwd")
    for i in range(S):
        state = T.lstm_cell(state, emb[:, i, :], weights)
        fwd.append(state[0])

    bwd: List[Optional[Tensor]] = [None] * S
    state = (model.zeros(B, n), model.zeros(B, n))
    weights = model.lstm_weights("enc_bwd")
    for i in reversed(range(S)):
        new = T.lstm_cell(state, emb[:, i, :], weights)
        if padded:
            # right-to-left pass starts at each sentence's own last token
            m = mask[:, i : i + 1]
            new = (_blend(m, new[0], state[0]), _blend(m, new[1], state[1]))
        state = new
        bwd[i] = state[0]

    annotations = T.concat([T.stack(fwd, axis=1), T.stack(bwd, axis=1)], axis=-1)
    keys = T.linear(annotations, model["W_a"][:, : 2 * n])
    return ContextSet(annotations, mask, ids, keys)


def init_decoder_state(model: Seq2Seq, ctx: ContextSet) -> DecoderState:
    """``s_0 = tanh(W_init mean_i h_i)`` with zero cell, ``c_0 = 0``, ``y_0 = BOS``."""
    B, S = ctx.mask.shape
    n = model.config.hidden
    weights = ctx.mask / ctx.mask.sum(axis=1, keepdims=True)
    mean = T.reshape(T.matmul(weights[:, None, :].astype(model.dtype), ctx.annotations), (B, 2 * n))
    hidden = T.tanh(T.linear(mean, model["W_init"]))
    return DecoderState(
        hidden=hidden,
        cell=model.zeros(B, n),
        c_prev=model.zeros(B, 2 * n),
        y_prev=np.full(B, BOS, dtype=np.int64),
    )


def init_dynamic_memory(model: Seq2Seq, ctx: ContextSet) -> DynamicMemoryState:
    B, S = ctx.mask.shape
    m = model.config.mem
    return DynamicMemoryState(model.zeros(B, S, m), model.zeros(B, S, m), model.config.k)


def update_dynamic_memory(
    model: Seq2Seq, dmem: DynamicMemoryState, prev_weights: Optional[Tensor]
) -> DynamicMemoryState:
    """Advance every source position's memory LSTM by one step.

    The input for position ``i`` is the window of previous-step attention
    weights centred on ``i``. Before any attention exists the window is zero.
    """
    B, S, _ = dmem.hidden.shape
    if prev_weights is None:
        window = model.zeros(B, S, 2 * dmem.k + 1)
    else:
        if not isinstance(prev_weights, Tensor):
            prev_weights = Tensor(np.asarray(prev_weights, dtype=model.dtype))
        if prev_weights.ndim == 1:
            prev_weights = T.reshape(prev_weights, (1, -1))
        if prev_weights.shape != (B, S):
            raise DimensionError(
                f"attention weights of shape {prev_weights.shape} do not match memory over {S} positions"
            )
        window = T.windows(prev_weights, dmem.k)
    hidden, cell = T.lstm_cell((dmem.hidden, dmem.cell), window, model.lstm_weights("dmem"))
    return DynamicMemoryState(hidden, cell, dmem.k)


def _attend(model: Seq2Seq, ctx: ContextSet, keys: Tensor, s: Tensor) -> AttentionResult:
    B, S = ctx.mask.shape
    n = model.config.hidden
    query = T.reshape(T.linear(s, model["U_a"]), (B, 1, n))
    energy = T.tanh(T.add(keys, query))
    scores = T.reshape(T.matmul(energy, T.reshape(model["v_a"], (n, 1))), (B, S))
    weights = T.softmax(scores, mask=ctx.mask if np.any(ctx.mask == 0) else None)
    context = T.reshape(T.matmul(T.reshape(weights, (B, 1, S)), ctx.annotations), (B, 2 * n))
    return AttentionResult(weights, context, scores)


def _query_hidden(s) -> Tensor:
    return s.hidden if isinstance(s, DecoderState) else s


def attend_baseline(model: Seq2Seq, ctx: ContextSet, s) -> AttentionResult:
    """Content-based addressing over the annotations alone."""
    if model.config.use_dyn:
        raise ContractError("attend_baseline requires a model without dynamic memory columns")
    return _attend(model, ctx, ctx.keys, _query_hidden(s))


def attend_dynamic(model: Seq2Seq, ctx: ContextSet, dmem: DynamicMemoryState, s) -> AttentionResult:
    """Addressing over ``[h_i, d_i]``; the context still reads annotations only."""
    if not model.config.use_dyn:
        raise ContractError("attend_dynamic requires a model built with use_dyn=True")
    if dmem.hidden.shape[:2] != ctx.mask.shape:
        raise ContractError(
            f"memory covers {dmem.hidden.shape[:2]} positions but context has {ctx.mask.shape}"
        )
    n = model.config.hidden
    keys = T.add(ctx.keys, T.linear(dmem.hidden, model["W_a"][:, 2 * n :]))
    return _attend(model, ctx, keys, _query_hidden(s))


def decoder_step(
    model: Seq2Seq,
    state: DecoderState,
    ctx: ContextSet,
    dmem: Optional[DynamicMemoryState] = None,
) -> StepOutput:
    y_prev = np.asarray(state.y_prev, dtype=np.int64)
    if y_prev.min() < 0 or y_prev.max() >= model.config.tgt_vocab:
        raise ContractError(f"previous target id out of range for vocabulary of {model.config.tgt_vocab}")
    x = T.concat([T.embedding(model["W_T"], y_prev), state.c_prev], axis=-1)
    return _step_from_input(model, state, ctx, dmem, x)


def _step_from_input(model, state, ctx, dmem, x) -> StepOutput:
    hidden, cell = T.lstm_cell((state.hidden, state.cell), x, model.lstm_weights("dec"))
    if model.config.use_dyn:
        if dmem is None:
            raise ContractError("model with dynamic memory needs a DynamicMemoryState")
        dmem = update_dynamic_memory(model, dmem, state.prev_weights)
        att = attend_dynamic(model, ctx, dmem, hidden)
    else:
        att = attend_baseline(model, ctx, hidden)
    log_probs = predict(model, hidden, att.context)
    new_state = DecoderState(hidden, cell, att.context, state.y_prev, att.weights)
    return StepOutput(new_state, dmem, att, log_probs)


def predict(model: Seq2Seq, hidden: Tensor, context: Tensor) -> Tensor:
    """One-layer MLP over ``[s_j, c_j]`` followed by a log-softmax."""
    mlp = T.tanh(T.linear(T.concat([hidden, context], axis=-1), model["W_1"], model["b_1"]))
    return T.log_softmax(T.linear(mlp, model["W_2"]))


def start(model: Seq2Seq, source_ids, mask=None) -> tuple:
    """Encode a batch and build the initial decoder and memory states."""
    ctx = encode(model, source_ids, mask)
    state = init_decoder_state(model, ctx)
    dmem = init_dynamic_memory(model, ctx) if model.config.use_dyn else None
    return ctx, state, dmem


def batch_nll(model: Seq2Seq, batch: dict) -> tuple:
    """Teacher-forced summed negative log-likelihood of a padded batch.

    Returns ``(loss tensor, token count, attention rows)``.
    """
    ctx, state, dmem = start(model, batch["src"], batch["src_mask"])
    tgt_in, tgt_out, tgt_mask = batch["tgt_in"], batch["tgt_out"], batch["tgt_mask"]
    emb = T.embedding(model["W_T"], tgt_in)
    total = None
    rows = []
    for j in range(tgt_in.shape[1]):
        x = T.concat([emb[:, j, :], state.c_prev], axis=-1)
        out = _step_from_input(model, state, ctx, dmem, x)
        state, dmem = out.state, out.dmem
        rows.append(out.attention.weights)
        gold = T.pick(out.log_probs, tgt_out[:, j])
        term = T.tensor_sum(T.mul(gold, tgt_mask[:, j]))
        total = term if total is None else T.add(total, term)
    return T.neg(total), float(tgt_mask.sum()), rows


def sentence_loss(model: Seq2Seq, source_ids: Sequence[int], target_ids: Sequence[int]) -> Tensor:
    """``-sum_j log p(y_j | y_<j, x)`` for one pair; EOS is appended internally."""
    from .data import batch_padding

    if len(source_ids) == 0 or len(target_ids) == 0:
        raise ContractError("sentence_loss needs non-empty source and target")
    loss, _, _ = batch_nll(model, batch_padding([(list(source_ids), list(target_ids))]))
    return loss


def with_params(model: Seq2Seq, **overrides) -> Seq2Seq:
    """Copy of ``model`` with selected parameter arrays replaced."""
    params = dict(model.params)
    for name, value in overrides.items():
        params[name] = Tensor(np.asarray(value, dtype=model.dtype), requires_grad=True, name=name)
    return replace(model, params=params)
