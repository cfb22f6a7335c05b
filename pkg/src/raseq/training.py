"""Plain mini-batch SGD with gradient-norm rescaling and a halving schedule."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint
from . import tensor as T
from .data import Vocab, batch_padding
from .errors import ContractError, FormatError, NumericError, TrainingError
from .model import Seq2Seq, batch_nll

logger = logging.getLogger(__name__)

IdPair = Tuple[List[int], List[int]]


@dataclass
class TrainConfig:
    """Optimisation recipe plus the model sizes a training run builds.

    Defaults follow the English-German recipe (12 epochs, halving every epoch
    after epoch 8) at desk-scale layer sizes.
    """

    batch_size: int = 128
    lr_initial: float = 0.7
    halve_start_epoch: int = 8
    halve_every: int = 1
    total_epochs: int = 12
    clip_norm: float = 3.0
    max_len: int = 50
    k: int = 0
    seed: int = 0
    emb: int = 64
    hidden: int = 64
    mem: int = 32
    use_dyn: bool = True
    src_vocab_size: int = 50000
    tgt_vocab_size: int = 50000

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ContractError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.lr_initial <= 0:
            raise ContractError(f"lr_initial must be positive, got {self.lr_initial}")
        if self.max_len < 1 or self.batch_size < 1:
            raise ContractError("max_len and batch_size must be at least 1")
        if self.halve_every < 1 or self.total_epochs < 0 or self.k < 0:
            raise ContractError("halve_every >= 1, total_epochs >= 0 and k >= 0 are required")

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        """Read ``key = value`` lines (``#`` starts a comment); ``overrides`` win."""
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise FormatError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _parse_value(value, types[key], f"{path}:{lineno}")
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def to_text(self) -> str:
        return "".join(f"{k} = {str(v).lower() if isinstance(v, bool) else v}\n" for k, v in asdict(self).items())


def _parse_value(text: str, typ, where: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return int(text) if typ == "int" else float(text)
    except ValueError:
        raise FormatError(f"{where}: cannot parse {text!r} as {typ}") from None


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_nll: float
    valid_ppl: float
    seconds: float

    def row(self) -> str:
        return f"{self.epoch}\t{self.lr:.8g}\t{self.train_nll:.6f}\t{self.valid_ppl:.6f}\t{self.seconds:.2f}\n"


REPORT_HEADER = "epoch\tlr\ttrain_nll\tvalid_ppl\tseconds\n"


@dataclass
class TrainReport:
    epochs: List[EpochRecord] = field(default_factory=list)

    @property
    def learning_rates(self) -> List[float]:
        return [r.lr for r in self.epochs]

    @property
    def final_nll(self) -> float:
        return self.epochs[-1].train_nll if self.epochs else math.nan


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for a 1-based epoch.

    Constant through ``halve_start_epoch``; afterwards it halves once at the
    first epoch past the start and again every ``halve_every`` epochs.
    """
    if epoch < 1:
        raise ContractError(f"epochs are numbered from 1, got {epoch}")
    if epoch <= cfg.halve_start_epoch:
        return cfg.lr_initial
    halvings = (epoch - cfg.halve_start_epoch - 1) // cfg.halve_every + 1
    return cfg.lr_initial * 0.5 ** halvings


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_gradients(grads: Dict[str, np.ndarray], threshold: float) -> Dict[str, np.ndarray]:
    """Rescale all gradients jointly when their global L2 norm exceeds ``threshold``."""
    if threshold <= 0:
        raise ContractError(f"clip threshold must be positive, got {threshold}")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"gradient of {name} contains non-finite values")
    norm = global_norm(grads)
    if norm <= threshold:
        return grads
    scale = threshold / norm
    return {name: (g * scale).astype(g.dtype) for name, g in grads.items()}


def filter_pairs(pairs: Sequence[IdPair], max_len: int) -> List[IdPair]:
    return [(s, t) for s, t in pairs if 0 < len(s) <= max_len and 0 < len(t) <= max_len]


def perplexity(model: Seq2Seq, pairs: Sequence[IdPair], batch_size: int = 64) -> float:
    """Token-level perplexity (EOS included) with no graph construction."""
    total, count = 0.0, 0.0
    with T.no_grad():
        for i in range(0, len(pairs), batch_size):
            loss, ntok, _ = batch_nll(model, batch_padding(pairs[i : i + batch_size]))
            total += loss.item()
            count += ntok
    return math.exp(total / count) if count else math.nan


def sgd_step(model: Seq2Seq, batch: dict, lr: float, clip_norm: float, index: int = 0) -> float:
    """One update on a padded batch; returns the mean token NLL before the update."""
    model.zero_grad()
    try:
        loss_sum, ntok, _ = batch_nll(model, batch)
    except NumericError as exc:
        raise TrainingError(f"batch {index}: {exc}") from None
    loss = T.mul(loss_sum, 1.0 / ntok)
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingError(f"loss became non-finite at batch {index}")
    T.backward(loss)
    grads = {name: p.grad for name, p in model.params.items() if p.grad is not None}
    try:
        grads = clip_gradients(grads, clip_norm)
    except NumericError as exc:
        raise TrainingError(f"batch {index}: {exc}") from None
    for name, g in grads.items():
        p = model.params[name]
        p.data -= (lr * g).astype(p.dtype)
    model.zero_grad()
    return value


def train(
    pairs: Sequence[IdPair],
    cfg: TrainConfig,
    model: Seq2Seq,
    valid: Optional[Sequence[IdPair]] = None,
    out_dir=None,
    vocabs: Tuple[Optional[Vocab], Optional[Vocab]] = (None, None),
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> Tuple[Seq2Seq, TrainReport]:
    """Train ``model`` in place for ``cfg.total_epochs`` epochs.

    With ``out_dir`` set, writes ``epochNNN.ckpt`` after every epoch, keeps
    ``model.ckpt`` pointing at the latest one and appends rows to
    ``report.tsv``.
    """
    data = filter_pairs(pairs, cfg.max_len)
    if not data:
        raise ContractError("training corpus is empty after length filtering")
    if len(data) < len(pairs):
        logger.info("length filter kept %d of %d pairs", len(data), len(pairs))

    out = Path(out_dir) if out_dir is not None else None
    report_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        report_path = out / "report.tsv"
        report_path.write_text(REPORT_HEADER, encoding="utf-8")

    report = TrainReport()
    for epoch in range(1, cfg.total_epochs + 1):
        started = time.perf_counter()
        lr = lr_schedule(epoch, cfg)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(data))
        nll_sum, tok_sum = 0.0, 0.0
        for b, i in enumerate(range(0, len(order), cfg.batch_size)):
            batch = batch_padding([data[j] for j in order[i : i + cfg.batch_size]])
            ntok = float(batch["tgt_mask"].sum())
            nll_sum += sgd_step(model, batch, lr, cfg.clip_norm, index=b) * ntok
            tok_sum += ntok
        valid_ppl = perplexity(model, valid) if valid else math.nan
        record = EpochRecord(epoch, lr, nll_sum / tok_sum, valid_ppl, time.perf_counter() - started)
        report.epochs.append(record)
        logger.info("epoch %d lr %.5g train nll %.4f valid ppl %.3f", epoch, lr, record.train_nll, valid_ppl)
        if out is not None:
            meta = {"epoch": epoch, "train_config": asdict(cfg)}
            checkpoint.save(out / f"epoch{epoch:03d}.ckpt", model, *vocabs, extra=meta)
            checkpoint.save(out / "model.ckpt", model, *vocabs, extra=meta)
            with open(report_path, "a", encoding="utf-8") as fh:
                fh.write(record.row())
        if on_epoch is not None:
            on_epoch(record)
    return model, report
