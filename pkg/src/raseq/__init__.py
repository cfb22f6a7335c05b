"""Sequence-to-sequence toolkit with recurrent attention memory.

The attention for each source word is conditioned on a small LSTM that reads
a window of that word's (and its neighbours') past attention weights.
"""

from .data import Vocab, build_vocab, generate_synthetic, load_corpus, SyntheticSpec
from .evaluation import bleu
from .inference import decode, unk_replace
from .model import ModelConfig, Seq2Seq
from .training import TrainConfig, train

__version__ = "0.1.0"
