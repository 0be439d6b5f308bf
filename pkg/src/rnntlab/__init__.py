"""Desk-scale streaming transducer lab.

A from-scratch, numpy-only implementation of a recurrent neural network
transducer for sequence recognition: exact alignment-marginalized loss with
analytic gradients, LSTM encoder/prediction networks with projection and time
reduction, a frame-synchronous streaming beam search with hypothesis merging,
long-form training strategies (random state sampling and random state
passing), a synthetic multidomain corpus generator, WER evaluation, training
with checkpointing, reproducible experiment recipes, and a command line
interface (rnntlab datagen|train|decode|eval|inspect).
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import (
    ConfigError,
    DataConfig,
    DecodeConfig,
    ExperimentConfig,
    load_config,
    parse_config,
)
from .corpus import (
    DomainSpec,
    Utterance,
    build_longform_set,
    default_domains,
    frontend_stack,
    load_corpus,
    make_minibatch,
    sample_domain,
    save_corpus,
    synthesize_utterance,
    table_style_domains,
)
from .decoder import (
    Beam,
    DecodeResult,
    Hypothesis,
    decode_step,
    decode_utterance,
    greedy_decode,
    oracle_decode,
)
from .estimator import NotFittedError, RnntRecognizer
from .loss import anti_diagonal_sums, enumerate_alignments, rnnt_forward, rnnt_grad_logits
from .metrics import WerBreakdown, bucket_label, corpus_wer, edit_align
from .model import ModelConfig, RecurrentState, TransducerModel
from .recipes import (
    LongformResult,
    MultidomainResult,
    longform_experiment,
    multidomain_experiment,
)
from .states import StatePool, StateStrategy, deposit_final_states, initial_state
from .trainer import (
    DivergenceError,
    TrainConfig,
    TrainData,
    TrainResult,
    run_training,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "Beam",
    "Checkpoint",
    "ConfigError",
    "DataConfig",
    "DecodeConfig",
    "DecodeResult",
    "DivergenceError",
    "DomainSpec",
    "ExperimentConfig",
    "Hypothesis",
    "LongformResult",
    "ModelConfig",
    "MultidomainResult",
    "NotFittedError",
    "RecurrentState",
    "RnntRecognizer",
    "StatePool",
    "StateStrategy",
    "TrainConfig",
    "TrainData",
    "TrainResult",
    "TransducerModel",
    "Utterance",
    "WerBreakdown",
    "bucket_label",
    "build_longform_set",
    "corpus_wer",
    "decode_step",
    "decode_utterance",
    "default_domains",
    "deposit_final_states",
    "edit_align",
    "frontend_stack",
    "greedy_decode",
    "initial_state",
    "load_checkpoint",
    "load_config",
    "load_corpus",
    "longform_experiment",
    "make_minibatch",
    "multidomain_experiment",
    "oracle_decode",
    "parse_config",
    "anti_diagonal_sums",
    "enumerate_alignments",
    "rnnt_forward",
    "rnnt_grad_logits",
    "run_training",
    "sample_domain",
    "save_checkpoint",
    "save_corpus",
    "synthesize_utterance",
    "table_style_domains",
    "train_step",
]
