from .errors import (
    ActionRNNError, ContractViolation, NumericError, DataError, ConfigError, TrainingDiverged,
)
from .numkernel import (
    AdamState, Rng, make_rng, child_rngs, matvec, softmax, log_softmax, topk, glorot_init,
    adam_step,
)
from .datapipe import (
    RawEvent, RawSession, Vocabulary, EncodedSequence, Batch,
    parse_log, read_log, write_log, build_vocab, truncate, encode, prepare, split,
    step_mask, batch_iter,
)
from .model import (
    ModelParams, Variant, TapeState, init_params, embed_item, action_repr, gru_cell, fuse,
    output_logits, forward, predict_next,
)
from .grad import (
    Gradients, backward, batch_backward, fd_check, random_case, gradcheck, sequence_loss,
)
from .training import TrainConfig, TrainHistory, nll_loss, lr_schedule, train
from .evaluation import EventRecord, MetricReport, evaluate, bootstrap_ci, precision_table
from .synth import SynthConfig, SynthTruth, generate, write_truth

__all__ = [
    "ActionRNNError", "ContractViolation", "NumericError", "DataError", "ConfigError",
    "TrainingDiverged",
    "AdamState", "Rng", "make_rng", "child_rngs", "matvec", "softmax", "log_softmax", "topk",
    "glorot_init", "adam_step",
    "RawEvent", "RawSession", "Vocabulary", "EncodedSequence", "Batch",
    "parse_log", "read_log", "write_log", "build_vocab", "truncate", "encode", "prepare", "split",
    "step_mask", "batch_iter",
    "ModelParams", "Variant", "TapeState", "init_params", "embed_item", "action_repr", "gru_cell",
    "fuse", "output_logits", "forward", "predict_next",
    "Gradients", "backward", "batch_backward", "fd_check", "random_case", "gradcheck",
    "sequence_loss",
    "TrainConfig", "TrainHistory", "nll_loss", "lr_schedule", "train",
    "EventRecord", "MetricReport", "evaluate", "bootstrap_ci", "precision_table",
    "SynthConfig", "SynthTruth", "generate", "write_truth",
]
