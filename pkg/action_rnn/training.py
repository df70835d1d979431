import csv
import logging
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from . import checkpoint
from .datapipe import (
    MASK_ALL, MASK_CLICKS_ONLY, MASK_MODES, Batch, EncodedSequence, batch_iter, step_mask,
)
from .errors import ConfigError, ContractViolation, NumericError, TrainingDiverged
from .grad import Gradients, batch_backward, sequence_loss
from .model import ModelParams, Variant, init_params
from .numkernel import AdamState, adam_step, child_rngs, log_softmax

logger = logging.getLogger(__name__)

GRAD_CHUNK = 16


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variant: str = Variant.LATE
    d: int = 40
    k: int = 40
    batch_size: int = 64
    iterations: int = 10000
    lr_start: float = 0.01
    lr_end: float = 0.001
    seed: int = 0
    mask_mode: str = MASK_ALL
    eval_every: int = 0
    log_every: int = 100
    threads: int = 1

    @field_validator("variant")
    @classmethod
    def _known_variant(cls, v: str):
        if v not in Variant.ALL:
            raise ValueError(f"unknown variant {v!r}; expected one of {', '.join(Variant.ALL)}")
        return v

    @field_validator("mask_mode")
    @classmethod
    def _known_mask(cls, v: str):
        if v not in MASK_MODES:
            raise ValueError(f"unknown mask mode {v!r}")
        return v

    @field_validator("d", "k", "batch_size", "iterations", "log_every", "threads")
    @classmethod
    def _positive(cls, v: int):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @model_validator(mode="after")
    def _check(self):
        if not self.lr_start >= self.lr_end > 0:
            raise ValueError("need lr_start >= lr_end > 0")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0")
        # the clicks baseline only ever learns from clicked-recommendation steps
        if self.variant == Variant.CLICKS:
            self.mask_mode = MASK_CLICKS_ONLY
        return self


@dataclass
class TrainHistory:
    iteration: List[int] = field(default_factory=list)
    loss: List[float] = field(default_factory=list)
    lr: List[float] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)

    def record(self, iteration: int, loss: float, lr: float, seconds: float):
        if self.iteration and iteration <= self.iteration[-1]:
            raise ContractViolation(f"history iteration {iteration} is not increasing")
        self.iteration.append(iteration)
        self.loss.append(loss)
        self.lr.append(lr)
        self.seconds.append(seconds)

    def __len__(self) -> int:
        return len(self.iteration)

    def mean_loss(self, start: int, stop: int) -> float:
        it = np.asarray(self.iteration)
        sel = (it >= start) & (it < stop)
        return float(np.mean(np.asarray(self.loss)[sel]))

    def to_csv(self, path: Union[str, Path]):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["iteration", "loss", "lr", "seconds"])
            for row in zip(self.iteration, self.loss, self.lr, self.seconds):
                w.writerow([row[0], repr(row[1]), repr(row[2]), f"{row[3]:.3f}"])


def nll_loss(logits: np.ndarray, targets: Sequence[int], mask) -> float:
    """Mean negative log-likelihood over unmasked steps."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    if logits.shape[0] != len(targets) or len(targets) != len(mask):
        raise ContractViolation(
            f"nll_loss: {logits.shape[0]} logit rows, {len(targets)} targets, "
            f"{len(mask)} mask entries"
        )
    n = int(mask.sum())
    if n == 0:
        raise ContractViolation("nll_loss: every step is masked")
    picked = log_softmax(logits)[np.arange(len(targets)), targets]
    return float(np.sum(-picked[mask]) / n)


def lr_schedule(config: TrainConfig, step: int) -> float:
    """lr_start / sqrt(1 + c*step), with c chosen so the last step lands on lr_end."""
    if not 0 <= step <= config.iterations:
        raise ContractViolation(f"lr_schedule: step {step} outside [0, {config.iterations}]")
    if step == config.iterations:
        return config.lr_end
    ratio_sq = (config.lr_start / config.lr_end) ** 2 - 1.0
    return float(config.lr_start / np.sqrt(1.0 + ratio_sq * (step / config.iterations)))


def _infer_vocab_size(*corpora: Sequence[EncodedSequence]) -> int:
    top = 0
    for corpus in corpora:
        for s in corpus:
            top = max(top, max(s.items))
            for recs in s.recs:
                if recs:
                    top = max(top, max(recs))
    return top + 1


def batch_gradients(
    params: ModelParams, batch: Batch, variant: str, pool: Optional[ThreadPoolExecutor] = None
) -> Tuple[float, Gradients]:
    """Summed loss and gradients over a batch.

    The batch is cut into chunks of GRAD_CHUNK sequences in batch order, each
    run as one padded pass; chunk results are added in that same order, so the
    thread count never changes the result.
    """
    chunks = [
        (batch.sequences[i:i + GRAD_CHUNK], batch.loss_mask[i:i + GRAD_CHUNK])
        for i in range(0, len(batch.sequences), GRAD_CHUNK)
    ]
    def run(chunk):
        return batch_backward(params, chunk[0], variant, chunk[1])

    results = list(pool.map(run, chunks)) if pool is not None else [run(c) for c in chunks]
    total = Gradients.zeros_like(params)
    loss = 0.0
    for chunk_loss, g in results:
        loss += chunk_loss
        for name, t in total.items():
            t += getattr(g, name)
    return loss, total


def validation_loss(
    params: ModelParams, data: Sequence[EncodedSequence], variant: str, mask_mode: str
) -> float:
    total, count = 0.0, 0
    for seq in data:
        mask = step_mask(seq, mask_mode)
        if mask.any():
            total += sequence_loss(params, seq, variant, mask)
            count += int(mask.sum())
    return total / count if count else float("nan")


def require_click_steps(config: TrainConfig, data: Sequence[EncodedSequence]) -> int:
    """Number of clicked-recommendation steps; a clicks-only run needs at least one."""
    n_clicks = sum(sum(s.click_target) for s in data)
    if config.mask_mode == MASK_CLICKS_ONLY and n_clicks == 0:
        raise ConfigError("no clicked-recommendation steps in the training data", field="variant")
    return n_clicks


def train(
    config: TrainConfig,
    train_data: Sequence[EncodedSequence],
    valid_data: Sequence[EncodedSequence] = (),
    V_x: Optional[int] = None,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    clock: Optional[Callable[[], float]] = time.perf_counter,
) -> Tuple[ModelParams, TrainHistory]:
    """Adam on the per-step-normalised NLL; one batch per iteration.

    ``clock=None`` records zero seconds so the history is reproducible byte for byte.
    """
    if not train_data:
        raise ContractViolation("train: no training sequences")
    n_clicks = require_click_steps(config, train_data)
    if V_x is None:
        V_x = _infer_vocab_size(train_data, valid_data)

    init_rng, batch_rng = child_rngs(config.seed, 2)
    params = init_params(init_rng, V_x, config.d, config.k)
    adam = AdamState.zeros_like(params.tensors())
    history = TrainHistory()
    window = deque(maxlen=config.log_every)
    out_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None

    logger.info(
        "training %s: V_x=%d d=%d k=%d, %d sequences, %d click steps, mask=%s",
        config.variant, V_x, config.d, config.k, len(train_data), n_clicks, config.mask_mode,
    )
    start = clock() if clock else 0.0
    batches = batch_iter(train_data, config.batch_size, batch_rng, config.mask_mode, epochs=None)
    pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    try:
        for it in range(config.iterations):
            batch = next(batches)
            lr = lr_schedule(config, it)
            n = batch.n_unmasked
            try:
                loss_sum, grads = batch_gradients(params, batch, config.variant, pool)
                loss = loss_sum / n
                if not np.isfinite(loss):
                    raise NumericError("non-finite batch loss")
                scaled = {name: g / n for name, g in grads.items()}
                snapshot = params.copy()
                adam_step(params.tensors(), scaled, adam, lr)
            except NumericError as e:
                if out_dir is not None:
                    checkpoint.save(out_dir / "model.ckpt", params, config.variant)
                raise TrainingDiverged(str(e), iteration=it, last_good=params) from e
            if not all(np.isfinite(t).all() for _, t in params.items()):
                if out_dir is not None:
                    checkpoint.save(out_dir / "model.ckpt", snapshot, config.variant)
                raise TrainingDiverged(
                    "non-finite parameters after update", iteration=it, last_good=snapshot
                )

            elapsed = (clock() - start) if clock else 0.0
            history.record(it, loss, lr, elapsed)
            window.append(loss)
            if (it + 1) % config.log_every == 0:
                logger.info("iter %d  loss %.4f  lr %.5f", it + 1, float(np.mean(window)), lr)

            if config.eval_every and (it + 1) % config.eval_every == 0:
                if valid_data:
                    val = validation_loss(params, valid_data, config.variant, config.mask_mode)
                    logger.info("iter %d  validation nll/step %.4f", it + 1, val)
                if out_dir is not None:
                    checkpoint.save(out_dir / f"model_{it + 1}.ckpt", params, config.variant)
    finally:
        if pool is not None:
            pool.shutdown()

    if out_dir is not None:
        checkpoint.save(out_dir / "model.ckpt", params, config.variant)
    return params, history
