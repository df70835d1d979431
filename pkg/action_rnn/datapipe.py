"""Interaction-log ingestion: parse, build vocabulary, encode, split, batch."""

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import IO, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
from pydantic import BaseModel, ValidationError, field_validator

from .errors import ContractViolation, DataError
from .numkernel import Rng

logger = logging.getLogger(__name__)

MIN_COUNT = 10
MAX_LEN = 40
MAX_RECS = 5
RARE_TOKEN = "<RARE>"
RARE_INDEX = 0

MASK_ALL = "all"
MASK_CLICKS_ONLY = "clicks_only"
MASK_MODES = (MASK_ALL, MASK_CLICKS_ONLY)

# vocab.tsv is one tab-separated id per line
_BAD_ID_CHARS = frozenset("\t\n\r")

T = TypeVar("T")


def _single_line(raw: str) -> str:
    if _BAD_ID_CHARS & set(raw):
        raise ValueError("item ids may not contain tabs or line breaks")
    return raw


class LogEvent(BaseModel):
    item: str
    recs: List[str] = []

    @field_validator("item")
    @classmethod
    def _item_id(cls, v: str):
        return _single_line(v)

    @field_validator("recs")
    @classmethod
    def _rec_ids(cls, v: List[str]):
        return [_single_line(raw) for raw in v]


class LogRecord(BaseModel):
    user_id: str
    events: List[LogEvent]


@dataclass(frozen=True)
class RawEvent:
    item: str
    recs: Tuple[str, ...] = ()


@dataclass(frozen=True)
class RawSession:
    user_id: str
    events: Tuple[RawEvent, ...]


@dataclass(frozen=True)
class EncodedSequence:
    items: Tuple[int, ...]
    recs: Tuple[Tuple[int, ...], ...]
    user_id: str = ""

    def __len__(self) -> int:
        return len(self.items)

    @property
    def click_target(self) -> Tuple[bool, ...]:
        return tuple(
            len(self.recs[t]) > 0 and self.items[t + 1] in self.recs[t]
            for t in range(len(self.items) - 1)
        )

    @property
    def n_steps(self) -> int:
        return max(len(self.items) - 1, 0)


@dataclass
class Batch:
    sequences: List[EncodedSequence]
    loss_mask: List[np.ndarray]

    @property
    def n_unmasked(self) -> int:
        return int(sum(m.sum() for m in self.loss_mask))


def parse_log(stream: Union[IO[bytes], IO[str], Iterable]) -> List[RawSession]:
    sessions: List[RawSession] = []
    rejected = 0
    for lineno, raw in enumerate(stream, start=1):
        try:
            line = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw
        except UnicodeDecodeError as e:
            raise DataError(f"invalid UTF-8 at byte {e.start}", line=lineno) from e
        if not line.strip():
            continue
        try:
            record = LogRecord.model_validate_json(line)
        except ValidationError as e:
            fields = ", ".join(
                ".".join(str(p) for p in err["loc"]) or "<record>" for err in e.errors()
            )
            raise DataError(f"malformed record ({fields})", line=lineno) from e
        if not record.events:
            rejected += 1
            continue
        events = tuple(RawEvent(item=ev.item, recs=tuple(ev.recs)) for ev in record.events)
        sessions.append(RawSession(user_id=record.user_id, events=events))
    if rejected:
        logger.warning("rejected %d records with empty events", rejected)
    return sessions


def read_log(path: Union[str, Path]) -> List[RawSession]:
    with open(path, "rb") as f:
        return parse_log(f)


def write_log(sessions: Iterable[RawSession], stream: IO[str]):
    for s in sessions:
        events = []
        for ev in s.events:
            out: Dict[str, object] = {"item": ev.item}
            if ev.recs:
                out["recs"] = list(ev.recs)
            events.append(out)
        stream.write(json.dumps({"user_id": s.user_id, "events": events}, separators=(",", ":")))
        stream.write("\n")


@dataclass
class Vocabulary:
    id_of: List[str]
    index_of: Dict[str, int] = field(default_factory=dict)
    rare_index: int = RARE_INDEX

    def __post_init__(self):
        if not self.index_of:
            self.index_of = {raw: i for i, raw in enumerate(self.id_of) if i != self.rare_index}

    @property
    def size(self) -> int:
        return len(self.id_of)

    def lookup(self, raw: str) -> int:
        return self.index_of.get(raw, self.rare_index)

    def save(self, path: Union[str, Path]):
        with open(path, "w", encoding="utf-8") as f:
            for i, raw in enumerate(self.id_of):
                f.write(f"{i}\t{raw}\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        id_of: List[str] = []
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                idx, _, raw = line.partition("\t")
                if not idx.isdigit() or int(idx) != len(id_of):
                    raise DataError(f"vocabulary index {idx!r} out of sequence", line=lineno)
                id_of.append(raw)
        if not id_of or id_of[RARE_INDEX] != RARE_TOKEN:
            raise DataError(f"vocabulary must start with {RARE_TOKEN}")
        return cls(id_of=id_of)


def build_vocab(sessions: Sequence[RawSession], min_count: int = MIN_COUNT) -> Vocabulary:
    """Items seen at least ``min_count`` times (visited or recommended) get their own index."""
    if not sessions:
        raise ContractViolation("build_vocab: no sessions")
    counts: Counter = Counter()
    for s in sessions:
        for ev in s.events:
            counts[ev.item] += 1
            counts.update(ev.recs)
    kept = [raw for raw, c in counts.items() if c >= min_count and raw != RARE_TOKEN]
    if not kept:
        raise DataError(f"degenerate corpus: no item reaches min_count={min_count}")
    # most frequent first, ties by raw id, so indices do not depend on input order
    kept.sort(key=lambda raw: (-counts[raw], raw))
    logger.info(
        "vocabulary: %d items kept of %d distinct (min_count=%d)", len(kept), len(counts), min_count
    )
    return Vocabulary(id_of=[RARE_TOKEN] + kept)


def truncate(session: RawSession, max_len: int = MAX_LEN, max_recs: int = MAX_RECS) -> RawSession:
    events = session.events[-max_len:]
    return RawSession(
        user_id=session.user_id,
        events=tuple(RawEvent(item=ev.item, recs=ev.recs[:max_recs]) for ev in events),
    )


def encode(
    session: RawSession, vocab: Vocabulary, max_len: int = MAX_LEN, max_recs: int = MAX_RECS
) -> EncodedSequence:
    if not session.events:
        raise ContractViolation("encode: empty session")
    kept = truncate(session, max_len, max_recs)
    return EncodedSequence(
        items=tuple(vocab.lookup(ev.item) for ev in kept.events),
        recs=tuple(tuple(vocab.lookup(r) for r in ev.recs) for ev in kept.events),
        user_id=session.user_id,
    )


def prepare(
    sessions: Sequence[RawSession],
    vocab: Vocabulary,
    max_len: int = MAX_LEN,
    max_recs: int = MAX_RECS,
) -> List[EncodedSequence]:
    """Encode a corpus, dropping sequences too short to hold a prediction step."""
    encoded = [encode(s, vocab, max_len, max_recs) for s in sessions]
    kept = [e for e in encoded if len(e) >= 2]
    if len(kept) < len(encoded):
        logger.info("dropped %d sessions with fewer than 2 events", len(encoded) - len(kept))
    return kept


def split(items: Sequence[T], valid_fraction: float, rng: Rng) -> Tuple[List[T], List[T]]:
    if not 0.0 < valid_fraction < 1.0:
        raise ContractViolation(f"split: valid_fraction must be in (0, 1), got {valid_fraction}")
    n = len(items)
    n_valid = math.floor(Fraction(str(valid_fraction)) * n)
    valid_idx = set(int(i) for i in rng.permutation(n)[:n_valid])
    train = [x for i, x in enumerate(items) if i not in valid_idx]
    valid = [x for i, x in enumerate(items) if i in valid_idx]
    return train, valid


def step_mask(seq: EncodedSequence, mask_mode: str = MASK_ALL) -> np.ndarray:
    if mask_mode == MASK_ALL:
        return np.ones(seq.n_steps, dtype=bool)
    if mask_mode == MASK_CLICKS_ONLY:
        return np.array(seq.click_target, dtype=bool)
    raise ContractViolation(f"unknown mask_mode {mask_mode!r}")


def batch_iter(
    sequences: Sequence[EncodedSequence],
    batch_size: int = 64,
    rng: Optional[Rng] = None,
    mask_mode: str = MASK_ALL,
    epochs: Optional[int] = 1,
) -> Iterator[Batch]:
    """Shuffled minibatches, reshuffled each epoch; ``epochs=None`` streams forever."""
    if not sequences:
        raise ContractViolation("batch_iter: no sequences")
    masks = [step_mask(s, mask_mode) for s in sequences]
    epoch = 0
    while epochs is None or epoch < epochs:
        order = rng.permutation(len(sequences)) if rng is not None else np.arange(len(sequences))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            batch = Batch(sequences=[sequences[i] for i in idx], loss_mask=[masks[i] for i in idx])
            if batch.n_unmasked == 0:
                continue
            yield batch
        epoch += 1
        if epochs is None and not any(m.any() for m in masks):
            return
