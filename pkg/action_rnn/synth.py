"""Synthetic session logs with a known blackbox recommender in the loop.

Organic navigation moves between item clusters (Zipf popularity inside each
cluster). At some steps the blackbox shows a slate of the most popular items of one
of the two adjacent clusters, picked at random; with probability ``p_follow``
the user's next item is then drawn uniformly from that slate instead of
organically.
"""

import json
import logging
from dataclasses import dataclass
from typing import IO, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .datapipe import MAX_RECS, RawEvent, RawSession
from .errors import ContractViolation
from .numkernel import Rng, child_rngs

logger = logging.getLogger(__name__)


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    V: int = 1000
    n_sessions: int = 20000
    len_range: Tuple[int, int] = (2, 20)
    zipf_s: float = 1.1
    n_clusters: int = 20
    p_intra: float = 0.8
    rec_rate: float = 0.1
    slate_size: int = 5
    p_follow: float = 0.8
    seed: int = 0

    @field_validator("p_intra", "rec_rate", "p_follow")
    @classmethod
    def _probability(cls, v: float):
        if not 0.0 <= v <= 1.0:
            raise ValueError("must be a probability in [0, 1]")
        return v

    @field_validator("slate_size")
    @classmethod
    def _slate(cls, v: int):
        if not 1 <= v <= MAX_RECS:
            raise ValueError(f"must be between 1 and {MAX_RECS}")
        return v

    @field_validator("n_sessions")
    @classmethod
    def _sessions(cls, v: int):
        if v < 0:
            raise ValueError("must be >= 0")
        return v

    @model_validator(mode="after")
    def _check(self):
        if not self.V >= self.n_clusters >= 1:
            raise ValueError("need V >= n_clusters >= 1")
        lo, hi = self.len_range
        if not 1 <= lo <= hi:
            raise ValueError("len_range must satisfy 1 <= min <= max")
        return self


@dataclass
class SynthTruth:
    """Per session, the step indices whose successor came from the slate."""

    driven_steps: List[List[int]]


def item_id(index: int) -> str:
    return f"i{index}"


class _Catalog:
    def __init__(self, config: SynthConfig):
        self.n_clusters = config.n_clusters
        # contiguous blocks; cluster c holds bounds[c]..bounds[c+1]-1, most popular first
        self.bounds = np.linspace(0, config.V, config.n_clusters + 1).round().astype(int)
        self.cdf = []
        for c in range(config.n_clusters):
            size = self.bounds[c + 1] - self.bounds[c]
            w = 1.0 / np.arange(1, size + 1) ** config.zipf_s
            self.cdf.append(np.cumsum(w / w.sum()))
        self.cluster_of = np.repeat(np.arange(config.n_clusters), np.diff(self.bounds))
        # per cluster: the slate pointing down (c-1) and the one pointing up (c+1)
        n = config.slate_size
        self.slates = [
            (self._policy_slate(c, -1, n), self._policy_slate(c, 1, n))
            for c in range(config.n_clusters)
        ]

    def _policy_slate(self, cluster: int, step: int, size: int) -> List[int]:
        """Head of the adjacent cluster, spilling further along when it is too small."""
        slate: List[int] = []
        c = (cluster + step) % self.n_clusters
        while len(slate) < size:
            slate.extend(range(self.bounds[c], self.bounds[c + 1])[: size - len(slate)])
            c = (c + step) % self.n_clusters
        return slate

    def draw_slate(self, rng: Rng, current: int) -> List[int]:
        return self.slates[int(self.cluster_of[current])][int(rng.integers(0, 2))]

    def draw_in(self, rng: Rng, cluster: int) -> int:
        cdf = self.cdf[cluster]
        offset = min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)
        return int(self.bounds[cluster] + offset)

    def draw_organic(self, rng: Rng, current: int, p_intra: float) -> int:
        c = int(self.cluster_of[current])
        if self.n_clusters > 1 and rng.random() >= p_intra:
            other = int(rng.integers(0, self.n_clusters - 1))
            c = other if other < c else other + 1
        return self.draw_in(rng, c)


def _session(
    config: SynthConfig, catalog: _Catalog, rng: Rng, user: int
) -> Tuple[RawSession, List[int]]:
    length = int(rng.integers(config.len_range[0], config.len_range[1] + 1))
    current = catalog.draw_in(rng, int(rng.integers(0, config.n_clusters)))
    events: List[RawEvent] = []
    driven: List[int] = []
    for t in range(length):
        slate = None
        if rng.random() < config.rec_rate:
            slate = catalog.draw_slate(rng, current)
        events.append(RawEvent(item=item_id(current), recs=tuple(item_id(i) for i in slate or ())))
        if t == length - 1:
            break
        if slate is not None and rng.random() < config.p_follow:
            current = slate[int(rng.integers(0, len(slate)))]
            driven.append(t)
        else:
            current = catalog.draw_organic(rng, current, config.p_intra)
    return RawSession(user_id=f"u{user}", events=tuple(events)), driven


def generate(config: SynthConfig) -> Tuple[List[RawSession], SynthTruth]:
    if config.slate_size > config.V:
        raise ContractViolation(f"slate_size {config.slate_size} exceeds catalog size {config.V}")
    catalog = _Catalog(config)
    sessions, truth = [], SynthTruth(driven_steps=[])
    # one derived stream per session, so any session can be regenerated on its own
    for user, rng in enumerate(child_rngs(config.seed, config.n_sessions)):
        session, driven = _session(config, catalog, rng, user)
        sessions.append(session)
        truth.driven_steps.append(driven)
    logger.info("generated %d sessions over %d items", len(sessions), config.V)
    return sessions, truth


def write_truth(truth: SynthTruth, stream: IO[str]):
    for steps in truth.driven_steps:
        stream.write(json.dumps(steps))
        stream.write("\n")
