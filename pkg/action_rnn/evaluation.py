"""Precision@K over every prediction step, split into view and click events."""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .datapipe import EncodedSequence
from .errors import ContractViolation
from .model import ModelParams, forward
from .numkernel import Rng, make_rng, topk

logger = logging.getLogger(__name__)

VIEW = "view"
CLICK = "click"
KINDS = ("global", VIEW, CLICK)

CSV_HEADER = [
    "model", "K", "global", "view", "click",
    "ci_global_lo", "ci_global_hi", "ci_view_lo", "ci_view_hi", "ci_click_lo", "ci_click_hi",
    "n_global", "n_view", "n_click",
]


@dataclass(frozen=True)
class EventRecord:
    sequence: int
    step: int
    target: int
    hit: bool
    kind: str


@dataclass
class MetricReport:
    K: int
    precision_global: Optional[float]
    precision_view: Optional[float]
    precision_click: Optional[float]
    ci_global: Optional[Tuple[float, float]]
    ci_view: Optional[Tuple[float, float]]
    ci_click: Optional[Tuple[float, float]]
    counts: Dict[str, int]

    def precision(self, kind: str) -> Optional[float]:
        return getattr(self, f"precision_{kind}")

    def ci(self, kind: str) -> Optional[Tuple[float, float]]:
        return getattr(self, f"ci_{kind}")

    def to_csv_row(self, model: str) -> List[str]:
        def fmt(v):
            return "" if v is None else f"{v:.6f}"

        row = [model, str(self.K)]
        row += [fmt(self.precision(kind)) for kind in KINDS]
        for kind in KINDS:
            lo_hi = self.ci(kind)
            row += [fmt(None), fmt(None)] if lo_hi is None else [fmt(lo_hi[0]), fmt(lo_hi[1])]
        row += [str(self.counts[kind]) for kind in KINDS]
        return row

    def to_text(self, model: str = "") -> str:
        parts = [f"Precision@{self.K}" + (f" - {model}" if model else "")]
        for kind in KINDS:
            p = self.precision(kind)
            if p is None:
                parts.append(f"- {kind:<6}: n/a (n=0)")
                continue
            lo, hi = self.ci(kind)
            parts.append(f"- {kind:<6}: {p:.4f}  [{lo:.4f}, {hi:.4f}]  (n={self.counts[kind]})")
        return "\n".join(parts)


def bootstrap_ci(
    hits: Sequence[bool], n_boot: int = 30, level: float = 0.95, rng: Optional[Rng] = None
) -> Tuple[float, float]:
    """Percentile interval of resampled hit rates, widened to contain the point estimate."""
    hits = np.asarray(hits, dtype=np.float64)
    if hits.size == 0:
        raise ContractViolation("bootstrap_ci: no events")
    if not 0.0 < level < 1.0:
        raise ContractViolation(f"bootstrap_ci: level must be in (0, 1), got {level}")
    rng = rng if rng is not None else make_rng(0)
    n = hits.size
    means = np.array([hits[rng.integers(0, n, size=n)].mean() for _ in range(n_boot)])
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha], method="linear")
    point = float(hits.mean())
    return float(min(lo, point)), float(max(hi, point))


def _sequence_events(
    params: ModelParams, variant: str, seq_id: int, seq: EncodedSequence, K: int
) -> List[EventRecord]:
    tape = forward(params, seq, variant)
    clicks = seq.click_target
    events = []
    for t, row in enumerate(tape.logits):
        target = seq.items[t + 1]
        hit = target in topk(row, K)
        events.append(EventRecord(seq_id, t, target, hit, CLICK if clicks[t] else VIEW))
    return events


def summarize(
    events: Sequence[EventRecord],
    K: int,
    n_boot: int = 30,
    level: float = 0.95,
    rng: Optional[Rng] = None,
) -> MetricReport:
    rng = rng if rng is not None else make_rng(0)
    groups = {
        "global": [e.hit for e in events],
        VIEW: [e.hit for e in events if e.kind == VIEW],
        CLICK: [e.hit for e in events if e.kind == CLICK],
    }
    values = {}
    for kind in KINDS:
        hits = groups[kind]
        if hits:
            values[f"precision_{kind}"] = float(np.mean(hits))
            values[f"ci_{kind}"] = bootstrap_ci(hits, n_boot, level, rng)
        else:
            values[f"precision_{kind}"] = None
            values[f"ci_{kind}"] = None
    return MetricReport(K=K, counts={kind: len(groups[kind]) for kind in KINDS}, **values)


def evaluate(
    params: ModelParams,
    variant: str,
    sequences: Sequence[EncodedSequence],
    K: int = 10,
    n_boot: int = 30,
    level: float = 0.95,
    rng: Optional[Rng] = None,
    threads: int = 1,
) -> Tuple[List[EventRecord], MetricReport]:
    """Rank the full vocabulary at every step and score top-K hits."""
    if K > params.V_x:
        raise ContractViolation(f"K={K} exceeds vocabulary size {params.V_x}")
    jobs = list(enumerate(sequences))
    run = lambda job: _sequence_events(params, variant, job[0], job[1], K)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_seq = list(pool.map(run, jobs))
    else:
        per_seq = [run(j) for j in jobs]
    events = [e for seq_events in per_seq for e in seq_events]
    report = summarize(events, K, n_boot, level, rng)
    logger.info(
        "evaluated %s on %d events (%d view, %d click)",
        variant, report.counts["global"], report.counts[VIEW], report.counts[CLICK],
    )
    return events, report


def write_report_csv(path: Union[str, Path], rows: Sequence[Tuple[str, MetricReport]]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for model, report in rows:
            w.writerow(report.to_csv_row(model))


def precision_table(rows: Sequence[Tuple[str, MetricReport]]) -> str:
    """Models as rows, Global/View/Click columns with the CI half-width."""
    def cell(report: MetricReport, kind: str) -> str:
        p = report.precision(kind)
        if p is None:
            return f"{'n/a':>17}"
        lo, hi = report.ci(kind)
        return f"{p:.4f} ±{(hi - lo) / 2:.4f}".rjust(17)

    width = max([len("Model")] + [len(m) for m, _ in rows])
    K = rows[0][1].K if rows else 10
    lines = [f"Precision@{K}", f"{'Model':<{width}} " + " ".join(f"{k.title():>17}" for k in KINDS)]
    for model, report in rows:
        lines.append(f"{model:<{width}} " + " ".join(cell(report, k) for k in KINDS))
    return "\n".join(lines)
