"""Neighbor trust bookkeeping driven by the successful-exchange ratio.

Each node keeps one record per neighbor over a sliding window of forwarding
attempts.  A ratio strictly above ``best_ratio`` marks the neighbor as a
preferred next hop, strictly below ``worst_ratio`` excludes it from parent
selection, and the closed band in between is probational: the record is
re-checked at block boundaries a bounded number of times before demotion.
Demotion is absorbing; only an explicit exoneration clears it.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, asdict

BEST = "best"
PROBATION = "probation"
WORST = "worst"

LOW_EXCHANGE_RATIO = "low_exchange_ratio"


@dataclass
class Thresholds:
    """All tunables consumed by the defense stack.

    The whole set is serialized into every sink's rule table so a ledger dump
    is self-describing.
    """

    best_ratio: float = 0.70
    worst_ratio: float = 0.40
    max_rechecks: int = 3
    window_size: int = 20
    # Below this many windowed attempts the classification is left alone,
    # so a single lost packet cannot condemn a fresh neighbor.
    min_classify_attempts: int = 10
    flood_multiplier: float = 5.0
    rank_jump_limit: int = 2
    block_interval: int = 2000
    block_capacity: int = 512
    prune_every: int = 20
    prune_keep: int = 10
    anomaly_warmup_blocks: int = 5
    z_threshold: float = 3.0
    sink_fraction: float = 0.10

    def to_dict(self) -> dict:
        return asdict(self)


_DEFAULTS = Thresholds()


@dataclass
class TrustRecord:
    """Sliding-window exchange history for one neighbor."""

    window: deque = field(default_factory=lambda: deque(maxlen=_DEFAULTS.window_size))
    classification: str = BEST
    rechecks_used: int = 0

    @property
    def attempts(self) -> int:
        return len(self.window)

    @property
    def successes(self) -> int:
        return sum(self.window)

    @property
    def ratio(self) -> float:
        if not self.window:
            return 1.0
        return self.successes / self.attempts


def new_record(thresholds: Thresholds | None = None) -> TrustRecord:
    th = thresholds or _DEFAULTS
    return TrustRecord(window=deque(maxlen=th.window_size))


def classify(ratio: float, rechecks_used: int, thresholds: Thresholds | None = None) -> str:
    """Pure classification rule over (ratio, rechecks_used).

    Strictly above ``best_ratio`` is best, strictly below ``worst_ratio`` is
    worst, and the closed band in between is probation until the recheck
    budget is exhausted.
    """
    th = thresholds or _DEFAULTS
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio out of range: {ratio}")
    if ratio > th.best_ratio:
        return BEST
    if ratio < th.worst_ratio:
        return WORST
    if rechecks_used >= th.max_rechecks:
        return WORST
    return PROBATION


def record_exchange(record: TrustRecord, success: bool,
                    thresholds: Thresholds | None = None) -> TrustRecord:
    """Append one exchange outcome and refresh the classification.

    Worst is absorbing: once demoted, further exchanges never restore the
    record (see :func:`exonerate`).  The window evicts the oldest outcome
    once full, so ``attempts`` saturates at the window size.
    """
    th = thresholds or _DEFAULTS
    record.window.append(1 if success else 0)
    if record.classification == WORST:
        return record
    if record.attempts >= th.min_classify_attempts:
        new = classify(record.ratio, record.rechecks_used, th)
        if new == BEST:
            record.rechecks_used = 0
        record.classification = new
    return record


def reevaluate(record: TrustRecord, thresholds: Thresholds | None = None) -> str:
    """Block-boundary recheck; spends one recheck while in probation."""
    th = thresholds or _DEFAULTS
    if record.classification == WORST:
        return WORST
    if record.attempts < th.min_classify_attempts:
        return record.classification
    ratio = record.ratio
    if ratio > th.best_ratio:
        record.classification = BEST
        record.rechecks_used = 0
    elif ratio < th.worst_ratio:
        record.classification = WORST
    else:
        record.rechecks_used += 1
        record.classification = WORST if record.rechecks_used >= th.max_rechecks else PROBATION
    return record.classification


def exonerate(record: TrustRecord) -> TrustRecord:
    """Clear a record after a global-root downgrade; the only way out of worst."""
    record.window.clear()
    record.classification = BEST
    record.rechecks_used = 0
    return record


def phase1_flags(trust_table: dict[int, TrustRecord]) -> list[tuple[int, str]]:
    """Neighbors currently classified worst, one flag each."""
    return [(nid, LOW_EXCHANGE_RATIO)
            for nid in sorted(trust_table)
            if trust_table[nid].classification == WORST]
