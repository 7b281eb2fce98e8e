"""Validation sweep for the ESSER noise-discount weight."""

import enum
import math
import logging
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.667
DEFAULT_STEP = 0.1


class StopReason(str, enum.Enum):
    THRESHOLD_DROP = "threshold_drop"
    SWEEP_EXHAUSTED = "sweep_exhausted"


@dataclass
class SweepRecord:
    lambda_values: list = field(default_factory=list)
    proxy_scores: list = field(default_factory=list)
    selected_lambda: float = None
    stop_reason: StopReason = None

    def as_dict(self) -> dict:
        return {
            "lambda_values": list(self.lambda_values),
            "proxy_scores": list(self.proxy_scores),
            "selected_lambda": self.selected_lambda,
            "stop_reason": None if self.stop_reason is None else self.stop_reason.value,
        }


class SweepAborted(RuntimeError):
    """The callback failed; ``record`` holds what was evaluated before it."""

    def __init__(self, message, record: SweepRecord):
        super().__init__(message)
        self.record = record


def _drop_at(scores, i, threshold, reference):
    base = scores[i] if reference == "previous" else scores[0]
    return scores[i + 1] < base - threshold


def select_lambda(proxy_scores, threshold: float = DEFAULT_THRESHOLD, reference: str = "previous"):
    """Index of the last grid point before the first large proxy drop.

    A drop is a score more than ``threshold`` dB below the preceding score
    (``reference="previous"``) or below the first score (``"initial"``).
    Returns ``(index, StopReason)``.
    """
    scores = [float(s) for s in proxy_scores]
    if not scores:
        raise ValueError("no proxy scores to select from")
    if reference not in ("previous", "initial"):
        raise ValueError(f"unknown drop reference {reference!r}")
    for i in range(len(scores) - 1):
        if _drop_at(scores, i, threshold, reference):
            return i, StopReason.THRESHOLD_DROP
    return len(scores) - 1, StopReason.SWEEP_EXHAUSTED


def lambda_grid(max_lambda: float = 1.0, step: float = DEFAULT_STEP) -> list:
    if step <= 0 or max_lambda < 0:
        raise ValueError("step must be positive and max_lambda non-negative")
    n = math.floor(max_lambda / step + 1e-9)
    return [round(i * step, 12) for i in range(n + 1)]


def run_sweep(
    train_and_validate,
    max_lambda: float = 1.0,
    step: float = DEFAULT_STEP,
    threshold: float = DEFAULT_THRESHOLD,
    reference: str = "previous",
) -> SweepRecord:
    """Call ``train_and_validate(lam)`` up the grid until the proxy collapses.

    The callback is never invoked past the first point that triggers the
    drop rule.
    """
    record = SweepRecord()
    for lam in lambda_grid(max_lambda, step):
        try:
            score = float(train_and_validate(lam))
        except Exception as exc:
            raise SweepAborted(f"callback failed at lambda={lam}: {exc}", record) from exc
        record.lambda_values.append(lam)
        record.proxy_scores.append(score)
        logger.info("lambda=%.2f proxy=%.3f dB", lam, score)
        n = len(record.proxy_scores)
        if n >= 2 and _drop_at(record.proxy_scores, n - 2, threshold, reference):
            break
    idx, reason = select_lambda(record.proxy_scores, threshold, reference)
    record.selected_lambda = record.lambda_values[idx]
    record.stop_reason = reason
    return record
