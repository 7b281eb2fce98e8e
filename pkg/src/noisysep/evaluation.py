"""Clean-reference scoring of separation outputs."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .loss import DEFAULT_EPSILON, si_sdr
from .mixer import Trial
from .pit import best_assignment
from .sigcore import as_signal

CAP_DB = 10.0 * np.log10(1.0 / DEFAULT_EPSILON)


def _score(reference, estimate, epsilon=DEFAULT_EPSILON):
    """SI-SDR that flags capped or degenerate values instead of raising."""
    reference, estimate = as_signal(reference), as_signal(estimate)
    if not np.dot(estimate, estimate) > 0.0:
        return -10.0 * np.log10(1.0 / epsilon), True
    value = si_sdr(reference, estimate, epsilon)
    cap = 10.0 * np.log10(1.0 / epsilon)
    return value, abs(value) >= cap - 1e-9


@dataclass
class SeparationScore:
    per_source_si_sdr_db: list
    permutation: tuple
    flagged: bool


def eval_separation(trial: Trial, estimates, epsilon=DEFAULT_EPSILON) -> SeparationScore:
    """Permutation-invariant SI-SDR of ``estimates`` against the clean references.

    Raw values, not improvements. ``permutation[j]`` is the clean reference
    matched to estimate ``j``.
    """
    refs = trial.clean_refs
    K = len(refs)
    if len(estimates) != K:
        raise ValueError(f"expected {K} estimates, got {len(estimates)}")
    scores = np.empty((K, K))
    flags = np.zeros((K, K), dtype=bool)
    for j in range(K):
        for r in range(K):
            scores[j, r], flags[j, r] = _score(refs[r], estimates[j], epsilon)
    perm, _ = best_assignment(scores)
    values = [float(scores[j, perm[j]]) for j in range(K)]
    flagged = bool(any(flags[j, perm[j]] for j in range(K)))
    return SeparationScore(values, tuple(perm), flagged)


def eval_noise_estimate(trial: Trial, n_hat, epsilon=DEFAULT_EPSILON):
    """SI-SDR improvement of ``n_hat`` over the mixture, against the summed noise.

    Returns None when the trial carries no noise.
    """
    noise = trial.summed_noise
    if not np.dot(noise, noise) > 0.0:
        return None
    return _score(noise, n_hat, epsilon)[0] - _score(noise, trial.mixture, epsilon)[0]


def si_sdri(references, estimates, mixture, epsilon=DEFAULT_EPSILON):
    """Per-source PIT SI-SDR improvement over the unprocessed mixture."""
    K = len(references)
    scores = np.array([[_score(references[r], estimates[j], epsilon)[0] for r in range(K)] for j in range(K)])
    perm, _ = best_assignment(scores)
    return [float(scores[j, perm[j]] - _score(references[perm[j]], mixture, epsilon)[0]) for j in range(K)]


# -- reports -------------------------------------------------------------------


METRICS = ("si_sdr_db", "noise_si_sdri_db")


def _stats(values):
    if not values:
        return {"mean": None, "median": None, "std": None, "count": 0}
    arr = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(np.mean(arr)),
        "median": float(np.median(arr)),
        "std": float(np.std(arr)),
        "count": int(arr.size),
    }


@dataclass
class EvalReport:
    """Per-trial rows plus aggregates that are always recomputed from them."""

    rows: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def add(self, trial_id, score: SeparationScore, noise_si_sdri=None):
        self.rows.append(
            {
                "trial_id": str(trial_id),
                "per_source_si_sdr_db": [float(v) for v in score.per_source_si_sdr_db],
                "permutation": [int(p) for p in score.permutation],
                "noise_si_sdri_db": None if noise_si_sdri is None else float(noise_si_sdri),
                "flagged": bool(score.flagged),
            }
        )
        self.rows.sort(key=lambda r: r["trial_id"])

    @property
    def aggregates(self) -> dict:
        speech = [v for r in self.rows for v in r["per_source_si_sdr_db"]]
        noise = [r["noise_si_sdri_db"] for r in self.rows if r["noise_si_sdri_db"] is not None]
        return {"si_sdr_db": _stats(speech), "noise_si_sdri_db": _stats(noise)}


CSV_FIELDS = ("trial_id", "per_source_si_sdr_db", "permutation", "noise_si_sdri_db", "flagged")


def write_report(report: EvalReport, path, fmt=None) -> None:
    """Write ``report`` as JSON lines (``jsonl``) or comma-separated (``csv``).

    Floats are written with ``repr`` so re-reading is exact.
    """
    fmt = fmt or ("csv" if str(path).endswith(".csv") else "jsonl")
    if fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"type": "config", **report.config}, sort_keys=True) + "\n")
            for row in report.rows:
                fh.write(json.dumps({"type": "trial", **row}, sort_keys=True) + "\n")
            fh.write(json.dumps({"type": "aggregate", **report.aggregates}, sort_keys=True) + "\n")
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_FIELDS)
            for row in report.rows:
                writer.writerow(
                    [
                        row["trial_id"],
                        ";".join(repr(v) for v in row["per_source_si_sdr_db"]),
                        ";".join(str(p) for p in row["permutation"]),
                        "" if row["noise_si_sdri_db"] is None else repr(row["noise_si_sdri_db"]),
                        int(row["flagged"]),
                    ]
                )
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def read_report(path, fmt=None) -> EvalReport:
    fmt = fmt or ("csv" if str(path).endswith(".csv") else "jsonl")
    report = EvalReport()
    if fmt == "jsonl":
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                kind = rec.pop("type")
                if kind == "config":
                    report.config = rec
                elif kind == "trial":
                    report.rows.append(rec)
        return report
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            report.rows.append(
                {
                    "trial_id": rec["trial_id"],
                    "per_source_si_sdr_db": [float(v) for v in rec["per_source_si_sdr_db"].split(";") if v],
                    "permutation": [int(p) for p in rec["permutation"].split(";") if p],
                    "noise_si_sdri_db": float(rec["noise_si_sdri_db"]) if rec["noise_si_sdri_db"] else None,
                    "flagged": bool(int(rec["flagged"])),
                }
            )
    return report
