"""Utterance-level permutation-invariant wrapping of the losses."""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .loss import LossConfig, LossFamily, GradientUndefinedError, loss_grad, loss_value

MAX_SPEAKERS = 4


class CapacityError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class PitResult:
    """``best_permutation[j]`` is the reference index assigned to estimate ``j``."""

    best_permutation: tuple
    per_source_values: tuple
    mean_value: float


def best_assignment(scores):
    """Pick the permutation maximising the mean of ``scores[j, perm[j]]``.

    ``scores[j, r]`` scores estimate ``j`` against reference ``r``. Candidates
    are visited in lexicographic order and only a strictly better mean
    replaces the incumbent, so exact ties resolve to the first permutation.
    """
    scores = np.asarray(scores, dtype=np.float64)
    K = scores.shape[0]
    best, best_mean = None, -np.inf
    for perm in itertools.permutations(range(K)):
        # fsum is exactly rounded, so relabeling the estimates cannot move the mean
        mean = math.fsum(scores[j, perm[j]] for j in range(K)) / K
        if best is None or mean > best_mean:
            best, best_mean = perm, mean
    return best, best_mean


def _check(references, estimates, noise_estimate, cfg):
    K = len(references)
    if K < 1 or len(estimates) != K:
        raise ConfigurationError(f"need K >= 1 references and as many estimates, got {K} and {len(estimates)}")
    if K > MAX_SPEAKERS:
        raise CapacityError(f"K={K} exceeds the enumeration bound of {MAX_SPEAKERS}")
    if cfg.family is LossFamily.ESSER and noise_estimate is None:
        raise ConfigurationError("ESSER needs a noise estimate")


def pair_scores(references, estimates, noise_estimate, cfg: LossConfig) -> np.ndarray:
    K = len(references)
    scores = np.empty((K, K))
    for j in range(K):
        for r in range(K):
            scores[j, r] = loss_value(cfg.family, references[r], estimates[j], noise_estimate, cfg)
    return scores


def pit_apply(references, estimates, noise_estimate=None, cfg: LossConfig = LossConfig()) -> PitResult:
    """Evaluate the configured loss under every assignment and keep the best.

    The noise estimate is shared by every source term and never permuted.
    """
    _check(references, estimates, noise_estimate, cfg)
    scores = pair_scores(references, estimates, noise_estimate, cfg)
    perm, mean = best_assignment(scores)
    values = tuple(float(scores[j, perm[j]]) for j in range(len(perm)))
    return PitResult(best_permutation=perm, per_source_values=values, mean_value=mean)


def pit_grad(references, estimates, noise_estimate=None, cfg: LossConfig = LossConfig(), on_floor="raise"):
    """Gradient of ``pit_apply(...).mean_value`` under the fixed best permutation.

    Returns ``(result, estimate_grads, noise_grad)``; ``noise_grad`` is None
    unless the family is ESSER. With ``on_floor="zero"`` a term whose
    denominator is floored contributes a zero gradient (the capped loss is
    flat there) instead of raising.
    """
    result = pit_apply(references, estimates, noise_estimate, cfg)
    K = len(references)
    grads = []
    noise_grad = None
    if cfg.family is LossFamily.ESSER:
        noise_grad = np.zeros(np.asarray(noise_estimate).shape)
    for j, r in enumerate(result.best_permutation):
        try:
            g, gn = loss_grad(cfg.family, references[r], estimates[j], noise_estimate, cfg)
        except GradientUndefinedError:
            if on_floor != "zero":
                raise
            g, gn = np.zeros(np.asarray(estimates[j]).shape), None
        grads.append(g / K)
        if gn is not None:
            noise_grad += gn / K
    return result, grads, noise_grad
