"""SDR-family objectives with analytic gradients.

All values are in dB and meant to be maximised; training code negates them.
Each ratio's denominator is floored at ``epsilon`` times the energy that sets
the ratio's scale, which caps values at ``10 log10(1 / epsilon)`` (120 dB for
the default).
"""

import enum
from dataclasses import dataclass

import numpy as np

from .sigcore import DegenerateError, DomainError, _pair, as_signal, db_ratio, project

DB = 10.0 / np.log(10.0)
DEFAULT_EPSILON = 1e-12
MAX_LAMBDA = 2.0


class LossFamily(str, enum.Enum):
    SDR_NOISY = "sdr_noisy"
    SI_SDR = "si_sdr"
    ESSER = "esser"


class GradientUndefinedError(DomainError):
    """The denominator sits on its floor, where the loss is flat and capped."""


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.0
    epsilon: float = DEFAULT_EPSILON
    family: LossFamily = LossFamily.SI_SDR

    def __post_init__(self):
        object.__setattr__(self, "family", LossFamily(self.family))
        if not 0.0 <= self.lam <= MAX_LAMBDA:
            raise ValueError(f"lambda must lie in [0, {MAX_LAMBDA}], got {self.lam}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def cap_db(self) -> float:
        return 10.0 * np.log10(1.0 / self.epsilon)


@dataclass(frozen=True)
class LossBreakdown:
    """ESSER value together with the energies it was built from."""

    value: float
    numerator_energy: float
    denominator_energy: float
    residual_energy: float
    discount_energy: float
    ortho_penalty_energy: float
    floor: float

    @property
    def floored(self) -> bool:
        return self.denominator_energy <= self.floor


def sdr_noisy(s_noisy, s_hat, epsilon: float = DEFAULT_EPSILON) -> float:
    """Plain SDR of an estimate against the noisy ground truth."""
    s_noisy, s_hat = _pair(s_noisy, s_hat)
    ref = float(np.dot(s_noisy, s_noisy))
    if ref <= 0.0:
        raise DomainError("ground truth has zero energy")
    err = s_noisy - s_hat
    return db_ratio(ref, float(np.dot(err, err)), epsilon * ref)


def sdr_noisy_grad(s_noisy, s_hat, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    s_noisy, s_hat = _pair(s_noisy, s_hat)
    ref = float(np.dot(s_noisy, s_noisy))
    if ref <= 0.0:
        raise DomainError("ground truth has zero energy")
    err = s_noisy - s_hat
    den = float(np.dot(err, err))
    if den <= epsilon * ref:
        raise GradientUndefinedError("SDR denominator is floored")
    return DB * 2.0 * err / den


def _si_sdr_parts(reference, estimate):
    reference, estimate = _pair(reference, estimate)
    ref_e = float(np.dot(reference, reference))
    est_e = float(np.dot(estimate, estimate))
    if ref_e <= 0.0 or est_e <= 0.0:
        raise DomainError("SI-SDR needs nonzero-energy operands")
    target = (float(np.dot(estimate, reference)) / ref_e) * reference
    residual = estimate - target
    return target, residual, est_e


def si_sdr(reference, estimate, epsilon: float = DEFAULT_EPSILON) -> float:
    """Scale-invariant SDR in dB, clipped to +-10 log10(1/epsilon).

    The floor is relative to the estimate energy, so an estimate orthogonal
    to the reference scores the negative cap rather than -inf.
    """
    target, residual, est_e = _si_sdr_parts(reference, estimate)
    floor = epsilon * est_e
    num = max(float(np.dot(target, target)), floor)
    return db_ratio(num, float(np.dot(residual, residual)), floor)


def si_sdr_grad(reference, estimate, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Gradient of :func:`si_sdr` with respect to ``estimate``.

    Orthogonal to ``estimate`` because the value is scale invariant.
    """
    target, residual, est_e = _si_sdr_parts(reference, estimate)
    floor = epsilon * est_e
    num = float(np.dot(target, target))
    den = float(np.dot(residual, residual))
    if den <= floor or num <= floor:
        raise GradientUndefinedError("SI-SDR is at its cap")
    return DB * 2.0 * (target / num - residual / den)


def mixture_scale(x, estimate) -> np.ndarray:
    """Rescale ``estimate`` by projecting the mixture onto it."""
    return project(x, estimate)


def mixture_scale_vjp(x, estimate, cotangent) -> np.ndarray:
    """Pull a cotangent of ``mixture_scale(x, estimate)`` back to ``estimate``."""
    x, estimate = _pair(x, estimate)
    return _proj_vjp(as_signal(cotangent), x, estimate)[1]


def _proj_coef(n, u):
    uu = float(np.dot(u, u))
    if uu <= 0.0:
        return 0.0, 0.0
    return float(np.dot(n, u)) / uu, uu


def _proj_vjp(g, n, u):
    """VJP of ``P(n, u) = <n,u>/<u,u> u``; returns (d/dn, d/du)."""
    c, uu = _proj_coef(n, u)
    if uu == 0.0:
        return np.zeros_like(n), np.zeros_like(u)
    gu = float(np.dot(g, u)) / uu
    return gu * u, gu * n + c * g - 2.0 * c * gu * u


def _esser_terms(s_hat, n_hat, s_noisy, lam):
    e = s_noisy - s_hat
    ce, ee = _proj_coef(n_hat, e)
    # zero residual: the discount projection is undefined and taken as 0
    discount = lam * ce * e if ee > 0.0 else np.zeros_like(e)
    cs, _ = _proj_coef(n_hat, s_hat)
    ortho = cs * s_hat
    return e, discount, ortho


def esser(s_hat, n_hat, s_noisy, cfg: LossConfig) -> LossBreakdown:
    """Estimated-source-to-separation-error ratio for one source.

    ``s_hat`` and ``n_hat`` are expected to be rescaled already (see
    :func:`mixture_scale`); no scaling happens here.
    """
    s_hat, s_noisy = _pair(s_hat, s_noisy)
    s_hat, n_hat = _pair(s_hat, n_hat)
    num = float(np.dot(s_hat, s_hat))
    if num <= 0.0:
        raise DomainError("source estimate has zero energy")
    e, discount, ortho = _esser_terms(s_hat, n_hat, s_noisy, cfg.lam)
    d = e - discount + ortho
    den = float(np.dot(d, d))
    floor = cfg.epsilon * num
    return LossBreakdown(
        value=db_ratio(num, den, floor),
        numerator_energy=num,
        denominator_energy=den,
        residual_energy=float(np.dot(e, e)),
        discount_energy=float(np.dot(discount, discount)),
        ortho_penalty_energy=float(np.dot(ortho, ortho)),
        floor=floor,
    )


def esser_grad(s_hat, n_hat, s_noisy, cfg: LossConfig):
    """Analytic gradient of the ESSER value w.r.t. ``s_hat`` and ``n_hat``."""
    s_hat, s_noisy = _pair(s_hat, s_noisy)
    s_hat, n_hat = _pair(s_hat, n_hat)
    num = float(np.dot(s_hat, s_hat))
    if num <= 0.0:
        raise DomainError("source estimate has zero energy")
    e, discount, ortho = _esser_terms(s_hat, n_hat, s_noisy, cfg.lam)
    d = e - discount + ortho
    den = float(np.dot(d, d))
    if den <= cfg.epsilon * num:
        raise GradientUndefinedError("ESSER denominator is floored; perturb inputs or lower lambda")

    # pull back g = d through d(s_hat, n_hat); e = s_noisy - s_hat
    gn_s, gu_s = _proj_vjp(d, n_hat, s_hat)
    gn_e, gu_e = _proj_vjp(d, n_hat, e)
    vjp_s = -d + cfg.lam * gu_e + gu_s
    vjp_n = -cfg.lam * gn_e + gn_s

    grad_s = DB * (2.0 * s_hat / num - 2.0 * vjp_s / den)
    grad_n = -DB * 2.0 * vjp_n / den
    return grad_s, grad_n


def loss_value(family, reference, estimate, noise_estimate, cfg: LossConfig) -> float:
    """Value of the configured family for one (reference, estimate) pair."""
    family = LossFamily(family)
    if family is LossFamily.SI_SDR:
        return si_sdr(reference, estimate, cfg.epsilon)
    if family is LossFamily.SDR_NOISY:
        return sdr_noisy(reference, estimate, cfg.epsilon)
    return esser(estimate, noise_estimate, reference, cfg).value


def loss_grad(family, reference, estimate, noise_estimate, cfg: LossConfig):
    """(grad wrt estimate, grad wrt noise estimate or None)."""
    family = LossFamily(family)
    if family is LossFamily.SI_SDR:
        return si_sdr_grad(reference, estimate, cfg.epsilon), None
    if family is LossFamily.SDR_NOISY:
        return sdr_noisy_grad(reference, estimate, cfg.epsilon), None
    return esser_grad(estimate, noise_estimate, reference, cfg)


__all__ = [
    "DegenerateError",
    "LossBreakdown",
    "LossConfig",
    "LossFamily",
    "GradientUndefinedError",
    "esser",
    "esser_grad",
    "mixture_scale",
    "mixture_scale_vjp",
    "sdr_noisy",
    "sdr_noisy_grad",
    "si_sdr",
    "si_sdr_grad",
]
