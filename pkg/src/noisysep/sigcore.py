"""Vector operations on waveforms.

Every operation treats a waveform as a vector in R^T and computes in
float64 regardless of the on-disk sample format.
"""

from dataclasses import dataclass, field

import numpy as np


class SignalError(ValueError):
    """Base class for invalid waveform arguments."""


class DimensionError(SignalError):
    pass


class DegenerateError(SignalError):
    """Raised when an operation needs a nonzero-energy operand."""


class DomainError(SignalError):
    pass


class ConstructionError(SignalError):
    pass


@dataclass(frozen=True)
class Waveform:
    """Samples plus sample rate; converts to a float64 array via ``np.asarray``."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = as_signal(self.samples)
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        if self.sample_rate <= 0:
            raise SignalError(f"sample rate must be positive, got {self.sample_rate}")

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.samples
        return self.samples.astype(dtype)

    def __len__(self):
        return len(self.samples)


def as_signal(a) -> np.ndarray:
    """Validate ``a`` as a finite, non-empty 1-D float64 vector."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"expected a 1-D signal, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError("signal is empty")
    if not np.all(np.isfinite(arr)):
        raise SignalError("signal contains NaN or Inf")
    return arr


def _pair(a, b):
    a, b = as_signal(a), as_signal(b)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.size} vs {b.size}")
    return a, b


def dot(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.dot(a, b))


def energy(a) -> float:
    a = as_signal(a)
    return float(np.dot(a, a))


def project(target, onto) -> np.ndarray:
    """Orthogonal projection of ``target`` onto the line spanned by ``onto``."""
    target, onto = _pair(target, onto)
    denom = float(np.dot(onto, onto))
    if denom <= 0.0:
        raise DegenerateError("cannot project onto a zero-energy signal")
    return (float(np.dot(target, onto)) / denom) * onto


def db_ratio(numerator_energy: float, denominator_energy: float, floor: float) -> float:
    """``10 log10(num / max(den, floor))``."""
    if numerator_energy < 0 or denominator_energy < 0:
        raise DomainError("energies must be non-negative")
    if not floor > 0:
        raise DomainError("floor must be positive")
    return float(10.0 * np.log10(numerator_energy / max(denominator_energy, floor)))


def normalized_correlation(a, b) -> float:
    a, b = _pair(a, b)
    ea, eb = float(np.dot(a, a)), float(np.dot(b, b))
    if ea <= 0.0 or eb <= 0.0:
        raise DegenerateError("normalized correlation needs nonzero-energy operands")
    return min(1.0, abs(float(np.dot(a, b))) / np.sqrt(ea * eb))


def accumulate(signals) -> np.ndarray:
    """Sum signals left to right in index order.

    The order is fixed so that sums built from the same members are
    bit-identical no matter which caller builds them.
    """
    signals = [as_signal(s) for s in signals]
    if not signals:
        raise DimensionError("nothing to sum")
    total = signals[0].copy()
    for s in signals[1:]:
        if s.shape != total.shape:
            raise DimensionError(f"length mismatch: {s.size} vs {total.size}")
        total += s
    return total


@dataclass(frozen=True)
class ComponentSet:
    """The mutually independent components of one mixture.

    ``clean_sources[k]`` and ``noises[k]`` belong to speaker ``k``.
    """

    clean_sources: list = field(default_factory=list)
    noises: list = field(default_factory=list)
    sample_rate: int = 16000

    def __post_init__(self):
        clean = [as_signal(s) for s in self.clean_sources]
        noises = [as_signal(n) for n in self.noises]
        if len(clean) != len(noises) or not clean:
            raise DimensionError("need K >= 1 clean sources and exactly K noises")
        lengths = {s.size for s in clean + noises}
        if len(lengths) != 1:
            raise DimensionError(f"components differ in length: {sorted(lengths)}")
        object.__setattr__(self, "clean_sources", clean)
        object.__setattr__(self, "noises", noises)

    @property
    def K(self) -> int:
        return len(self.clean_sources)

    @property
    def members(self) -> list:
        """Components in the order s_1, n_1, s_2, n_2, ..."""
        out = []
        for s, n in zip(self.clean_sources, self.noises):
            out += [s, n]
        return out

    def noisy_sources(self) -> list:
        return [s + n for s, n in zip(self.clean_sources, self.noises)]

    def mixture(self) -> np.ndarray:
        return accumulate(self.noisy_sources())


def make_orthogonal_fixture(seed: int, K: int, T: int) -> ComponentSet:
    """Build ``K`` clean sources and ``K`` noises that are exactly orthogonal.

    Each component gets its own disjoint set of real-DFT bins, filled with
    random complex coefficients and inverse transformed; Parseval makes the
    components orthogonal. When ``T`` is too short to give every component
    its own bin, an orthonormal basis from a QR factorisation is used
    instead. All components have unit energy.
    """
    n_comp = 2 * K
    if K < 1 or T < 1 or n_comp > T:
        raise ConstructionError(f"cannot build {n_comp} orthogonal vectors of length {T}")
    rng = np.random.default_rng(seed)
    n_bins = T // 2 + 1
    comps = []
    if n_bins >= n_comp:
        # skip DC and Nyquist when there is room so components stay zero-mean
        usable = np.arange(1, (T - 1) // 2 + 1) if (T - 1) // 2 >= n_comp else np.arange(n_bins)
        owner = np.arange(usable.size) % n_comp
        rng.shuffle(owner)
        for c in range(n_comp):
            spec = np.zeros(n_bins, dtype=np.complex128)
            bins = usable[owner == c]
            spec[bins] = rng.standard_normal(bins.size) + 1j * rng.standard_normal(bins.size)
            comps.append(np.fft.irfft(spec, n=T))
    else:
        q, _ = np.linalg.qr(rng.standard_normal((T, n_comp)))
        comps = [q[:, c].copy() for c in range(n_comp)]
    comps = [c / np.sqrt(np.dot(c, c)) for c in comps]
    return ComponentSet(clean_sources=comps[0::2], noises=comps[1::2])
