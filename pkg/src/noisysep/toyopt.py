"""Desk-scale mask separator trained directly on SI-SDR or ESSER.

A simplex-constrained time-frequency mask over K sources plus one noise
output is fitted to a single trial by fixed-step gradient ascent with a
fixed per-bin step scale. Speech surrogates are sparse tone bursts in
disjoint frequency bands over a faint broadband floor, so masks can split
them up to about 30 dB. The inseparable noises form a Hilbert pair: every
real mask correlates equally with both and cannot split them.
"""

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .evaluation import eval_noise_estimate, eval_separation, si_sdri
from .loss import LossConfig, LossFamily, mixture_scale, mixture_scale_vjp
from .mixer import CLEAN, PURE_NOISE, DatasetConfig, OracleMode, Trial, build_trial
from .pit import pit_apply, pit_grad
from .sigcore import ConstructionError

logger = logging.getLogger(__name__)

FRAME = 256
HOP = 128
SAMPLE_RATE = 16000
DEFAULT_T = 8192
DEFAULT_STEPS = 500
# training cap of 30 dB; beyond it the log-ratio gets too stiff for a fixed step
TRAIN_EPSILON = 1e-3
DEFAULT_STEP_SIZE = {LossFamily.SI_SDR: 10.0, LossFamily.SDR_NOISY: 10.0, LossFamily.ESSER: 40.0}
VALIDATION_SEED_OFFSET = 10_000
# broadband floor under each speech surrogate, dB below its tonal part;
# it keeps even oracle masks near 30 dB, like a separator of finite capacity
SPEECH_FLOOR_DB = 26.0


class Separability(str, enum.Enum):
    SEPARABLE_SPEECH = "separable"
    INSEPARABLE_NOISE = "inseparable"


class DivergenceError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


# -- framing -------------------------------------------------------------------


class Stft:
    """Square-root Hann STFT at 50% overlap; synthesis is the exact inverse.

    ``synth(analyse(x)) == x``, and ``analyse`` is the adjoint of ``synth``
    under the real inner product weighted by :attr:`bin_weights`.
    """

    def __init__(self, length: int, frame: int = FRAME, hop: int = HOP):
        if frame != 2 * hop:
            raise ValueError("frame must be twice the hop")
        if length < frame:
            raise ConstructionError(f"signal of {length} samples is shorter than one frame")
        self.length, self.frame, self.hop = length, frame, hop
        self.window = np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * np.arange(frame) / frame))
        self.n_frames = -(-(length + hop) // hop)
        self.padded = (self.n_frames + 1) * hop
        idx = np.arange(self.n_frames)[:, None] * hop + np.arange(frame)[None, :]
        self._idx = idx
        self.n_bins = frame // 2 + 1
        w = np.full(self.n_bins, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        self.bin_weights = w / frame

    def analyse(self, x) -> np.ndarray:
        buf = np.zeros(self.padded)
        buf[self.hop : self.hop + self.length] = x
        return np.fft.rfft(buf[self._idx] * self.window, axis=-1)

    def synth(self, spec) -> np.ndarray:
        frames = np.fft.irfft(spec, n=self.frame, axis=-1) * self.window
        lead = spec.shape[:-2]
        buf = np.zeros(lead + (self.padded,))
        for i in range(self.n_frames):
            buf[..., i * self.hop : i * self.hop + self.frame] += frames[..., i, :]
        return buf[..., self.hop : self.hop + self.length]


# -- model ---------------------------------------------------------------------


@dataclass
class MaskModel:
    """Per-bin softmax masks over K speaker outputs and one noise output."""

    stft: Stft
    mix_spec: np.ndarray
    logits: np.ndarray

    @classmethod
    def for_mixture(cls, mixture, K: int, seed: int = 0, init_scale: float = 0.1, frame: int = FRAME, hop: int = HOP):
        stft = Stft(len(mixture), frame, hop)
        spec = stft.analyse(np.asarray(mixture, dtype=np.float64))
        # equal masks make every output identical; break the tie from the seed
        rng = np.random.default_rng([seed, 0x1A5C])
        return cls(stft, spec, init_scale * rng.standard_normal((K + 1,) + spec.shape))

    def step_scale(self) -> np.ndarray:
        """Fixed per-bin rescaling of the logit coordinates.

        Logit gradients are proportional to each bin's share of the mixture
        energy; dividing by that share lets quiet noise bins move as fast as
        loud speech bins.
        """
        power = self.stft.bin_weights * np.abs(self.mix_spec) ** 2
        mean = power.mean()
        return mean / (power + 1e-2 * mean)

    def masks(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=0, keepdims=True)
        m = np.exp(z)
        return m / m.sum(axis=0, keepdims=True)

    def outputs(self, masks=None) -> np.ndarray:
        """Time-domain outputs, shape (K + 1, T); the last row is the noise."""
        if masks is None:
            masks = self.masks()
        return self.stft.synth(masks * self.mix_spec)

    def logits_vjp(self, grad_outputs, masks=None) -> np.ndarray:
        """Pull gradients on the outputs back to the logits."""
        if masks is None:
            masks = self.masks()
        G = np.stack([self.stft.analyse(g) for g in grad_outputs])
        gm = self.stft.bin_weights * np.real(self.mix_spec * np.conj(G))
        return masks * (gm - np.sum(masks * gm, axis=0, keepdims=True))


# -- scenarios -------------------------------------------------------------------


def speaker_bands(n_bins: int = FRAME // 2 + 1, K: int = 2, width: int = 10, guard: int = 6):
    """STFT-bin bands owned by each speaker, interleaved across the spectrum.

    Returns ``(bands, tone_bins)``; ``bands[k]`` lists (lo, hi) bin ranges
    for speaker ``k`` and the guard between bands is split at its midpoint.
    """
    bands = [[] for _ in range(K)]
    lo, k = 4, 0
    while lo + width <= n_bins - 4:
        bands[k].append((lo, lo + width))
        lo += width + guard
        k = (k + 1) % K
    if any(not b for b in bands):
        raise ConstructionError("not enough bins to give every speaker a band")
    return bands


def band_mask(n_bins: int, bands, K: int, guard: int = 6) -> np.ndarray:
    """Binary (K, n_bins) mask giving each bin to the speaker whose band is nearest."""
    centres, owners = [], []
    for k, bl in enumerate(bands):
        for lo, hi in bl:
            centres.append((lo + hi - 1) / 2)
            owners.append(k)
    centres = np.asarray(centres)
    nearest = np.argmin(np.abs(np.arange(n_bins)[:, None] - centres[None, :]), axis=1)
    mask = np.zeros((K, n_bins))
    mask[np.asarray(owners)[nearest], np.arange(n_bins)] = 1.0
    return mask


def _speech_surrogate(rng, T, bands, frame=FRAME, hop=HOP):
    """Sparse tone bursts whose tones sit mid-band in the given bin ranges."""
    out = np.zeros(T)
    t = np.arange(T)
    n_bursts = max(2, T // 2048)
    for _ in range(n_bursts):
        length = int(rng.integers(4 * hop, 10 * hop))
        start = int(rng.integers(0, max(1, T - length)))
        env = np.zeros(T)
        seg = np.hanning(length)
        env[start : start + length] = seg[: T - start]
        for lo, hi in [bands[i] for i in rng.choice(len(bands), size=min(2, len(bands)), replace=False)]:
            centre = (lo + hi) / 2 + rng.uniform(-1.5, 1.5)
            f = centre / frame
            out += env * rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return out


def _hilbert_pair(rng, T):
    """Two flat-spectrum noises where the second is the Hilbert transform of the first."""
    n_bins = T // 2 + 1
    spec = np.exp(2j * np.pi * rng.uniform(size=n_bins))
    spec[0] = 0.0
    spec[-1] = 0.0
    a = np.fft.irfft(spec, n=T)
    b = np.fft.irfft(-1j * spec, n=T)
    return a, b


def _band_noises(rng, T, K):
    """Noises on disjoint halves of the spectrum; masks can split these."""
    n_bins = T // 2 + 1
    edges = np.linspace(1, n_bins - 1, K + 1).astype(int)
    out = []
    for k in range(K):
        spec = np.zeros(n_bins, dtype=np.complex128)
        spec[edges[k] : edges[k + 1]] = np.exp(2j * np.pi * rng.uniform(size=edges[k + 1] - edges[k]))
        out.append(np.fft.irfft(spec, n=T))
    return out


def _orthogonalise(vectors):
    """Gram-Schmidt in the given order, restoring each vector's energy."""
    basis, out = [], []
    for v in vectors:
        w = v.copy()
        for _ in range(2):
            for b in basis:
                w -= np.dot(w, b) * b
        norm = np.sqrt(np.dot(w, w))
        basis.append(w / norm)
        out.append(w * np.sqrt(np.dot(v, v)) / norm)
    return out


def synth_scenario(
    seed: int,
    T: int = DEFAULT_T,
    snr_db=0.0,
    separability=Separability.INSEPARABLE_NOISE,
    oracle_mode=OracleMode.NOISY_ORACLE,
    K: int = 2,
) -> Trial:
    """Two-speaker toy trial with exactly orthogonal components."""
    separability = Separability(separability)
    if T < 4 * FRAME:
        raise ConstructionError(f"T={T} is too short for framing")
    rng = np.random.default_rng([seed, 0x5EED])
    bands = speaker_bands(FRAME // 2 + 1, K)
    speech = []
    for k in range(K):
        tones = _speech_surrogate(rng, T, bands[k])
        floor = rng.standard_normal(T)
        speech.append(tones / np.linalg.norm(tones) + 10 ** (-SPEECH_FLOOR_DB / 20) * floor / np.linalg.norm(floor))
    if separability is Separability.INSEPARABLE_NOISE:
        if K != 2:
            raise ConstructionError("inseparable noise scenarios are built for K=2")
        noises = list(_hilbert_pair(rng, T))
    else:
        noises = _band_noises(rng, T, K)
    comps = _orthogonalise([s / np.sqrt(np.dot(s, s)) for s in speech] + [n / np.sqrt(np.dot(n, n)) for n in noises])
    cfg = DatasetConfig(snr_db=snr_db, oracle_mode=oracle_mode, sample_rate=SAMPLE_RATE)
    tid = f"{separability.value}-{seed}"
    return build_trial(comps[:K], comps[K:], cfg, trial_id=tid)


# -- optimisation ----------------------------------------------------------------


def train_loss(family=LossFamily.SI_SDR, lam: float = 0.0) -> LossConfig:
    return LossConfig(lam=lam, epsilon=TRAIN_EPSILON, family=family)


@dataclass(frozen=True)
class ToyRunConfig:
    """Optimizer settings; ``step_size=None`` picks the loss family's default.

    ``snr_db`` and ``oracle_mode`` only label the run; the trial passed to
    :func:`optimize` decides what is actually fitted.
    """

    loss: LossConfig = field(default_factory=train_loss)
    steps: int = DEFAULT_STEPS
    step_size: float = None
    seed: int = 0
    snr_db: object = 0.0
    oracle_mode: OracleMode = OracleMode.NOISY_ORACLE

    def __post_init__(self):
        if self.step_size is None:
            object.__setattr__(self, "step_size", DEFAULT_STEP_SIZE[self.loss.family])
        if self.steps < 1 or not self.step_size > 0:
            raise ValueError("steps must be >= 1 and step_size > 0")


def _objective(model: MaskModel, trial: Trial, cfg: LossConfig, with_grad=True):
    """Mean PIT value over the K speaker outputs and its logit gradient."""
    masks = model.masks()
    outs = model.outputs(masks)
    K = trial.K
    targets = trial.targets
    x = trial.mixture
    if cfg.family is LossFamily.ESSER:
        scaled = [mixture_scale(x, o) for o in outs]
        if not with_grad:
            return pit_apply(targets, scaled[:K], scaled[K], cfg), outs, None
        res, g_est, g_noise = pit_grad(targets, scaled[:K], scaled[K], cfg, on_floor="zero")
        g_all = [mixture_scale_vjp(x, o, g) for o, g in zip(outs, g_est + [g_noise])]
    else:
        if not with_grad:
            return pit_apply(targets, list(outs[:K]), None, cfg), outs, None
        res, g_est, _ = pit_grad(targets, list(outs[:K]), None, cfg, on_floor="zero")
        g_all = g_est + [np.zeros(len(x))]
    return res, outs, model.logits_vjp(np.stack(g_all), masks)


def optimize(trial: Trial, cfg: ToyRunConfig, model: MaskModel = None):
    """Fit masks by fixed-step gradient ascent on the configured dB objective.

    Returns ``(estimates, noise_estimate, loss_trace)`` where ``loss_trace``
    holds the negated objective before each step.
    """
    if model is None:
        model = MaskModel.for_mixture(trial.mixture, trial.K, seed=cfg.seed)
    scale = model.step_scale()
    trace = []
    for step in range(cfg.steps):
        res, _, grad = _objective(model, trial, cfg.loss)
        loss = -res.mean_value
        trace.append(loss)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite loss at step {step}", trace)
        with np.errstate(over="ignore", invalid="ignore"):
            model.logits += cfg.step_size * scale * grad
        if not np.all(np.isfinite(model.logits)):
            raise DivergenceError(f"parameters became non-finite at step {step}", trace)
    logger.debug("%s: %d steps, loss %.3f -> %.3f", trial.trial_id, cfg.steps, trace[0], trace[-1])
    outs = model.outputs()
    return [outs[k] for k in range(trial.K)], outs[trial.K], trace


# -- experiments -------------------------------------------------------------------


def noisy_oracle_proxy(trial: Trial, estimates) -> float:
    """Mean PIT SI-SDR against the trial's per-speaker training targets."""
    return pit_apply(trial.targets, list(estimates), None, LossConfig()).mean_value


def validation_proxy(trials, lam: float, steps: int = None, seed: int = 0) -> float:
    """Train ESSER at ``lam`` on each trial and average the noisy-oracle proxy."""
    scores = []
    for trial in trials:
        if trial.oracle_mode is not OracleMode.NOISY_ORACLE:
            raise ValueError(f"trial {trial.trial_id}: lambda tuning needs noisy-oracle trials")
        cfg = ToyRunConfig(loss=train_loss(LossFamily.ESSER, lam), steps=steps or DEFAULT_STEPS, seed=seed)
        estimates, _, _ = optimize(trial, cfg)
        scores.append(noisy_oracle_proxy(trial, estimates))
    return float(np.mean(scores))


def tune_lambda(snr_db, seed: int = VALIDATION_SEED_OFFSET, n_trials: int = 1, T: int = DEFAULT_T,
                steps: int = DEFAULT_STEPS, **sweep_kw):
    """Run the lambda sweep on freshly drawn noisy-oracle validation scenarios."""
    from .tuner import run_sweep

    trials = [
        synth_scenario(seed + i, T, snr_db, Separability.INSEPARABLE_NOISE, OracleMode.NOISY_ORACLE)
        for i in range(n_trials)
    ]
    return run_sweep(lambda lam: validation_proxy(trials, lam, steps=steps, seed=seed), **sweep_kw)


def _mean_clean_si_sdr(trial, estimates) -> float:
    return float(np.mean(eval_separation(trial, estimates).per_source_si_sdr_db))


def paradigm_experiment(seed: int, snr_db, lam: float = None, T: int = DEFAULT_T, steps: int = DEFAULT_STEPS) -> dict:
    """Compare noisy-oracle SI-SDR, clean-oracle SI-SDR and ESSER on matched trials.

    All three arms see the same mixture. Every arm is scored by SI-SDR
    against the clean references. ``lam=None`` tunes the ESSER weight on a
    separate validation scenario first.
    """
    sweep = None
    if lam is None:
        sweep = tune_lambda(snr_db, seed=seed + VALIDATION_SEED_OFFSET, T=T, steps=steps)
        lam = sweep.selected_lambda
    noisy = synth_scenario(seed, T, snr_db, Separability.INSEPARABLE_NOISE, OracleMode.NOISY_ORACLE)
    clean = synth_scenario(seed, T, snr_db, Separability.INSEPARABLE_NOISE, OracleMode.CLEAN_ORACLE)

    sisdr_cfg = ToyRunConfig(loss=train_loss(LossFamily.SI_SDR), steps=steps, seed=seed)
    noisy_est, _, _ = optimize(noisy, sisdr_cfg)
    clean_est, _, _ = optimize(clean, sisdr_cfg)
    esser_cfg = ToyRunConfig(loss=train_loss(LossFamily.ESSER, lam), steps=steps, seed=seed)
    esser_est, esser_noise, _ = optimize(noisy, esser_cfg)

    record = {
        "seed": seed,
        "snr_db": noisy.snr_db,
        "lambda": lam,
        "noisy_oracle_si_sdr": _mean_clean_si_sdr(noisy, noisy_est),
        "clean_oracle_si_sdr": _mean_clean_si_sdr(clean, clean_est),
        "esser_si_sdr": _mean_clean_si_sdr(noisy, esser_est),
        "esser_noise_si_sdri": eval_noise_estimate(noisy, esser_noise),
    }
    if sweep is not None:
        record["sweep"] = sweep.as_dict()
    return record


def run_record(scenario="inseparable", snr_db=0.0, family="si_sdr", lam=0.0, steps=None, seed=0,
               oracle_mode="noisy", step_size=None, T: int = DEFAULT_T) -> dict:
    """One toy optimisation summarised as a JSON-ready record."""
    trial = synth_scenario(seed, T, snr_db, scenario, oracle_mode)
    cfg = ToyRunConfig(loss=train_loss(family, lam), steps=steps or DEFAULT_STEPS, step_size=step_size, seed=seed)
    estimates, n_hat, trace = optimize(trial, cfg)
    record = {
        "scenario": Separability(scenario).value,
        "snr_db": trial.snr_db,
        "oracle_mode": trial.oracle_mode.value,
        "loss": cfg.loss.family.value,
        "lambda": cfg.loss.lam,
        "steps": cfg.steps,
        "step_size": cfg.step_size,
        "seed": seed,
        "final_loss": trace[-1],
        "loss_trace": trace,
        "noisy_oracle_proxy": noisy_oracle_proxy(trial, estimates),
    }
    if trial.snr_db == PURE_NOISE:
        record["si_sdri_db"] = si_sdri(trial.targets, estimates, trial.mixture)
    else:
        score = eval_separation(trial, estimates)
        record["clean_si_sdr_db"] = score.per_source_si_sdr_db
        record["permutation"] = list(score.permutation)
    if trial.snr_db not in (CLEAN, PURE_NOISE):
        record["noise_si_sdri_db"] = eval_noise_estimate(trial, n_hat)
    return record
