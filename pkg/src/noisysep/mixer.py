"""Noisy two-speaker mixture fabrication.

Each clean source gets its own noise, scaled to a target SNR relative to
that source, and the trial is emitted either with noisy per-speaker oracles
or with clean oracles plus one summed noise.
"""

import enum
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sigcore import DomainError, accumulate, as_signal
from .wavio import WavFormatError, read_wav, write_wav

logger = logging.getLogger(__name__)

CLEAN = "clean"
PURE_NOISE = "pure-noise"
STANDARD_SNRS = (25.0, 20.0, 15.0, 10.0, 5.0, 0.0, -5.0)


class OracleMode(str, enum.Enum):
    CLEAN_ORACLE = "clean"
    NOISY_ORACLE = "noisy"


@dataclass(frozen=True)
class DatasetConfig:
    snr_db: object = 0.0
    oracle_mode: OracleMode = OracleMode.NOISY_ORACLE
    sample_rate: int = 16000
    truncation: str = "min"

    def __post_init__(self):
        object.__setattr__(self, "oracle_mode", OracleMode(self.oracle_mode))
        object.__setattr__(self, "snr_db", parse_snr(self.snr_db))
        if self.truncation != "min":
            raise ValueError("only the 'min' truncation is supported")


def parse_snr(value):
    """Float SNR in dB, or one of the special 'clean' / 'pure-noise' modes."""
    if isinstance(value, str):
        v = value.strip().lower()
        if v in (CLEAN, "inf", "+inf"):
            return CLEAN
        if v in (PURE_NOISE, "pure_noise", "noise"):
            return PURE_NOISE
        value = float(v)
    value = float(value)
    if math.isinf(value) and value > 0:
        return CLEAN
    if not math.isfinite(value):
        raise ValueError(f"invalid SNR {value}")
    return value


@dataclass(frozen=True)
class Trial:
    """One mixture with its oracles and the clean references kept for scoring.

    In noisy-oracle mode ``oracles`` holds K noisy sources; in clean-oracle
    mode it holds the K clean sources followed by the summed noise.
    """

    mixture: np.ndarray
    oracles: list
    clean_refs: list
    noises: list
    snr_db: object
    oracle_mode: OracleMode
    trial_id: str = "trial"
    sample_rate: int = 16000

    @property
    def K(self) -> int:
        return len(self.clean_refs)

    @property
    def targets(self) -> list:
        """The K per-speaker training targets."""
        return list(self.oracles[: self.K])

    @property
    def noisy_sources(self) -> list:
        return [s + n for s, n in zip(self.clean_refs, self.noises)]

    @property
    def summed_noise(self) -> np.ndarray:
        return accumulate(self.noises)


def scale_noise_to_snr(source, noise, snr_db: float) -> np.ndarray:
    source, noise = as_signal(source), as_signal(noise)
    es, en = float(np.dot(source, source)), float(np.dot(noise, noise))
    if es <= 0.0 or en <= 0.0:
        raise DomainError("SNR scaling needs nonzero-energy source and noise")
    gain = math.sqrt(es / (en * 10.0 ** (snr_db / 10.0)))
    return gain * noise


def min_truncate(signals) -> list:
    signals = [as_signal(s) for s in signals]
    if not signals:
        raise ValueError("min_truncate needs at least one signal")
    n = min(s.size for s in signals)
    return [s[:n].copy() for s in signals]


def build_trial(clean_sources, noises, cfg: DatasetConfig, trial_id: str = "trial") -> Trial:
    K = len(clean_sources)
    if K < 1 or len(noises) != K:
        raise ValueError(f"need K >= 1 sources and K noises, got {K} and {len(noises)}")
    parts = min_truncate(list(clean_sources) + list(noises))
    sources, raw_noises = parts[:K], parts[K:]

    if cfg.snr_db == CLEAN:
        noises_out = [np.zeros_like(n) for n in raw_noises]
    elif cfg.snr_db == PURE_NOISE:
        sources = [np.zeros_like(s) for s in sources]
        noises_out = raw_noises
    else:
        noises_out = [scale_noise_to_snr(s, n, cfg.snr_db) for s, n in zip(sources, raw_noises)]

    noisy = [s + n for s, n in zip(sources, noises_out)]
    mixture = accumulate(noisy)
    if cfg.oracle_mode is OracleMode.NOISY_ORACLE:
        oracles = noisy
    else:
        oracles = list(sources) + [accumulate(noises_out)]
    return Trial(
        mixture=mixture,
        oracles=oracles,
        clean_refs=list(sources),
        noises=noises_out,
        snr_db=cfg.snr_db,
        oracle_mode=cfg.oracle_mode,
        trial_id=trial_id,
        sample_rate=cfg.sample_rate,
    )


# -- corpus-scale wrapper ----------------------------------------------------


class DatasetError(RuntimeError):
    def __init__(self, message, errors):
        super().__init__(message)
        self.errors = errors


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_jsonl(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _load_inputs(entry, base: Path, sample_rate: int):
    waves = []
    for key in ("sources", "noises"):
        for rel in entry[key]:
            path = base / rel
            if not path.is_file():
                raise FileNotFoundError(f"missing file {path}")
            w = read_wav(path)
            if w.sample_rate != sample_rate:
                raise WavFormatError(f"{path}: sample rate {w.sample_rate} != {sample_rate}")
            waves.append(w.samples)
    K = len(entry["sources"])
    return waves[:K], waves[K:]


def _trial_files(trial: Trial) -> dict:
    K = trial.K
    files = {"mixture": ["mixture.wav"]}
    files["oracles"] = [f"oracle_{i}.wav" for i in range(len(trial.oracles))]
    files["clean_refs"] = [f"clean_{i}.wav" for i in range(K)]
    files["noises"] = [f"noise_{i}.wav" for i in range(K)]
    return files


def build_dataset(manifest_in, cfg: DatasetConfig, out_dir, seed=None) -> dict:
    """Build every trial listed in ``manifest_in`` under ``out_dir``.

    Input records look like ``{"trial_id", "sources": [...], "noises": [...]}``
    with paths relative to the input manifest. Trials are written to
    ``out_dir/<trial_id>/`` and indexed by ``out_dir/manifest.jsonl``. If
    any trial fails, the failures go to ``errors.jsonl``, no manifest is
    written, and :class:`DatasetError` is raised.
    """
    manifest_in = Path(manifest_in)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = sorted(read_jsonl(manifest_in), key=lambda e: str(e["trial_id"]))
    base = manifest_in.parent

    records, errors = [], []
    for entry in entries:
        tid = str(entry["trial_id"])
        try:
            sources, noises = _load_inputs(entry, base, cfg.sample_rate)
            trial = build_trial(sources, noises, cfg, trial_id=tid)
        except (OSError, ValueError, KeyError) as exc:
            logger.error("trial %s failed: %s", tid, exc)
            errors.append({"trial_id": tid, "error": f"{type(exc).__name__}: {exc}"})
            continue
        records.append(_write_trial(trial, out_dir, cfg))

    if errors:
        write_jsonl(out_dir / "errors.jsonl", errors)
        raise DatasetError(f"{len(errors)} of {len(entries)} trials failed", errors)

    manifest_path = out_dir / "manifest.jsonl"
    write_jsonl(manifest_path, records)
    return {
        "trials": len(records),
        "manifest": str(manifest_path),
        "manifest_digest": file_digest(manifest_path),
        "snr_db": cfg.snr_db,
        "oracle_mode": cfg.oracle_mode.value,
        "seed": seed,
    }


def _write_trial(trial: Trial, out_dir: Path, cfg: DatasetConfig) -> dict:
    tdir = out_dir / trial.trial_id
    tdir.mkdir(parents=True, exist_ok=True)
    files = _trial_files(trial)
    signals = {
        "mixture": [trial.mixture],
        "oracles": trial.oracles,
        "clean_refs": trial.clean_refs,
        "noises": trial.noises,
    }
    record = {"trial_id": trial.trial_id}
    digests = {}
    for key, names in files.items():
        rels = []
        for name, sig in zip(names, signals[key]):
            rel = f"{trial.trial_id}/{name}"
            write_wav(out_dir / rel, sig, cfg.sample_rate)
            digests[rel] = file_digest(out_dir / rel)
            rels.append(rel)
        record[key] = rels[0] if key == "mixture" else rels
    record.update(
        snr_db=trial.snr_db,
        oracle_mode=trial.oracle_mode.value,
        sample_rate=cfg.sample_rate,
        digests=digests,
    )
    return record


def load_trial(dataset_dir, record: dict) -> Trial:
    """Rebuild a :class:`Trial` from one dataset manifest record."""
    base = Path(dataset_dir)

    def load(rel):
        return read_wav(base / rel).samples

    return Trial(
        mixture=load(record["mixture"]),
        oracles=[load(r) for r in record["oracles"]],
        clean_refs=[load(r) for r in record["clean_refs"]],
        noises=[load(r) for r in record["noises"]],
        snr_db=parse_snr(record["snr_db"]),
        oracle_mode=OracleMode(record["oracle_mode"]),
        trial_id=str(record["trial_id"]),
        sample_rate=int(record.get("sample_rate", 16000)),
    )


def load_dataset(dataset_dir) -> list:
    records = read_jsonl(Path(dataset_dir) / "manifest.jsonl")
    return [load_trial(dataset_dir, r) for r in records]
