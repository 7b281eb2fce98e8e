"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s`` or
``python tests/test_acceptance.py``.
"""

import itertools
import json
import math
import sys
import time

import numpy as np
import pytest

from conftest import max_rel_error, numeric_grad
from corpus import write_corpus
from noisysep.evaluation import EvalReport, SeparationScore, read_report, write_report
from noisysep.loss import LossConfig, esser, esser_grad, si_sdr, si_sdr_grad
from noisysep.mixer import (
    STANDARD_SNRS,
    DatasetConfig,
    OracleMode,
    build_dataset,
    build_trial,
    read_jsonl,
)
from noisysep.pit import pit_apply
from noisysep.sigcore import make_orthogonal_fixture, normalized_correlation, project
from noisysep.toyopt import paradigm_experiment, run_record, tune_lambda
from noisysep.tuner import StopReason, lambda_grid, select_lambda
from noisysep.wavio import read_wav, write_wav


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:>2}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        return ok

    return emit


class Clock:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def test_criterion_01_projection_identities(verdict):
    worst_recovery = worst_scaling = 0.0
    with Clock() as clock:
        for seed in range(1000):
            cs = make_orthogonal_fixture(seed, 2, 512)
            a, b = cs.clean_sources[0], cs.noises[0]
            c = cs.clean_sources[1]
            worst_recovery = max(worst_recovery, np.linalg.norm(project(a + b, a) - a) / np.linalg.norm(a))
            expected = np.dot(a, a) / np.dot(a + b, a + b) * (a + b)
            worst_scaling = max(worst_scaling, np.linalg.norm(project(a + c, a + b) - expected) / np.linalg.norm(expected))
    ok = worst_recovery <= 1e-12 and worst_scaling <= 1e-12 and clock.seconds < 5
    detail = f"max rel err {worst_recovery:.2e} (component recovery), {worst_scaling:.2e} (shared-part scaling); {clock.seconds:.2f}s"
    assert verdict(1, "projection identities on 1000 fixtures", ok, detail)


def test_criterion_02_si_sdr_scale_invariance(verdict):
    worst = 0.0
    with Clock() as clock:
        for seed in range(1000):
            r, e = np.random.default_rng(seed).standard_normal((2, 256))
            base = si_sdr(r, e)
            for c in (1e-3, 1.0, 1e3):
                worst = max(worst, abs(si_sdr(r, c * e) - base))
    ok = worst <= 1e-9 and clock.seconds < 5
    assert verdict(2, "SI-SDR scale invariance", ok, f"max |delta| {worst:.2e} dB over 1000 pairs; {clock.seconds:.2f}s")


def test_criterion_03_gradients(verdict):
    worst = {}
    with Clock() as clock:
        rng = np.random.default_rng(3)
        errs = []
        for _ in range(200):
            r, e = rng.standard_normal((2, 64))
            errs.append(max_rel_error(si_sdr_grad(r, e), numeric_grad(lambda v: si_sdr(r, v), e)))
        worst["si_sdr"] = max(errs)
        for lam in (0.0, 0.3, 1.0):
            cfg = LossConfig(lam=lam, family="esser")
            errs = []
            for _ in range(200):
                s_hat, n_hat, s_noisy = rng.standard_normal((3, 64))
                gs, gn = esser_grad(s_hat, n_hat, s_noisy, cfg)
                ns = numeric_grad(lambda v: esser(v, n_hat, s_noisy, cfg).value, s_hat)
                nn = numeric_grad(lambda v: esser(s_hat, v, s_noisy, cfg).value, n_hat)
                errs.append(max(max_rel_error(gs, ns), max_rel_error(gn, nn)))
            worst[f"esser lam={lam}"] = max(errs)
    ok = max(worst.values()) < 1e-6 and clock.seconds < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {clock.seconds:.1f}s"
    assert verdict(3, "analytic gradients vs central differences (200 cases each)", ok, detail)


def test_criterion_04_esser_degeneracy(verdict):
    worst = 0.0
    capped = True
    with Clock() as clock:
        for seed in range(50):
            cs = make_orthogonal_fixture(seed, 2, 256)
            n_sum = cs.noises[0] + cs.noises[1]
            for lam in (0.0, 0.5, 1.0):
                cfg = LossConfig(lam=lam, family="esser")
                for k in range(2):
                    b = esser(cs.clean_sources[k], n_sum, cs.clean_sources[k] + cs.noises[k], cfg)
                    noise_e = np.dot(cs.noises[k], cs.noises[k])
                    expected = (1 - lam) ** 2 * noise_e
                    worst = max(worst, abs(b.denominator_energy - expected) / noise_e)
                    if lam == 1.0:
                        capped &= b.value == pytest.approx(cfg.cap_db)
    ok = worst <= 1e-9 and capped and clock.seconds < 1
    detail = f"max rel deviation {worst:.2e}; lambda=1 capped: {capped}; {clock.seconds:.3f}s"
    assert verdict(4, "ESSER denominator equals (1-lambda)^2 noise energy", ok, detail)


def test_criterion_05_mixer(verdict, tmp_path):
    with Clock() as clock:
        manifest = write_corpus(tmp_path / "in", n_trials=3, T=2048, lengths=[2048, 1500])
        entries = read_jsonl(manifest)
        worst_snr, identical, lengths_ok = 0.0, True, True
        for entry in entries:
            srcs = [read_wav(tmp_path / "in" / p).samples for p in entry["sources"]]
            noises = [read_wav(tmp_path / "in" / p).samples for p in entry["noises"]]
            shortest = min(len(x) for x in srcs + noises)
            for snr in STANDARD_SNRS:
                a = build_trial(srcs, noises, DatasetConfig(snr, OracleMode.NOISY_ORACLE))
                b = build_trial(srcs, noises, DatasetConfig(snr, OracleMode.CLEAN_ORACLE))
                identical &= a.mixture.tobytes() == b.mixture.tobytes()
                lengths_ok &= all(len(x) == shortest for x in [a.mixture, *a.oracles, *a.clean_refs, *a.noises])
                for s, n in zip(a.clean_refs, a.noises):
                    worst_snr = max(worst_snr, abs(10 * np.log10(np.dot(s, s) / np.dot(n, n)) - snr))
        build_dataset(manifest, DatasetConfig(5.0), tmp_path / "out")
        for rec in read_jsonl(tmp_path / "out" / "manifest.jsonl"):
            lengths_ok &= len(read_wav(tmp_path / "out" / rec["mixture"])) == 1500
    ok = worst_snr <= 1e-6 and identical and lengths_ok and clock.seconds < 5
    detail = f"max SNR error {worst_snr:.1e} dB; mixtures identical: {identical}; min truncation: {lengths_ok}; {clock.seconds:.2f}s"
    assert verdict(5, "mixer exactness", ok, detail)


def _enumerate(refs, ests, noise, cfg):
    best = -np.inf
    for perm in itertools.permutations(range(len(refs))):
        if cfg.family.value == "esser":
            vals = [esser(ests[j], noise, refs[r], cfg).value for j, r in enumerate(perm)]
        else:
            vals = [si_sdr(refs[r], ests[j]) for j, r in enumerate(perm)]
        best = max(best, math.fsum(vals) / len(vals))
    return best


def test_criterion_06_pit(verdict):
    worst, relabel_ok, cases = 0.0, True, 0
    with Clock() as clock:
        for K in (2, 3):
            for seed in range(200):
                r = np.random.default_rng([K, seed])
                refs, ests = list(r.standard_normal((K, 64))), list(r.standard_normal((K, 64)))
                noise = r.standard_normal(64)
                cfg = LossConfig(lam=0.3, family="esser") if seed % 2 else LossConfig()
                res = pit_apply(refs, ests, noise, cfg)
                worst = max(worst, abs(res.mean_value - _enumerate(refs, ests, noise, cfg)))
                for perm in itertools.permutations(range(K)):
                    relabel_ok &= pit_apply(refs, [ests[p] for p in perm], noise, cfg).mean_value == res.mean_value
                cases += 1
    ok = worst <= 1e-12 and relabel_ok and clock.seconds < 10
    detail = f"{cases} cases, max |PIT - enumeration| {worst:.1e} dB; relabeling exact: {relabel_ok}; {clock.seconds:.2f}s"
    assert verdict(6, "PIT equals exhaustive enumeration", ok, detail)


def test_criterion_07_lambda_rule(verdict):
    with Clock() as clock:
        idx, reason = select_lambda([10.0, 9.9, 9.8, 9.0])
        grid = lambda_grid()
        chosen = grid[idx]
        monotone = [[1.0] * 11, list(np.linspace(3, 8, 11)), [2.0, 2.0, 2.5]]
        exhausted = all(select_lambda(t) == (len(t) - 1, StopReason.SWEEP_EXHAUSTED) for t in monotone)
    ok = chosen == pytest.approx(0.2) and reason is StopReason.THRESHOLD_DROP and exhausted and clock.seconds < 1
    detail = f"documented trace selects lambda={chosen} ({reason.value}); monotone traces exhaust: {exhausted}"
    assert verdict(7, "lambda selection rule", ok, detail)


def test_criterion_08_inseparability_contrast(verdict):
    seeds = (0, 1, 2)
    with Clock() as clock:
        noise_only = [run_record("inseparable", "pure-noise", "si_sdr", seed=s)["si_sdri_db"] for s in seeds]
        speech = [run_record("separable", "clean", "si_sdr", seed=s)["clean_si_sdr_db"] for s in seeds]
    worst_noise = max(max(v) for v in noise_only)
    worst_speech = min(min(v) for v in speech)
    ok = worst_noise < 1.0 and worst_speech > 20.0 and clock.seconds < 120
    detail = (
        f"pure-noise SI-SDRi max {worst_noise:.2f} dB (mean {np.mean(noise_only):.2f}); "
        f"separable SI-SDR min {worst_speech:.1f} dB (mean {np.mean(speech):.1f}); {clock.seconds:.0f}s"
    )
    assert verdict(8, "masks cannot split noise but do split speech", ok, detail)


ARMS = ("clean_oracle_si_sdr", "esser_si_sdr", "noisy_oracle_si_sdr")


def test_criterion_09_paradigm_gap(verdict):
    seeds = range(10)
    summary, problems, minority = {}, [], []
    with Clock() as clock:
        for snr in (0.0, 5.0, "clean"):
            sweep = tune_lambda(snr)
            rows = [paradigm_experiment(s, snr, lam=sweep.selected_lambda) for s in seeds]
            means = {arm: float(np.mean([r[arm] for r in rows])) for arm in ARMS}
            summary[snr] = (sweep.selected_lambda, means)
            if snr == "clean":
                spread = max(means.values()) - min(means.values())
                if spread > 1.0:
                    problems.append(f"clean spread {spread:.2f} dB")
                continue
            c, e, n = (means[a] for a in ARMS)
            if not c >= e >= n:
                problems.append(f"{snr} dB ordering {c:.2f}/{e:.2f}/{n:.2f}")
            if c - n < 1.0:
                problems.append(f"{snr} dB gap {c - n:.2f} dB")
            below = [r["seed"] for r in rows if r["esser_si_sdr"] < r["noisy_oracle_si_sdr"]]
            if below:
                minority.append(f"{snr} dB seeds {below}")
    if clock.seconds >= 600:
        problems.append(f"runtime {clock.seconds:.0f}s")
    parts = []
    for snr, (lam, m) in summary.items():
        parts.append(f"{snr}: lambda={lam} clean/ESSER/noisy {m[ARMS[0]]:.2f}/{m[ARMS[1]]:.2f}/{m[ARMS[2]]:.2f}")
    detail = "; ".join(parts) + f"; {clock.seconds:.0f}s"
    if minority:
        detail += "; ESSER below noisy-oracle on " + ", ".join(minority)
    if problems:
        detail += "; problems: " + ", ".join(problems)
    assert verdict(9, "clean-oracle >= ESSER >= noisy-oracle (10 seeds)", not problems, detail)


def test_criterion_10_orthogonality_statistic(verdict):
    T = 16000
    with Clock() as clock:
        values = []
        for seed in range(100):
            a, b = np.random.default_rng([10, seed]).standard_normal((2, T))
            values.append(normalized_correlation(a, b))
    mean = float(np.mean(values))
    ok = mean < 3 / np.sqrt(T) and clock.seconds < 5
    assert verdict(10, "independent signals are nearly orthogonal", ok, f"mean {mean:.5f} < {3 / np.sqrt(T):.5f}; {clock.seconds:.2f}s")


def test_criterion_11_round_trips(verdict, tmp_path):
    x = np.random.default_rng(11).uniform(-1, 1, 16000).astype(np.float32).astype(np.float64)
    write_wav(tmp_path / "x.wav", x, 16000)
    wav_ok = np.array_equal(read_wav(tmp_path / "x.wav").samples, x)

    manifest = write_corpus(tmp_path / "in", n_trials=2)
    build_dataset(manifest, DatasetConfig(-5.0, "clean"), tmp_path / "ds")
    text = (tmp_path / "ds" / "manifest.jsonl").read_text()
    records = read_jsonl(tmp_path / "ds" / "manifest.jsonl")
    manifest_ok = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records) == text

    report = EvalReport(config={"run": "acceptance"})
    report.add("t1", SeparationScore([np.pi, -1 / 3], (1, 0), False), np.e)
    report.add("t0", SeparationScore([120.0, 0.1 + 0.2], (0, 1), True), None)
    report_ok = True
    for fmt in ("jsonl", "csv"):
        write_report(report, tmp_path / f"r.{fmt}", fmt)
        report_ok &= read_report(tmp_path / f"r.{fmt}", fmt).rows == report.rows
    ok = wav_ok and manifest_ok and report_ok
    assert verdict(11, "round-trip fidelity", ok, f"float32 WAV exact: {wav_ok}; manifest: {manifest_ok}; report: {report_ok}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
