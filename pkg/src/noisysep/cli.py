"""Command-line entry point: ``noisysep <subcommand> ...``.

Exit codes: 0 on success, 1 on domain errors, 2 on usage errors. Every
successful run prints one JSON summary line on stdout.
"""

import argparse
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import EvalReport, eval_noise_estimate, eval_separation, write_report
from .loss import LossConfig, esser, esser_grad, sdr_noisy, sdr_noisy_grad, si_sdr, si_sdr_grad
from .mixer import DatasetConfig, build_dataset, load_dataset
from .sigcore import normalized_correlation
from .tuner import DEFAULT_STEP, DEFAULT_THRESHOLD, run_sweep, select_lambda
from .wavio import read_wav

logger = logging.getLogger("noisysep")

# every random draw goes through this generator family, seeded from --seed
RNG_NAME = "numpy.PCG64/v1"


class UsageError(Exception):
    pass


def make_rng(seed, *stream):
    return np.random.default_rng([int(seed), *stream])


def _emit(summary: dict):
    print(json.dumps(summary, sort_keys=True))


# -- mix ---------------------------------------------------------------------------


def cmd_mix(args):
    cfg = DatasetConfig(snr_db=args.snr, oracle_mode=args.oracle)
    summary = build_dataset(args.manifest, cfg, args.out, seed=args.seed)
    return {"command": "mix", **summary}


# -- eval --------------------------------------------------------------------------


def _load_estimates(est_dir: Path, trial):
    tdir = est_dir / trial.trial_id
    files = sorted(tdir.glob("est_*.wav"))
    if len(files) != trial.K:
        raise FileNotFoundError(f"{tdir}: expected {trial.K} est_*.wav files, found {len(files)}")
    estimates = [read_wav(f).samples for f in files]
    noise = tdir / "noise.wav"
    return estimates, (read_wav(noise).samples if noise.is_file() else None)


def cmd_eval(args):
    trials = load_dataset(args.dataset)
    report = EvalReport(config={"dataset": str(args.dataset), "estimates": str(args.estimates)})
    for trial in trials:
        estimates, n_hat = _load_estimates(Path(args.estimates), trial)
        score = eval_separation(trial, estimates)
        noise = eval_noise_estimate(trial, n_hat) if n_hat is not None else None
        report.add(trial.trial_id, score, noise)
    write_report(report, args.out)
    return {"command": "eval", "trials": len(report.rows), "out": str(args.out), "aggregates": report.aggregates}


# -- tune --------------------------------------------------------------------------


def cmd_tune(args):
    if args.scores:
        scores = [float(s) for s in args.scores.split(",")]
        idx, reason = select_lambda(scores, args.threshold, args.reference)
        lambdas = [round(i * args.step, 12) for i in range(len(scores))]
        record = {
            "lambda_values": lambdas,
            "proxy_scores": scores,
            "selected_lambda": lambdas[idx],
            "stop_reason": reason.value,
        }
        return {"command": "tune", **record}
    if not args.dataset:
        raise UsageError("tune needs --dataset or --scores")

    from .toyopt import validation_proxy

    trials = load_dataset(args.dataset)
    record = run_sweep(
        lambda lam: validation_proxy(trials, lam, steps=args.steps, seed=args.seed),
        max_lambda=args.max_lambda,
        step=args.step,
        threshold=args.threshold,
        reference=args.reference,
    )
    return {"command": "tune", **record.as_dict()}


# -- toyrun ------------------------------------------------------------------------


def cmd_toyrun(args):
    from .toyopt import run_record

    loss = {"sisdr": "si_sdr", "esser": "esser"}[args.loss]
    record = run_record(
        scenario=args.scenario,
        snr_db=args.snr,
        family=loss,
        lam=args.lam,
        steps=args.steps,
        seed=args.seed,
        oracle_mode=args.oracle,
        step_size=args.step_size,
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    summary = {k: v for k, v in record.items() if k != "loss_trace"}
    return {"command": "toyrun", **summary}


# -- gradcheck ---------------------------------------------------------------------


def central_difference(f, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_error(analytic, numeric) -> float:
    """Max absolute deviation relative to the largest numeric component."""
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-300))


def gradcheck_case(loss, lam, rng, T=64, h=1e-6) -> float:
    if loss == "esser":
        s_hat, n_hat, s_noisy = rng.standard_normal((3, T))
        cfg = LossConfig(lam=lam, family="esser")
        gs, gn = esser_grad(s_hat, n_hat, s_noisy, cfg)
        fs = central_difference(lambda v: esser(v, n_hat, s_noisy, cfg).value, s_hat, h)
        fn = central_difference(lambda v: esser(s_hat, v, s_noisy, cfg).value, n_hat, h)
        return max(rel_error(gs, fs), rel_error(gn, fn))
    ref, est = rng.standard_normal((2, T))
    if loss == "sisdr":
        return rel_error(si_sdr_grad(ref, est), central_difference(lambda v: si_sdr(ref, v), est, h))
    return rel_error(sdr_noisy_grad(ref, est), central_difference(lambda v: sdr_noisy(ref, v), est, h))


def cmd_gradcheck(args):
    rng = make_rng(args.seed, 0x6C)
    errors = [gradcheck_case(args.loss, args.lam, rng, args.length) for _ in range(args.trials)]
    worst = max(errors)
    summary = {
        "command": "gradcheck",
        "loss": args.loss,
        "lambda": args.lam,
        "trials": args.trials,
        "max_rel_error": worst,
        "tolerance": args.tolerance,
        "passed": worst < args.tolerance,
    }
    if worst >= args.tolerance:
        _emit(summary)
        raise DomainFailure(f"max relative error {worst:.3e} exceeds {args.tolerance:.0e}")
    return summary


class DomainFailure(RuntimeError):
    pass


# -- orthostat ---------------------------------------------------------------------


def cmd_orthostat(args):
    files = sorted(Path(args.corpus).rglob("*.wav"))
    if len(files) < 2:
        raise DomainFailure(f"{args.corpus}: need at least two .wav files")
    signals = {str(f.relative_to(args.corpus)): read_wav(f).samples for f in files}
    pairs = []
    for (na, a), (nb, b) in itertools.combinations(signals.items(), 2):
        n = min(a.size, b.size)
        pairs.append({"a": na, "b": nb, "length": n, "correlation": normalized_correlation(a[:n], b[:n])})
    values = np.array([p["correlation"] for p in pairs])
    if not args.quiet:
        for p in pairs:
            print(f"{p['a']}\t{p['b']}\t{p['correlation']:.6f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for p in pairs:
                fh.write(json.dumps(p, sort_keys=True) + "\n")
    return {
        "command": "orthostat",
        "files": len(files),
        "pairs": len(pairs),
        "mean": float(values.mean()),
        "max": float(values.max()),
        "median": float(np.median(values)),
    }


# -- paradigm ----------------------------------------------------------------------


def cmd_paradigm(args):
    from .toyopt import DEFAULT_STEPS, VALIDATION_SEED_OFFSET, paradigm_experiment, tune_lambda

    steps = args.steps or DEFAULT_STEPS
    sweep = tune_lambda(args.snr, seed=args.seed + VALIDATION_SEED_OFFSET, steps=steps)
    rows = [
        paradigm_experiment(args.seed + i, args.snr, lam=sweep.selected_lambda, steps=steps) for i in range(args.seeds)
    ]
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
    keys = ("noisy_oracle_si_sdr", "clean_oracle_si_sdr", "esser_si_sdr")
    return {
        "command": "paradigm",
        "snr_db": args.snr,
        "lambda": sweep.selected_lambda,
        **{f"mean_{k}": float(np.mean([r[k] for r in rows])) for k in keys},
    }


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random draw")
    common.add_argument("--quiet", action="store_true")
    common.add_argument("--config", help="JSON or YAML file whose keys mirror the flags")

    parser = argparse.ArgumentParser(prog="noisysep", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("mix", parents=[common], help="build a noisy-mixture dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--snr", required=True, help="dB, 'clean' or 'pure-noise'")
    p.add_argument("--oracle", choices=["clean", "noisy"], required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("eval", parents=[common], help="score estimates against clean references")
    p.add_argument("--dataset", required=True)
    p.add_argument("--estimates", required=True)
    p.add_argument("--out", required=True, help="report path ending in .csv or .jsonl")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tune", parents=[common], help="lambda validation sweep")
    p.add_argument("--dataset")
    p.add_argument("--scores", help="comma-separated proxy scores; apply the rule only")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--step", type=float, default=DEFAULT_STEP)
    p.add_argument("--max-lambda", type=float, default=1.0)
    p.add_argument("--reference", choices=["previous", "initial"], default="previous")
    p.add_argument("--steps", type=int, default=None, help="optimizer steps per trial")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("toyrun", parents=[common], help="fit the toy mask separator")
    p.add_argument("--scenario", choices=["separable", "inseparable"], default="inseparable")
    p.add_argument("--snr", default="0")
    p.add_argument("--loss", choices=["sisdr", "esser"], default="sisdr")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--oracle", choices=["clean", "noisy"], default="noisy")
    p.add_argument("--out")
    p.set_defaults(func=cmd_toyrun)

    p = sub.add_parser("gradcheck", parents=[common], help="analytic vs finite-difference gradients")
    p.add_argument("--loss", choices=["sisdr", "esser", "sdr"], default="esser")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--length", type=int, default=64)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("orthostat", parents=[common], help="pairwise normalized correlations of a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_orthostat)

    p = sub.add_parser("paradigm", parents=[common], help="toy clean/noisy/ESSER comparison")
    p.add_argument("--snr", default="0")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--steps", type=int, default=None, help="optimizer steps per run")
    p.add_argument("--out")
    p.set_defaults(func=cmd_paradigm)
    return parser


def _load_config(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a mapping")
    return data


def _config_defaults(subparser, data: dict) -> dict:
    """Map config keys, spelled like the flags, onto argparse destinations."""
    dests = {}
    for action in subparser._actions:
        for opt in action.option_strings:
            dests[opt.lstrip("-")] = action.dest
    out = {}
    for key, value in data.items():
        flag = str(key).replace("_", "-")
        if flag not in dests or flag in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        out[dests[flag]] = value
    return out


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        if args.config:
            # config supplies defaults; flags given on the command line win
            sub = parser._subparsers._group_actions[0].choices[args.command]
            sub.set_defaults(**_config_defaults(sub, _load_config(args.config)))
            args = parser.parse_args(argv)
    except (OSError, ValueError, UsageError) as exc:
        print(f"noisysep: {exc}", file=sys.stderr)
        return 2

    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        summary = args.func(args)
    except UsageError as exc:
        print(f"noisysep: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"noisysep: error: {exc}", file=sys.stderr)
        return 1
    summary["status"] = "ok"
    summary["rng"] = RNG_NAME
    summary["seed"] = args.seed
    _emit(summary)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
