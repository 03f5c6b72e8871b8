"""Command-line entry point.

Commands: ``verify`` runs the registered certification checks, ``train``
runs a configured training job, ``diagnose`` evaluates a frozen checkpoint,
and ``slicedemo`` reproduces the directional-discrepancy comparison of
coarse Euler and leapfrog transport.

Every command is a pure function of (config bytes, seed) to (output bytes,
exit code).  Exit codes: 0 success, 1 check failure, 2 config error,
3 runtime abort.  The HAMJEPA_SEED environment variable overrides the seed.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import certify, diagnostics, trainer
from .trainer import ConfigError, TrainingAbort

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_ABORT = 3


def _env_seed(default: int) -> int:
    raw = os.environ.get("HAMJEPA_SEED")
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"HAMJEPA_SEED must be an integer, got {raw!r}") from exc


def cmd_verify(args) -> int:
    seed = _env_seed(args.seed)
    names = args.filter.split(",") if args.filter else None
    try:
        results = certify.run_checks(names, seed=seed)
    except KeyError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    all_passed = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        detail = ", ".join(f"{k}={v}" for k, v in r.details.items())
        print(f"{status} {r.name}: {detail}")
        print(f"  [{r.name} took {r.seconds:.1f}s]", file=sys.stderr)
        all_passed = all_passed and r.passed
    report = _plain(
        {
            "seed": seed,
            "filter": names,
            "results": [
                {"name": r.name, "passed": bool(r.passed), "details": r.details}
                for r in results
            ],
            "all_passed": bool(all_passed),
        }
    )
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "verify_report.json"), "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
            fh.write("\n")
    if not all_passed:
        failed = [r.name for r in results if not r.passed]
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _plain(obj):
    """JSON-ready copy: numpy scalars and arrays become Python values."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if "HAMJEPA_SEED" in os.environ:
        raw["seed"] = _env_seed(raw.get("seed", 42))
    return raw


def cmd_train(args) -> int:
    try:
        raw = _load_config(args.config)
        cfg = trainer.validate_config(raw)
        result = trainer.train(raw, out_dir=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAbort, FloatingPointError, OSError) as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    print(f"mode={cfg['mode']} steps={result['steps']} out={result['out_dir']}")
    if result["final"] is not None:
        print(f"final total={result['final']['total']:.6g}")
    return EXIT_OK


KNN_SWEEP = (1, 5, 10, 20, 50)


def cmd_diagnose(args) -> int:
    try:
        raw = _load_config(args.config)
        cfg = trainer.validate_config(raw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        enc = trainer.load_encoder(args.checkpoint)
        spec = trainer.synthetic_spec_from_config(cfg)
        if enc.weights[0].shape[1] != spec.obs_dim:
            raise TrainingAbort(
                f"checkpoint expects inputs of dim {enc.weights[0].shape[1]},"
                f" config generates dim {spec.obs_dim}"
            )
        os.makedirs(args.out, exist_ok=True)
        seed_seq = np.random.SeedSequence(cfg["seed"]).spawn(7)
        views_a, _, labels = trainer.generate_views(spec, np.random.default_rng(seed_seq[0]))
        state, _ = trainer.encoder_forward(enc, views_a)
        readouts = {
            "q": state.q,
            "p": state.p,
            "qp": np.concatenate([state.q, state.p], axis=1),
        }
        cut = (3 * len(labels)) // 4
        pair_rng = np.random.default_rng([cfg["seed"], 1])
        summary = {"seed": cfg["seed"], "n_train": int(cut), "n_test": int(len(labels) - cut)}
        for name, feats in readouts.items():
            sweep = [
                (k, diagnostics.knn_accuracy(feats[:cut], labels[:cut], feats[cut:], labels[cut:], k))
                for k in KNN_SWEEP
                if k <= cut
            ]
            diagnostics.write_knn_sweep_csv(sweep, os.path.join(args.out, f"knn_{name}.csv"))
            report = diagnostics.spectrum_report(feats)
            diagnostics.write_spectrum_csv(report, os.path.join(args.out, f"spectrum_{name}.csv"))
            cosine = diagnostics.cosine_norm_stats(feats, 10_000, pair_rng)
            probe = diagnostics.linear_probe(feats[:cut], labels[:cut], feats[cut:], labels[cut:])
            summary[name] = {
                "knn": {str(k): acc for k, acc in sweep},
                "linear_probe": probe,
                "effective_rank": report.effective_rank,
                "participation_ratio": report.participation_ratio,
                "eigmax_frac": report.eigmax_frac,
                "cos_mean": cosine.cos_mean,
                "cos_std": cosine.cos_std,
                "norm_mean": cosine.norm_mean,
                "norm_std": cosine.norm_std,
            }
        with open(os.path.join(args.out, "summary.json"), "w") as fh:
            json.dump(_plain(summary), fh, indent=1, sort_keys=True)
            fh.write("\n")
    except (TrainingAbort, FloatingPointError, OSError, ValueError) as exc:
        print(f"diagnose aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    print(f"diagnostics written to {args.out}")
    return EXIT_OK


def cmd_slicedemo(args) -> int:
    if args.dt <= 0 or args.horizon <= 0 or args.samples < 2:
        print("config error: dt and horizon must be positive, samples >= 2", file=sys.stderr)
        return EXIT_CONFIG
    seed = _env_seed(args.seed)
    profiles = diagnostics.harmonic_slice_demo(
        args.dt, args.horizon, args.samples, np.random.default_rng(seed)
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "slice_profile.csv")
    diagnostics.write_discrepancy_csv(
        {"euler": profiles["euler"], "leapfrog": profiles["leapfrog"]}, path
    )
    print(
        f"euler mean_g={profiles['euler'].mean_g:.6g} "
        f"leapfrog mean_g={profiles['leapfrog'].mean_g:.6g} -> {path}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hamjepa",
        description="Phase-space predictive learning: certification, training, diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="run the certification checks")
    p_verify.add_argument("--filter", default=None, help="comma-separated check names")
    p_verify.add_argument("--seed", type=int, default=42)
    p_verify.add_argument("--out", default=None, help="directory for the JSON report")
    p_verify.set_defaults(func=cmd_verify)

    p_train = sub.add_parser("train", help="train from a JSON config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", default=None, help="override the checkpoint directory")
    p_train.set_defaults(func=cmd_train)

    p_diag = sub.add_parser("diagnose", help="frozen-feature diagnostics of a checkpoint")
    p_diag.add_argument("--checkpoint", required=True)
    p_diag.add_argument("--config", required=True)
    p_diag.add_argument("--out", required=True)
    p_diag.set_defaults(func=cmd_diagnose)

    p_slice = sub.add_parser("slicedemo", help="directional discrepancy of coarse rollouts")
    p_slice.add_argument("--dt", type=float, required=True)
    p_slice.add_argument("--horizon", type=float, required=True)
    p_slice.add_argument("--samples", type=int, default=4000)
    p_slice.add_argument("--seed", type=int, default=42)
    p_slice.add_argument("--out", required=True)
    p_slice.set_defaults(func=cmd_slicedemo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
