"""Command-line front end: ``fkwc detect | simulate | study``.

Exit codes: 0 success, 2 invalid arguments or configuration, 3 input/output
failure (unreadable or malformed data files).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

from .core import FormatError, load_sample, save_csv, save_tensor
from .depth import DEFAULT_BASIS_SIZE, DEFAULT_PROJECTIONS, DEFAULT_TUKEY_DIRECTIONS, DepthMethod, compute_depth
from .detect import DetectOptions, Detector, NullMode, run_detector
from .evaluation import run_study
from .rankstat import ranks_from_scores
from .simgen import Scenario, build_scenario

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3
SEED_ENV = "FKWC_SEED"
BUNDLED_STUDIES = ("appendix-b-desk", "lambda-sweep")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _global_options() -> argparse.ArgumentParser:
    # Defaults are suppressed so the flags work before or after the subcommand.
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                   help=f"master seed (falls back to ${SEED_ENV}, then 0)")
    p.add_argument("--threads", type=_positive_int, default=argparse.SUPPRESS,
                   help="worker cap for compiled kernels and study replicates")
    p.add_argument("--output", choices=("json", "csv"), default=argparse.SUPPRESS, help="result format on stdout")
    p.add_argument("--center", action="store_true", default=argparse.SUPPRESS,
                   help="subtract the pointwise sample mean before scoring")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_options()
    parser = argparse.ArgumentParser(prog="fkwc", parents=[common],
                                     description="Depth-rank change-point detection for functional data.")
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", parents=[common], help="run a detector on a CSV or FKWCTEN1 file")
    d.add_argument("input")
    d.add_argument("--has-header", action="store_true", help="skip the first CSV line")
    d.add_argument("--depth", choices=[m.value for m in DepthMethod], default="mfhd-deriv")
    d.add_argument("--method", choices=[m.value for m in Detector], default="amoc")
    d.add_argument("--lambda-prime", type=float, default=0.3)
    d.add_argument("--lambda", dest="lam", type=float, default=None, help="fixed penalty overriding --lambda-prime")
    d.add_argument("--min-gap", type=_positive_int, default=2)
    d.add_argument("--min-segment", type=_positive_int, default=2)
    d.add_argument("--null", choices=[m.value for m in NullMode], default="permutation")
    d.add_argument("--reps", type=_positive_int, default=999)
    d.add_argument("--m-projections", type=_positive_int, default=DEFAULT_PROJECTIONS)
    d.add_argument("--basis-size", type=_positive_int, default=DEFAULT_BASIS_SIZE)
    d.add_argument("--tukey-directions", type=_positive_int, default=DEFAULT_TUKEY_DIRECTIONS)
    d.add_argument("--scores-out", default=None, help="write index,score,rank CSV here")

    s = sub.add_parser("simulate", parents=[common], help="draw a dataset from a scenario JSON")
    s.add_argument("scenario")
    s.add_argument("--out", required=True, help="sample path; .csv writes CSV, anything else FKWCTEN1")
    s.add_argument("--truth-out", default=None, help="truth JSON path (default: <out>.truth.json)")

    st = sub.add_parser("study", parents=[common], help="run a power or segmentation study")
    st.add_argument("config", help=f"study JSON path or a bundled name: {', '.join(BUNDLED_STUDIES)}")
    st.add_argument("--out-dir", required=True)
    st.add_argument("--reps", type=_positive_int, default=None, help="override the configured replicate count")
    return parser


def resolve_seed(cli_seed: Optional[int], fallback: Optional[int] = None) -> int:
    """CLI flag, then the configuration's own seed, then ``$FKWC_SEED``, then 0."""
    if cli_seed is not None:
        return int(cli_seed)
    if fallback is not None:
        return int(fallback)
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip() != "":
        try:
            return int(env)
        except ValueError:
            raise CliError(f"{SEED_ENV} must be an integer, got {env!r}", EXIT_INVALID) from None
    return 0


def _set_threads(threads: Optional[int]) -> None:
    if threads is None:
        return
    import numba

    numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))


def _read_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}", EXIT_IO) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed JSON in {path}: {exc}", EXIT_INVALID) from None


def bundled_study(name: str) -> dict:
    ref = resources.files("fkwc") / "data" / f"{name}.json"
    return json.loads(ref.read_text())


def _emit(payload: dict, fmt: str, out) -> None:
    if fmt == "json":
        out.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return
    w = csv.writer(out, lineterminator="\n")
    keys = [k for k in payload if not isinstance(payload[k], dict)]
    w.writerow(keys)
    w.writerow([" ".join(map(str, v)) if isinstance(v, list) else ("" if v is None else v)
                for v in (payload[k] for k in keys)])


def cmd_detect(args, out) -> int:
    seed = resolve_seed(getattr(args, "seed", None))
    try:
        sample = load_sample(args.input, has_header=args.has_header)
    except FormatError as exc:
        raise CliError(f"{args.input}: {exc}", EXIT_IO) from None
    except OSError as exc:
        raise CliError(f"cannot read {args.input}: {exc.strerror or exc}", EXIT_IO) from None
    options = DetectOptions(
        M=args.m_projections,
        basis_size=args.basis_size,
        tukey_directions=args.tukey_directions,
        seed=seed,
        null_mode=args.null,
        reps=args.reps,
        min_gap=args.min_gap,
        lambda_prime=args.lambda_prime,
        lam=args.lam,
        min_segment=args.min_segment,
        center=getattr(args, "center", False),
    )
    if options.center:
        sample = sample.centered()
    scores = compute_depth(sample, args.depth, M=options.M, basis_size=options.basis_size,
                           tukey_directions=options.tukey_directions, seed=seed)
    ranks = ranks_from_scores(scores)
    result = run_detector(ranks, args.method, options)
    params = {
        "m_projections": options.M,
        "basis_size": options.basis_size,
        "tukey_directions": options.tukey_directions,
        "center": options.center,
    }
    if args.method == Detector.PELT.value:
        params.update(lambda_prime=options.lambda_prime, lam=result.extra["lambda"], min_segment=options.min_segment)
    else:
        params.update(null=result.null_mode, reps=result.reps)
    if args.method == Detector.EPIDEMIC.value:
        params.update(min_gap=options.min_gap, window=result.extra["window"])
    if args.method == Detector.AMOC.value:
        params.update(kw_argmax=result.extra["kw_argmax"])
    payload = {
        "method": result.method,
        "depth": DepthMethod(args.depth).value,
        "statistic": result.statistic,
        "p_value": result.p_value,
        "changepoints": list(result.estimates.points),
        "n": sample.n,
        "seed": seed,
        "params": params,
    }
    if args.scores_out:
        try:
            with open(args.scores_out, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["index", "score", "rank"])
                for i, (v, r) in enumerate(zip(scores.values, ranks.ranks), start=1):
                    w.writerow([i, repr(float(v)), int(r)])
        except OSError as exc:
            raise CliError(f"cannot write {args.scores_out}: {exc.strerror or exc}", EXIT_IO) from None
    _emit(payload, getattr(args, "output", "json"), out)
    return EXIT_OK


def cmd_simulate(args, out) -> int:
    raw = _read_json(args.scenario)
    try:
        sc = Scenario.from_dict(raw)
    except (ValueError, TypeError) as exc:
        raise CliError(f"invalid scenario: {exc}", EXIT_INVALID) from None
    seed = resolve_seed(getattr(args, "seed", None), raw.get("seed"))
    sample, truth = build_scenario(sc, seed=seed)
    out_path = Path(args.out)
    truth_path = Path(args.truth_out) if args.truth_out else out_path.with_name(out_path.name + ".truth.json")
    try:
        if out_path.suffix.lower() == ".csv":
            save_csv(sample, out_path)
        else:
            save_tensor(sample, out_path)
        truth_path.write_text(json.dumps({"n": truth.n, "changepoints": list(truth.points), "seed": seed},
                                         sort_keys=True) + "\n")
    except OSError as exc:
        raise CliError(f"cannot write output: {exc.strerror or exc}", EXIT_IO) from None
    _emit({"sample": str(out_path), "truth": str(truth_path), "n": truth.n,
           "changepoints": list(truth.points), "seed": seed}, getattr(args, "output", "json"), out)
    return EXIT_OK


def cmd_study(args, out) -> int:
    if args.config in BUNDLED_STUDIES and not Path(args.config).exists():
        config = bundled_study(args.config)
    else:
        config = _read_json(args.config)
    if not isinstance(config, dict):
        raise CliError("study config must be a JSON object", EXIT_INVALID)
    if args.reps is not None:
        config = {**config, "reps": args.reps}
    seed = resolve_seed(getattr(args, "seed", None), config.get("seed"))
    config = {**config, "seed": seed}
    threads = getattr(args, "threads", None)
    try:
        report = run_study(config, seed=seed, threads=threads)
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(f"invalid study config: {exc}", EXIT_INVALID) from None
    out_dir = Path(args.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.csv").write_text(report.to_csv())
        (out_dir / "summary.json").write_text(report.to_json())
        if report.kind == "pelt":
            (out_dir / "details.csv").write_text(report.details_csv())
    except OSError as exc:
        raise CliError(f"cannot write report: {exc.strerror or exc}", EXIT_IO) from None
    if getattr(args, "output", "json") == "csv":
        out.write(report.to_csv())
    else:
        out.write(json.dumps({"kind": report.kind, "seed": seed, "reps": report.reps,
                              "out_dir": str(out_dir), "rows": len(report.rows)}, sort_keys=True) + "\n")
    return EXIT_OK


COMMANDS = {"detect": cmd_detect, "simulate": cmd_simulate, "study": cmd_study}


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        _set_threads(getattr(args, "threads", None))
        return COMMANDS[args.command](args, out)
    except CliError as exc:
        err.write(f"fkwc: error: {exc}\n")
        return exc.code
    except ValueError as exc:
        err.write(f"fkwc: error: {exc}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
