"""
`bdr` command line: simulate, estimate, match, difference and report.

Precedence of settings: command-line flags, then `--config FILE` entries,
then the defaults below. The config file is flat `key = value` text whose
keys are long flag names (`reps = 500`, `with-replacement = true`).
"""
import argparse
import contextlib
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from rich.console import Console

from bdr.bayes_boot import PriorSpec
from bdr.core import EstimatorConfig, difference, load_csv, save_csv
from bdr.estimators import ReportKind, run_estimator
from bdr.matching import MatchingConfig, match, standardized_mean_difference
from bdr.propensity import estimate_propensity, overlap_report
from bdr.reporting import (
    dump_json,
    estimate_document,
    estimate_table,
    histogram_svg,
    load_report,
    merge_reports,
    overlaid_histogram_svg,
    render_table,
    simulation_document,
    simulation_table,
)
from bdr.sim import (
    DEFAULT_RUNS,
    DEFAULT_SIM_REPS,
    X_SCALE,
    Y_NOISE_SCALE,
    DgpParams,
    run_simulation_study,
    scale_calibration,
    simulation_config,
    write_dgp_csv,
)
from bdr.util.exceptions import BdrError, StageError
from bdr.util.rng import RandomStreams, Stage, fresh_seed

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2

ESTIMATOR_NAMES = {
    "or": ReportKind.OR,
    "ipw": ReportKind.IPW,
    "dr": ReportKind.DR,
    "naive-matched": ReportKind.NAIVE_MATCHED,
    "naive-full": ReportKind.NAIVE_FULL,
}
DEFAULT_ESTIMATORS = "or,ipw,dr,naive-matched,naive-full"

err_console = Console(stderr=True, highlight=False, markup=False, soft_wrap=True)


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except BdrError as e:
        raise StageError(name, e) from e


# ------------------------------ argument types ------------------------------


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _non_negative_float(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _column_list(text: str) -> list[str]:
    return [c.strip() for c in text.split(",") if c.strip()]


def _estimator_list(text: str) -> list[str]:
    names = _column_list(text.lower())
    for name in names:
        if name not in ESTIMATOR_NAMES and name != "naive":
            known = ", ".join([*ESTIMATOR_NAMES, "naive"])
            raise argparse.ArgumentTypeError(f"unknown estimator {name!r} (known: {known})")
    if not names:
        raise argparse.ArgumentTypeError("no estimators given")
    return names


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_bool(key: str, text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ValueError(f"{key}: expected a boolean, got {text!r}")


# ------------------------------ parser ------------------------------


def _add_seed_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=_non_negative_int, default=None,
                   help="root seed (generated and printed when omitted)")
    p.add_argument("--threads", type=_positive_int, default=1,
                   help="replicate-level worker threads")
    p.add_argument("--out-dir", default=".", help="directory for written artifacts")


def _add_bayes_flags(p: argparse.ArgumentParser, reps: int, prior_mean: Optional[float]) -> None:
    p.add_argument("--reps", type=_positive_int, default=reps, metavar="M",
                   help="bootstrap replicates L = posterior predictive samples M")
    p.add_argument("--resample-V", dest="resample_v", type=_positive_int, default=1000,
                   metavar="V", help="covariate vectors resampled per ATE sample")
    p.add_argument("--prior-mean", type=float, default=prior_mean,
                   help="mean of the Normal prior on the treatment coefficient")
    p.add_argument("--prior-sd", type=_positive_float, default=1.0)
    p.add_argument("--faith-k", type=_non_negative_float, default=1.0,
                   help="measure of faith in the prior (0 disables prior mixing)")
    p.add_argument("--degree", type=_positive_int, default=1, help="OR polynomial degree")
    p.add_argument("--ps-degree", type=_positive_int, default=1, help="PS polynomial degree")
    p.add_argument("--reestimate-ps", action="store_true",
                   help="refit the propensity score inside every replicate")


def _add_matching_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ratio", type=_positive_int, default=1, help="controls per treated unit")
    p.add_argument("--caliper", type=_positive_float, default=None)
    p.add_argument("--with-replacement", action="store_true")


def _add_input_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="input CSV")
    p.add_argument("--outcome-col", default="y")
    p.add_argument("--treatment-col", default="d")
    p.add_argument("--covariate-cols", type=_column_list, default=[],
                   help="comma separated covariate columns")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="bdr", description="Approximate bayesian doubly robust ATE estimation"
    )
    parser.add_argument("--config", default=None, help="flat key = value settings file")
    parser.add_argument("--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    simulate = sub.add_parser("simulate", help="run the five-model simulation study")
    simulate.add_argument("--runs", type=_positive_int, default=DEFAULT_RUNS)
    simulate.add_argument("--n", type=_positive_int, default=1000, help="units per dataset")
    simulate.add_argument("--x-scale", type=_positive_float, default=X_SCALE,
                          help="standard deviation of the covariate")
    simulate.add_argument("--y-noise-scale", type=_positive_float, default=Y_NOISE_SCALE,
                          help="standard deviation of the outcome noise")
    simulate.add_argument("--estimates", action="store_true",
                          help="include per-run estimates in the JSON")
    simulate.add_argument("--emit-csv", default=None, metavar="PATH",
                          help="also write one generated dataset to PATH")
    simulate.add_argument("--calibrate-scale", action="store_true",
                          help="report the covariate-scale calibration and exit")
    _add_bayes_flags(simulate, DEFAULT_SIM_REPS, prior_mean=5.0)
    _add_seed_flags(simulate)

    estimate = sub.add_parser("estimate", help="estimate the ATE of a CSV dataset")
    _add_input_flags(estimate)
    estimate.add_argument("--estimators", type=_estimator_list,
                          default=_estimator_list(DEFAULT_ESTIMATORS))
    estimate.add_argument("--no-matching", action="store_true",
                          help="estimate on the full sample instead of the matched one")
    estimate.add_argument("--frequentist-reps", type=_non_negative_int, default=1000,
                          metavar="B", help="frequentist bootstrap resamples (0 skips)")
    estimate.add_argument("--baseline-col", default=None,
                          help="column whose mean converts the ATE to a percent change")
    estimate.add_argument("--samples", action="store_true",
                          help="include the ATE samples in the JSON")
    _add_bayes_flags(estimate, 1000, prior_mean=None)
    _add_matching_flags(estimate)
    _add_seed_flags(estimate)

    match_p = sub.add_parser("match", help="nearest-neighbour propensity score matching")
    _add_input_flags(match_p)
    match_p.add_argument("--ps-degree", type=_positive_int, default=1)
    match_p.add_argument("--out-dir", default=".")
    _add_matching_flags(match_p)

    diff = sub.add_parser("difference", help="append post - pre as a new column")
    diff.add_argument("--input", required=True)
    diff.add_argument("--pre-col", required=True)
    diff.add_argument("--post-col", required=True)
    diff.add_argument("--out-col", default="y")
    diff.add_argument("--output", default=None, help="defaults to <out-dir>/differenced.csv")
    diff.add_argument("--out-dir", default=".")

    report = sub.add_parser("report", help="merge estimate JSON reports")
    report.add_argument("paths", nargs="+", help="estimate JSON files")
    report.add_argument("--out-dir", default=".")

    subparsers = {
        "simulate": simulate,
        "estimate": estimate,
        "match": match_p,
        "difference": diff,
        "report": report,
    }
    return parser, subparsers


# ------------------------------ config file ------------------------------


def read_config_file(path) -> dict[str, str]:
    ret = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        ret[key.lstrip("-").replace("-", "_").lower()] = value
    return ret


def _apply_config(subparser: argparse.ArgumentParser, entries: dict[str, str]) -> None:
    # string defaults are converted by the action's `type` at parse time
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in entries.items():
        action = actions.get(key)
        if action is None or key in ("help", "paths"):
            raise ValueError(f"unknown config key {key!r} for {subparser.prog}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = _parse_bool(key, value)
        else:
            defaults[key] = value
    subparser.set_defaults(**defaults)


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        try:
            entries = read_config_file(args.config)
            _apply_config(subparsers[args.command], entries)
        except (OSError, ValueError) as e:
            parser.error(f"--config: {e}")
        args = parser.parse_args(argv)

    k = getattr(args, "faith_k", None)
    if getattr(args, "prior_mean", None) is not None and k is not None and 0 < k < 1:
        parser.error(f"--faith-k: must be 0 (no prior) or >= 1 with a prior, got {k:g}")
    return args


# ------------------------------ commands ------------------------------


def _materialize_seed(args: argparse.Namespace) -> int:
    if args.seed is None:
        args.seed = fresh_seed()
        err_console.print(f"seed: {args.seed}")
    return args.seed


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _prior(args: argparse.Namespace) -> Optional[PriorSpec]:
    if args.prior_mean is None or args.faith_k == 0:
        return None
    return PriorSpec(mean=args.prior_mean, sd=args.prior_sd, k=args.faith_k)


def _wrote(path: Path) -> None:
    err_console.print(f"wrote {path}")


def cmd_simulate(args: argparse.Namespace) -> int:
    seed = _materialize_seed(args)
    out = _out_dir(args)
    streams = RandomStreams(seed)

    if args.calibrate_scale:
        with stage("calibrate"):
            calibration = scale_calibration(max(args.n, 2), streams)
        doc = {"schema_version": 1, "artifact": "calibration", "seed": seed,
               **calibration.to_dict()}
        _wrote(dump_json(doc, out / "calibration.json"))
        print(
            f"BOR2 average: variance reading {calibration.variance_reading:.4f}, "
            f"sd reading {calibration.sd_reading:.4f}; adopted: {calibration.adopted}"
        )
        return EXIT_OK

    params = DgpParams(n=args.n, x_scale=args.x_scale, y_noise_scale=args.y_noise_scale)
    prior = _prior(args)
    config = simulation_config(
        L=args.reps,
        V=args.resample_v,
        prior_mean=args.prior_mean,
        prior_sd=args.prior_sd,
        k=0.0 if prior is None else prior.k,
        seed=seed,
        threads=args.threads,
    )
    config = replace(config, degree=args.degree, ps_degree=args.ps_degree,
                     reestimate_ps=args.reestimate_ps)

    if args.emit_csv:
        with stage("emit-csv"):
            write_dgp_csv(params, streams.generator(Stage.SEED), args.emit_csv)
        _wrote(Path(args.emit_csv))

    with stage("simulate"):
        report = run_simulation_study(args.runs, params, config, streams)

    doc = simulation_document(report, include_estimates=args.estimates)
    text = render_table(simulation_table(doc), [doc])
    _wrote(dump_json(doc, out / "simulation.json"))
    (out / "simulation.txt").write_text(text, encoding="utf-8")
    _wrote(out / "simulation.txt")
    sys.stdout.write(text)
    return EXIT_OK


def _estimate_kinds(names: Sequence[str], use_matching: bool) -> list[ReportKind]:
    ret = []
    for name in names:
        if name == "naive":
            name = "naive-matched" if use_matching else "naive-full"
        kind = ESTIMATOR_NAMES[name]
        if kind not in ret:
            ret.append(kind)
    return ret


def cmd_estimate(args: argparse.Namespace) -> int:
    seed = _materialize_seed(args)
    out = _out_dir(args)

    with stage("load"):
        dataset = load_csv(args.input, args.outcome_col, args.treatment_col, args.covariate_cols)
    with stage("validate"):
        dataset.require_valid()

    baseline = None
    if args.baseline_col:
        with stage("baseline"):
            baseline = float(load_csv(args.input, args.baseline_col, args.treatment_col).y.mean())

    prior = _prior(args)
    config = EstimatorConfig(
        bootstrap_reps=args.reps,
        covariate_resample_size=args.resample_v,
        prior=prior,
        measure_of_faith=1.0 if prior is None else prior.k,
        rng_seed=seed,
        degree=args.degree,
        ps_degree=args.ps_degree,
        reestimate_ps=args.reestimate_ps,
        frequentist_reps=args.frequentist_reps,
        threads=args.threads,
        use_matching=not args.no_matching,
        matching=MatchingConfig(args.ratio, args.with_replacement, args.caliper),
    )

    reports = []
    for kind in _estimate_kinds(args.estimators, config.use_matching):
        with stage(f"estimate {kind.value}"):
            report = run_estimator(dataset, config, kind)
        if baseline is not None:
            report = report.with_baseline(baseline)
        reports.append(report)

    source = {"path": str(args.input), "fingerprint": dataset.fingerprint, "n": dataset.n}
    doc = estimate_document(reports, include_samples=args.samples, source=source)
    text = render_table(estimate_table(doc["reports"]), [doc])

    _wrote(dump_json(doc, out / "estimate.json"))
    (out / "estimate.txt").write_text(text, encoding="utf-8")
    _wrote(out / "estimate.txt")
    metadata = {"seed": seed, "config": doc["config"], "source": source}
    for report in reports:
        path = out / f"posterior_{report.kind.value.lower()}.svg"
        svg = histogram_svg(
            report.bayes.samples,
            {**metadata, "estimator": report.label},
            title=f"Posterior predictive ATE ({report.label})",
        )
        path.write_text(svg, encoding="utf-8")
        _wrote(path)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_match(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    with stage("load"):
        dataset = load_csv(args.input, args.outcome_col, args.treatment_col, args.covariate_cols)
    with stage("propensity"):
        fit = estimate_propensity(dataset, args.ps_degree)
    with stage("match"):
        config = MatchingConfig(args.ratio, args.with_replacement, args.caliper)
        result = match(fit, dataset, config)

    result.write_csv(out / "matches.csv")
    _wrote(out / "matches.csv")
    save_csv(result.trimmed_dataset, out / "trimmed.csv")
    _wrote(out / "trimmed.csv")

    overlap = overlap_report(fit, dataset)
    rows = np.asarray(result.rows, dtype=np.intp)
    before = standardized_mean_difference(fit.scores, dataset.d)
    after = standardized_mean_difference(fit.scores[rows], dataset.d[rows])
    print(f"pairs: {len(result.pairs)}, trimmed n: {result.trimmed_dataset.n}")
    print(f"excluded treated: {len(result.excluded_treated)}")
    print(f"propensity SMD: before {before:.4f}, after {after:.4f}")
    print(
        f"off common support: {overlap.off_support} of {dataset.n} "
        f"({100 * overlap.off_support_fraction:.1f}%)"
    )
    return EXIT_OK


def cmd_difference(args: argparse.Namespace) -> int:
    output = Path(args.output) if args.output else _out_dir(args) / "differenced.csv"
    with stage("difference"):
        rows = difference(args.input, args.pre_col, args.post_col, args.out_col, output)
    _wrote(output)
    print(f"{rows} rows")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    sources = []
    with stage("load"):
        for p in args.paths:
            sources.append((Path(p).stem, load_report(p)))

    docs = [doc for _, doc in sources]
    reports = merge_reports(sources)
    text = render_table(estimate_table(reports), docs)
    (out / "report.txt").write_text(text, encoding="utf-8")
    _wrote(out / "report.txt")

    series = [(r["label"], r["bayes"]["samples"]) for r in reports if "samples" in r["bayes"]]
    if series:
        metadata = {"sources": [{"seed": d["seed"], "config": d["config"]} for d in docs]}
        (out / "report.svg").write_text(overlaid_histogram_svg(series, metadata), encoding="utf-8")
        _wrote(out / "report.svg")
    else:
        err_console.print("no ATE samples in the inputs (estimate --samples); skipping report.svg")
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "match": cmd_match,
    "difference": cmd_difference,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)  # exits with EXIT_USAGE on bad flags
    if args.verbose:
        from bdr import enable_verbose_logging

        enable_verbose_logging()

    try:
        return COMMANDS[args.command](args)
    except StageError as e:
        err_console.print(f"error: {e.stage}: {e.cause}")
        return EXIT_ERROR
    except BdrError as e:
        err_console.print(f"error: {args.command}: {e}")
        return EXIT_ERROR
    except OSError as e:
        # output directory or artifact not writable
        err_console.print(f"error: {args.command}: {e}")
        return EXIT_ERROR
    except ValueError as e:
        # settings that only fail once combined (e.g. config validation)
        err_console.print(f"usage error: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
