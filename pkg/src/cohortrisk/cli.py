"""Command-line pipeline: synth -> cohort -> featurize -> cv -> report.

Each stage reads and writes explicit files and leaves a JSON manifest next
to its output. Exit codes: 0 ok, 2 usage or configuration error, 3 cohort
matching infeasible, 4 degenerate design, 5 misaligned inputs.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from importlib import metadata
from pathlib import Path

from .cohort import Cohort, CohortSpec, build_cohort, encounter_histogram
from .design import DesignMatrix
from .emr import load_dataset
from .errors import (
    ColumnMismatch,
    ConfigInvalid,
    DegenerateDesign,
    EmptyCohort,
    InsufficientPool,
    MisalignedCohorts,
    NotPositiveDefinite,
    OneClassOnly,
    ParseError,
    TooFewSamples,
    UnknownPatient,
)
from .evaluation import SELECTORS, CvReport, coefficient_stability, cross_validate
from .features import FeatureDictionary, build_design_matrix, default_dictionary
from .figures import STABILITY_COLUMNS, emit_figure_data, stability_rows, write_rows
from .glm import FitOptions
from .synth import GeneratorConfig, generate_population

log = logging.getLogger("cohortrisk")

EXIT_OK, EXIT_USAGE, EXIT_POOL, EXIT_DEGENERATE, EXIT_MISALIGNED = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _version() -> str:
    try:
        return metadata.version("cohortrisk")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(path: Path, subcommand: str, inputs: dict, outputs: dict, seed, started: str) -> None:
    manifest = {
        "subcommand": subcommand,
        "inputs": {k: {"path": str(v), "sha256": _sha256(Path(v))} for k, v in inputs.items() if v},
        "outputs": {k: {"path": str(v), "sha256": _sha256(Path(v))} for k, v in outputs.items()},
        "seed": seed,
        "tool_version": _version(),
        "started": started,
        "finished": _now(),
    }
    path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")


def _manifest_for(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json")


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def _nonneg(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def cmd_synth(args) -> int:
    started = _now()
    config = GeneratorConfig.read(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    paths = generate_population(config, args.out_dir)
    write_manifest(Path(args.out_dir) / "run_manifest.json", "synth", {"config": args.config}, paths, config.seed, started)
    return EXIT_OK


def _load_spec(args) -> CohortSpec:
    data = {}
    if args.spec:
        try:
            data = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigInvalid(f"cannot read cohort spec: {exc}") from None
    if args.seed is not None:
        data["seed"] = args.seed
    if args.age_tolerance is not None:
        data["age_tolerance_years"] = args.age_tolerance
    if args.controls_per_case is not None:
        data["controls_per_case"] = args.controls_per_case
    if args.max_cases is not None:
        data["max_cases"] = args.max_cases
    try:
        return CohortSpec.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"invalid cohort spec: {exc}") from None


def cmd_cohort(args) -> int:
    started = _now()
    spec = _load_spec(args)
    dataset = load_dataset(args.patients, args.encounters)
    cohort = build_cohort(dataset, spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cohort.write(out)
    hist_path = out.with_name("encounter_histogram.csv")
    rows = [{"encounters": n, "cases": c, "controls": k} for n, (c, k) in encounter_histogram(cohort.assignments, dataset).items()]
    write_rows(hist_path, rows, ["encounters", "cases", "controls"])
    inputs = {"patients": args.patients, "encounters": args.encounters, "spec": args.spec}
    write_manifest(_manifest_for(out), "cohort", inputs, {"cohort": out, "histogram": hist_path}, spec.seed, started)
    return EXIT_OK


def _read_dictionary(path) -> FeatureDictionary:
    try:
        return FeatureDictionary.read(path)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(f"invalid feature dictionary {path}: {exc}") from None


def cmd_featurize(args) -> int:
    started = _now()
    dictionary = _read_dictionary(args.dict) if args.dict else default_dictionary()
    if not 1 <= args.set <= dictionary.max_category:
        raise UsageError(f"--set must be in 1..{dictionary.max_category}, got {args.set}")
    cohort = Cohort.read(args.cohort)
    dataset = load_dataset(args.patients, args.encounters)
    design = build_design_matrix(cohort.assignments, dataset, dictionary, args.set)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    design.write_csv(out)
    inputs = {"cohort": args.cohort, "patients": args.patients, "encounters": args.encounters, "dict": args.dict}
    write_manifest(_manifest_for(out), "featurize", inputs, {"design": out}, cohort.seed, started)
    return EXIT_OK


def cmd_cv(args) -> int:
    started = _now()
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    design = DesignMatrix.read_csv(args.design)
    seed = 0 if args.seed is None else args.seed
    report = cross_validate(
        design,
        args.select,
        args.folds,
        seed,
        FitOptions(),
        threads=args.threads,
        feature_set=args.feature_set,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(out)
    write_manifest(_manifest_for(out), "cv", {"design": args.design}, {"cv_report": out}, seed, started)
    return EXIT_OK


def _keyed_reports(paths) -> dict:
    reports = {}
    position: dict[str, int] = {}
    for p in paths:
        rep = CvReport.read(p)
        position[rep.selector] = position.get(rep.selector, 0) + 1
        fs = rep.feature_set if rep.feature_set is not None else position[rep.selector]
        key = (int(fs), rep.selector)
        if key in reports:
            raise UsageError(f"two reports for feature set {fs} with selector {rep.selector}")
        reports[key] = rep
    return reports


def cmd_report(args) -> int:
    started = _now()
    reports = _keyed_reports(args.cv_reports)
    cohort = Cohort.read(args.cohort)
    ids = {a.patient_id for a in cohort.assignments}
    for key, rep in reports.items():
        if set(rep.row_ids) != ids:
            raise MisalignedCohorts(f"report for feature set {key[0]} ({key[1]}) does not match the cohort")
    out = Path(args.out_dir)
    figures = emit_figure_data(reports)
    outputs = {p.stem: p for p in figures.write(out)}

    candidates = [k for k in reports if k[1] == args.stability_selector] or list(reports)
    key = max(candidates)
    rep = reports[key]
    stability = coefficient_stability(
        [f.model for f in rep.per_fold],
        rep.column_counts,
        rep.n_cases,
        rep.n_controls,
        min_folds=args.min_folds,
        beta_magnitude=args.beta_magnitude,
    )
    rows = stability_rows(stability)
    for row in rows:
        p = row["p_value"]
        row["significant"] = None if p is None else p < args.alpha
    stab_path = out / "stability_table.csv"
    write_rows(stab_path, rows, STABILITY_COLUMNS)
    outputs["stability_table"] = stab_path
    inputs = {f"cv_report_{i}": p for i, p in enumerate(args.cv_reports)}
    inputs["cohort"] = args.cohort
    write_manifest(out / "run_manifest.json", "report", inputs, outputs, cohort.seed, started)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    def global_flags(p, default):
        # subcommand copies default to SUPPRESS so they never clobber a value
        # given before the subcommand name
        p.add_argument("--seed", type=_u64, default=default(None), help="master seed (64-bit unsigned)")
        p.add_argument("--threads", type=_nonneg, default=default(1), help="worker threads, 0 = one per CPU")

    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, lambda v: argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="cohortrisk", description=__doc__.splitlines()[0])
    global_flags(parser, lambda v: v)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic population")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cohort", parents=[common], help="identify cases and match controls")
    p.add_argument("--patients", required=True)
    p.add_argument("--encounters", required=True)
    p.add_argument("--spec", help="cohort spec JSON; defaults apply when omitted")
    p.add_argument("--out", required=True)
    p.add_argument("--age-tolerance", type=_nonneg, help="widen or narrow the age matching band (years)")
    p.add_argument("--controls-per-case", type=int)
    p.add_argument("--max-cases", type=int)
    p.set_defaults(func=cmd_cohort)

    p = sub.add_parser("featurize", parents=[common], help="build a cumulative design matrix")
    p.add_argument("--cohort", required=True)
    p.add_argument("--patients", required=True)
    p.add_argument("--encounters", required=True)
    p.add_argument("--dict", help="features.json; the built-in dictionary when omitted")
    p.add_argument("--set", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("cv", parents=[common], help="cross-validate a design")
    p.add_argument("--design", required=True)
    p.add_argument("--select", choices=SELECTORS, default="none")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--feature-set", type=int, help="feature-set number recorded in the report")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("report", parents=[common], help="figure tables and the stability table")
    p.add_argument("--cv-reports", nargs="+", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--stability-selector", choices=SELECTORS, default="forward")
    p.add_argument("--min-folds", type=int, default=5)
    p.add_argument("--beta-magnitude", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("COHORTRISK_LOG")
    if level:
        logging.basicConfig(level=level.upper(), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"cohortrisk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigInvalid, ParseError, TooFewSamples, ColumnMismatch, UnknownPatient, OSError) as exc:
        print(f"cohortrisk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InsufficientPool as exc:
        print(f"cohortrisk: error: {exc}", file=sys.stderr)
        return EXIT_POOL
    except (DegenerateDesign, NotPositiveDefinite, OneClassOnly, EmptyCohort) as exc:
        print(f"cohortrisk: error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except MisalignedCohorts as exc:
        print(f"cohortrisk: error: {exc}", file=sys.stderr)
        return EXIT_MISALIGNED


if __name__ == "__main__":
    sys.exit(main())
