"""Command-line entry point.

Subcommands: simulate, screen, fit, cv, evaluate, bootstrap, bench.
Settings come from defaults, then ``--config`` (flat ``key = value``),
then explicit flags. Errors are reported as one JSON line on stderr.
Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from . import io
from .bench import format_table, run_bench
from .core_model import DataError, apply_collection_scaling, standardize
from .evaluation import bootstrap_bands, marginal_screen, score_fit
from .simulation import SimScenario, generate_replicate
from .tgdr_engine import NumericError, Variant, _assemble, cross_validate, fit_variant

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# flag -> config key
OVERRIDES = {
    "case": "case",
    "p": "p",
    "variant": "variant",
    "seed": "seed",
    "tau": "tau",
    "delta": "delta_step",
    "tmax": "t_max",
    "folds": "cv_folds",
    "spline_d": "spline_D",
    "keep": "keep",
    "reps": "reps",
    "out": "out",
    "jobs": "jobs",
    "family": "family",
    "env_mode": "env_mode",
    "noise": "noise",
    "variants": "variants",
    "B": "bootstrap_B",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise io.UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value settings file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--tau", type=float)
    common.add_argument("--delta", type=float, help="step size")
    common.add_argument("--tmax", type=int, help="iteration cap")
    common.add_argument("--folds", type=int, help="cross-validation folds")
    common.add_argument("--spline-d", dest="spline_d", type=int, help="basis functions per factor")
    common.add_argument("--variant", choices=[v.value for v in Variant])
    common.add_argument("--jobs", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    scen = _Parser(add_help=False)
    scen.add_argument("--case")
    scen.add_argument("--p", type=int)
    scen.add_argument("--env-mode", dest="env_mode", choices=["nonlinear_a", "linear_b"])
    scen.add_argument("--noise", choices=["standard", "S1", "S2"])
    scen.add_argument("--family", choices=["linear", "aft"])

    parser = _Parser(prog="semitgdr", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common, scen], help="write a simulated training/test collection")

    s = sub.add_parser("screen", parents=[common], help="marginal screening of genes")
    s.add_argument("inputs", nargs="*")
    s.add_argument("--keep", type=int)

    for name, text in (("fit", "cross-validate and fit"), ("cv", "cross-validation curve only")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("inputs", nargs="*")

    s = sub.add_parser("evaluate", parents=[common], help="score a saved fit against simulation truth")
    s.add_argument("inputs", nargs="*", help="training files used for the fit")
    s.add_argument("--result", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--test", nargs="+", required=True)

    s = sub.add_parser("bootstrap", parents=[common], help="bootstrap bands for the fitted curves")
    s.add_argument("inputs", nargs="*")
    s.add_argument("--reps", type=int, dest="B", help="bootstrap resamples")

    s = sub.add_parser("bench", parents=[common, scen], help="Monte-Carlo replicates across variants")
    s.add_argument("--reps", type=int)
    s.add_argument("--variants", help="comma-separated variant list")
    return parser


def resolve_config(args) -> io.AnalysisConfig:
    values = {}
    if args.config:
        values.update(io.read_config(args.config))
    for flag, key in OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = io.coerce(key, v)
    if getattr(args, "inputs", None):
        values["inputs"] = list(args.inputs)
    return io.AnalysisConfig(**values).validate()


def _scenario(cfg: io.AnalysisConfig) -> SimScenario:
    try:
        return SimScenario(case=cfg.case, p=cfg.p, env_mode=cfg.env_mode, family=cfg.family,
                           noise=cfg.noise, seed=cfg.seed)
    except ValueError as exc:
        raise io.UsageError(str(exc)) from None


def _inputs(cfg):
    if not cfg.inputs:
        raise io.UsageError("no input files given")
    return io.ingest(cfg.inputs)


def truth_document(scenario: SimScenario, truth) -> dict:
    return {
        "scenario": {k: (v.value if hasattr(v, "value") else v) for k, v in asdict(scenario).items()},
        "beta": truth.beta.tolist(),
        "gamma_nonzero": [
            {"dataset": m + 1, "pair": [j, k], "value": float(truth.gamma[m][io.InteractionIndex(truth.beta.shape[1]).flat(j, k) - 1])}
            for m in range(truth.M) for j, k in sorted(truth.interaction_support[m])
        ],
    }


def truth_from_document(doc: dict):
    sc = doc["scenario"]
    sc = dict(sc, sizes=tuple(sc["sizes"]))
    scenario = SimScenario(**sc)
    from .simulation import GroundTruth, coefficient_table, env_functions

    beta, gamma = coefficient_table(scenario.case, scenario.p)
    if scenario.noise == "S2":
        beta, gamma = beta / 2, gamma / 2
    return GroundTruth(beta=beta, gamma=gamma, env=env_functions(scenario.case, scenario.env_mode))


def cmd_simulate(cfg, args):
    scenario = _scenario(cfg)
    train, test, truth = generate_replicate(scenario)
    io.write_collection(train, cfg.out, "dataset")
    io.write_collection(test, cfg.out, "test")
    io.dump_json(truth_document(scenario, truth), os.path.join(cfg.out, "truth.json"))


def cmd_screen(cfg, args):
    raw = _inputs(cfg)
    reduced, kept = marginal_screen(raw, cfg.keep)
    io.write_collection(reduced, cfg.out, "screened")
    io.dump_json({"keep": len(kept), "ranked_genes": [raw.gene_names[j] for j in kept]},
                 os.path.join(cfg.out, "screen.json"))


def cmd_fit(cfg, args):
    train = standardize(_inputs(cfg))
    fit = fit_variant(train, cfg.tgdr())
    os.makedirs(cfg.out, exist_ok=True)
    io.dump_json(io.result_document(fit, train), os.path.join(cfg.out, "result.json"))
    io.write_curves(fit.curves, train.env_names, cfg.out)
    return fit


def cmd_cv(cfg, args):
    train = standardize(_inputs(cfg))
    tc = cfg.tgdr()
    t_star, curve = cross_validate(train, tc.basis(), tc)
    os.makedirs(cfg.out, exist_ok=True)
    io.dump_json({"t_star": t_star, "cv_curve": curve.tolist(), "config": io._clean(asdict(tc))},
                 os.path.join(cfg.out, "cv.json"))


def load_fit(doc, train, cfg):
    """Rebuild a FitResult from a saved result document."""
    tc = replace(cfg.tgdr(), **{k: v for k, v in doc["config"].items() if k != "variant"},
                 variant=Variant.parse(doc["variant"]))
    states, means = io.states_from_document(doc)
    per = None
    if tc.variant is Variant.POOL:
        from .tgdr_engine import _selection

        per = [_selection([states[0]], tc.selection_tol, train.p)] * train.M
    return _assemble(tc.variant, states, means, tc.basis(), tc, train.family, doc["t_star"],
                     [np.asarray(c) for c in doc["cv_curve"]], per_dataset=per)


def cmd_evaluate(cfg, args):
    train = standardize(_inputs(cfg))
    test = apply_collection_scaling(io.ingest(args.test), train)
    truth = truth_from_document(io.load_json(args.truth))
    fit = load_fit(io.load_json(args.result), train, cfg)
    report = score_fit(fit, truth, train, test)
    os.makedirs(cfg.out, exist_ok=True)
    io.dump_json(io._clean(report.as_dict()), os.path.join(cfg.out, "report.json"))
    return report


def cmd_bootstrap(cfg, args):
    train = standardize(_inputs(cfg))
    fit = fit_variant(train, cfg.tgdr())
    curves, skipped = bootstrap_bands(train, fit, B=cfg.bootstrap_B, seed=cfg.seed)
    os.makedirs(cfg.out, exist_ok=True)
    io.write_curves(curves, train.env_names, cfg.out)
    io.dump_json({"B": cfg.bootstrap_B, "redrawn": skipped, "t_star": list(fit.t_star)},
                 os.path.join(cfg.out, "bootstrap.json"))


def cmd_bench(cfg, args):
    scenario = _scenario(cfg)
    variants = [v.strip() for v in cfg.variants.split(",") if v.strip()]
    tc = cfg.tgdr()
    if scenario.case == "VII":
        tc = replace(tc, hierarchy=False)
    result = run_bench(scenario, tc, variants, cfg.reps, cfg.jobs)
    os.makedirs(cfg.out, exist_ok=True)
    result["scenario"] = {k: (v.value if hasattr(v, "value") else v) for k, v in asdict(scenario).items()}
    result["reps"] = cfg.reps
    io.dump_json(io._clean(result), os.path.join(cfg.out, "bench.json"))
    with open(os.path.join(cfg.out, "bench_table.tsv"), "w") as fh:
        fh.write(format_table(result["summary"]))
    return result


COMMANDS = {
    "simulate": cmd_simulate,
    "screen": cmd_screen,
    "fit": cmd_fit,
    "cv": cmd_cv,
    "evaluate": cmd_evaluate,
    "bootstrap": cmd_bootstrap,
    "bench": cmd_bench,
}


def _fail(code: int, kind: str, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": str(exc), "exit": code}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg, args)
    except io.UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", exc)
    except (DataError, ValueError, OSError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
