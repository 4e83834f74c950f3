"""
Command-line front end.

    python -m pbchernoff bound compute --config query.json
    python -m pbchernoff bound compare --config query.json --kinds mcallester,seeger,chernoff_kl
    python -m pbchernoff posterior optimize --class class.json --delta 0.05 [--fixed-lambda 1]
    python -m pbchernoff validate {coverage,lemma2,expmoment} --config experiment.json
    python -m pbchernoff cgf estimate --samples losses.csv --lambda-grid 0:5:0.05
    python -m pbchernoff cgf logsobolev --samples pairs.csv

Exit codes: 0 success, 2 config parse error, 3 domain/precondition error,
4 validation assertion failed.
"""

import argparse
import io
import json
import logging
import math
import sys
import traceback
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, TextIO

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from .bounds import BoundQuery, compute_bound
from .cgf import LossSampleError, LossSampleSet, empirical_cgf, load_loss_gradient_pairs, rate_from_spec
from .config import LOG_LEVELS, get_settings
from .environments import environment_from_spec
from .harness import (
    check_exp_moment,
    check_lemma2,
    logsobolev_ratio,
    run_coverage,
)
from .logging_config import close_run_logger, configure_logging, get_run_logger, new_run_id
from .posterior import (
    SimplexDistribution,
    load_model_class,
    map_index,
    optimal_posterior,
    optimize_bound,
    parametric_bound,
)
from .schemas import BoundConfig, CoverageConfig, ExpMomentConfig, Lemma2Config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DOMAIN = 3
EXIT_ASSERTION = 4

FLOAT_FORMAT = "%.17g"


class ConfigError(Exception):
    """Input that cannot be parsed (exit code 2)."""
    pass


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _format_float(value: float) -> str:
    if math.isnan(value):
        return '"nan"'
    if math.isinf(value):
        return '"inf"' if value > 0 else '"-inf"'
    return format(value, ".17g")


def dumps_json(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float printed to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (float, np.floating)):
        return _format_float(float(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, np.ndarray):
        return dumps_json(obj.tolist(), indent, _level)
    if isinstance(obj, Path):
        return json.dumps(str(obj))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{dumps_json(v, indent, _level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    return json.dumps(obj)


def format_csv(frame: pd.DataFrame) -> str:
    """CSV body with 17-digit floats, preceded by a generation timestamp line."""
    buffer = io.StringIO()
    buffer.write(f"# generated_at={datetime.now(timezone.utc).isoformat()}\n")
    frame.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return buffer.getvalue()


def _write_text(text: str, path: Optional[Path], stream: TextIO) -> None:
    if path is None:
        stream.write(text if text.endswith("\n") else text + "\n")
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
    logger.info(f"Wrote {path}")


def _emit(args: argparse.Namespace, document: Dict[str, Any], table: Optional[pd.DataFrame],
          default_format: str, stdout: TextIO) -> None:
    """
    Write the command output.

    Without --out the selected format goes to stdout. With --out the table
    (if any) goes to <out>.csv and the JSON document to <out>.json; the JSON
    document is also echoed to stdout.
    """
    fmt = args.format or default_format
    if args.out is None:
        if fmt == "csv" and table is not None:
            _write_text(format_csv(table), None, stdout)
        else:
            _write_text(dumps_json(document), None, stdout)
        return
    out = Path(args.out)
    if table is not None:
        _write_text(format_csv(table), out.with_suffix(".csv"), stdout)
    _write_text(dumps_json(document), out.with_suffix(".json"), stdout)
    _write_text(dumps_json(document), None, stdout)


# ---------------------------------------------------------------------------
# Input
# ---------------------------------------------------------------------------


def _read_json(path: str) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: malformed JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e


def _load_config(path: str, model: type) -> BaseModel:
    return model.model_validate(_read_json(path))


def parse_lambda_grid(text: str) -> np.ndarray:
    """'start:stop:step' (stop inclusive) or a comma-separated list."""
    try:
        if ":" in text:
            start, stop, step = (float(part) for part in text.split(":"))
            if not step > 0 or stop < start:
                raise ValueError
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return start + step * np.arange(count)
        return np.array([float(part) for part in text.split(",")])
    except ValueError as e:
        raise ConfigError(f"invalid --lambda-grid {text!r}; expected start:stop:step or a,b,c") from e


def _load_csv(loader, path: str):
    try:
        return loader(path)
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError, LossSampleError) as e:
        raise ConfigError(f"cannot read samples CSV {path}: {e}") from e


def _resolve_seed(args: argparse.Namespace, config_seed: Optional[int] = None) -> int:
    if args.seed is not None:
        return args.seed
    if config_seed is not None:
        return config_seed
    return get_settings().seed


def _resolve_workers(args: argparse.Namespace) -> int:
    return args.workers if args.workers is not None else get_settings().workers


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_bound(args: argparse.Namespace, stdout: TextIO) -> int:
    config: BoundConfig = _load_config(args.config, BoundConfig)
    q = BoundQuery(config.emp_gibbs_risk, config.kl_div, config.n, config.delta)
    rate = rate_from_spec(config.psi.model_dump()) if config.psi is not None else None
    echo = config.model_dump()

    if args.action == "compute":
        report = compute_bound(config.kind, q, rate, config.params)
        document = {"config": echo, "report": report.to_dict()}
        reports = [report]
    else:
        kinds = args.kinds.split(",") if args.kinds else (config.kinds or [config.kind])
        echo["kinds"] = kinds
        reports = [compute_bound(kind.strip(), q, rate, config.params) for kind in kinds]
        document = {"config": echo, "reports": [r.to_dict() for r in reports]}

    table = pd.DataFrame([
        {k: v for k, v in r.to_dict().items() if not isinstance(v, (dict, bool))} for r in reports
    ])
    _emit(args, document, table, "json", stdout)
    return EXIT_OK


def cmd_posterior(args: argparse.Namespace, stdout: TextIO) -> int:
    model_class = load_model_class(args.class_path)
    echo = {
        "class": args.class_path,
        "delta": args.delta,
        "fixed_lambda": args.fixed_lambda,
        "models": len(model_class),
        "n": model_class.n,
    }
    if args.fixed_lambda is not None:
        lam = args.fixed_lambda
        rho = optimal_posterior(model_class, lam)
        report = parametric_bound(model_class, rho, lam, args.delta)
        best = map_index(model_class, lam)
        evaluations = 0
    else:
        optimum = optimize_bound(model_class, args.delta)
        rho, lam, report, best = optimum.rho, optimum.lam, optimum.report, optimum.map_index
        evaluations = len(optimum.trace)

    document = {
        "config": echo,
        "weights": rho.weights.tolist(),
        "lambda": lam,
        "bound": report.to_dict(),
        "map_index": best,
        "evaluations": evaluations,
    }
    table = pd.DataFrame({"model": np.arange(len(rho)), "weight": rho.weights})
    _emit(args, document, table, "json", stdout)
    return EXIT_OK


def _open_run_logger(command: str, echo: Dict[str, Any]):
    if not get_settings().run_logs:
        return None
    run_logger = get_run_logger(new_run_id())
    run_logger.log_run("COMMAND", command)
    run_logger.log_config(echo)
    return run_logger


def cmd_validate(args: argparse.Namespace, stdout: TextIO) -> int:
    schema = {"coverage": CoverageConfig, "lemma2": Lemma2Config, "expmoment": ExpMomentConfig}[args.action]
    config = _load_config(args.config, schema)
    seed = _resolve_seed(args, config.seed)
    workers = _resolve_workers(args)
    env = environment_from_spec(config.environment.model_dump())
    echo = {**config.model_dump(), "seed": seed, "workers": workers}

    run_logger = _open_run_logger(f"validate {args.action}", echo)
    try:
        if args.action == "coverage":
            prior = SimplexDistribution(np.asarray(config.prior)) if config.prior is not None else None
            report = run_coverage(
                env, config.bound_kind, config.posterior_rule.model_dump(), config.n, config.delta,
                config.trials, seed, workers=workers, params=config.params, prior=prior,
                run_logger=run_logger,
            )
            summary = report.summary()
            table = pd.DataFrame(
                [asdict(r) for r in report.records],
                columns=["trial_id", "bound", "gibbs_true_risk", "gibbs_emp_risk", "violated"],
            )
            table["violated"] = table["violated"].astype(int)
        elif args.action == "lemma2":
            report = check_lemma2(env, config.model_index, config.n, config.c_grid, config.trials,
                                  seed, workers=workers)
            summary = report.summary()
            table = pd.DataFrame(
                [(r.c, r.survival, r.bound, r.se) for r in report.rows],
                columns=["c", "survival", "exp_neg_c", "se"],
            )
        else:
            report = check_exp_moment(env, config.model_index, config.n, config.m, config.trials,
                                      seed, workers=workers)
            summary = report.summary()
            table = pd.DataFrame([{k: summary[k] for k in ("estimate", "se", "bound", "trials")}])
        if run_logger and args.action != "coverage":
            run_logger.log_check(args.action, summary)
    except Exception as e:
        if run_logger:
            run_logger.log_error(f"validate {args.action}", str(e), traceback.format_exc())
        raise
    finally:
        if run_logger:
            close_run_logger(run_logger.run_id)

    document = {
        "config": echo,
        "run_id": run_logger.run_id if run_logger else None,
        "summary": summary,
    }
    _emit(args, document, table, "json", stdout)
    if not report.passed:
        logger.error(f"validate {args.action}: assertion failed beyond slack")
        return EXIT_ASSERTION
    return EXIT_OK


def cmd_cgf(args: argparse.Namespace, stdout: TextIO) -> int:
    if args.action == "estimate":
        samples = _load_csv(LossSampleSet.from_csv, args.samples)
        grid = parse_lambda_grid(args.lambda_grid or "0:5:0.05")
        rate = empirical_cgf(samples)
        values = np.asarray(rate.eval(grid), dtype=float)
        echo = {"samples": args.samples, "lambda_grid": grid.tolist(), "sample_size": samples.size}
        document = {
            "config": echo,
            "mean": rate.mean,
            "variance": rate.variance,
            "rows": [[float(l), float(v)] for l, v in zip(grid, values)],
        }
        table = pd.DataFrame({"lambda": grid, "cgf": values})
        _emit(args, document, table, "csv", stdout)
        return EXIT_OK

    pairs = _load_csv(load_loss_gradient_pairs, args.samples)
    grid = parse_lambda_grid(args.lambda_grid) if args.lambda_grid else None
    curve = logsobolev_ratio(pairs, grid)
    echo = {"samples": args.samples, "lambda_grid": curve.lambdas.tolist(), "sample_size": pairs.losses.size}
    document = {"config": echo, **curve.summary()}
    table = pd.DataFrame({"lambda": curve.lambdas, "ratio": curve.ratios})
    _emit(args, document, table, "json", stdout)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="64-bit seed (default: PBC_SEED)")
    common.add_argument("--out", default=None, help="output path; .csv/.json suffixes are added")
    common.add_argument("--format", choices=["json", "csv"], default=None)
    common.add_argument("--workers", type=int, default=None, help="worker threads (default: PBC_WORKERS)")
    common.add_argument("--log-level", type=str.upper, choices=LOG_LEVELS, default=None)

    parser = argparse.ArgumentParser(prog="pbchernoff", description="PAC-Bayes-Chernoff bounds")
    commands = parser.add_subparsers(dest="command", required=True)

    bound = commands.add_parser("bound", help="evaluate bounds").add_subparsers(dest="action", required=True)
    compute = bound.add_parser("compute", parents=[common])
    compute.add_argument("--config", required=True)
    compare = bound.add_parser("compare", parents=[common])
    compare.add_argument("--config", required=True)
    compare.add_argument("--kinds", default=None, help="comma-separated bound kinds")

    posterior = commands.add_parser("posterior", help="optimal posterior").add_subparsers(dest="action", required=True)
    optimize = posterior.add_parser("optimize", parents=[common])
    optimize.add_argument("--class", dest="class_path", required=True)
    optimize.add_argument("--delta", type=float, required=True)
    optimize.add_argument("--fixed-lambda", type=float, default=None)

    validate = commands.add_parser("validate", help="Monte Carlo checks").add_subparsers(dest="action", required=True)
    for name in ("coverage", "lemma2", "expmoment"):
        sub = validate.add_parser(name, parents=[common])
        sub.add_argument("--config", required=True)

    cgf = commands.add_parser("cgf", help="empirical CGF tools").add_subparsers(dest="action", required=True)
    for name in ("estimate", "logsobolev"):
        sub = cgf.add_parser(name, parents=[common])
        sub.add_argument("--samples", required=True)
        sub.add_argument("--lambda-grid", default=None)

    return parser


COMMANDS = {
    "bound": cmd_bound,
    "posterior": cmd_posterior,
    "validate": cmd_validate,
    "cgf": cmd_cgf,
}


def _validation_message(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def main(argv: Optional[Sequence[str]] = None, stdout: Optional[TextIO] = None,
         stderr: Optional[TextIO] = None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    if args.workers is not None and args.workers < 1:
        stderr.write(f"error: --workers={args.workers} must be >= 1\n")
        return EXIT_CONFIG

    try:
        return COMMANDS[args.command](args, stdout)
    except ConfigError as e:
        stderr.write(f"error: {e}\n")
        return EXIT_CONFIG
    except ValidationError as e:
        stderr.write(f"error: invalid config: {_validation_message(e)}\n")
        return EXIT_CONFIG
    except json.JSONDecodeError as e:
        stderr.write(f"error: malformed JSON at line {e.lineno}, column {e.colno}: {e.msg}\n")
        return EXIT_CONFIG
    except OSError as e:
        stderr.write(f"error: {e}\n")
        return EXIT_CONFIG
    except ValueError as e:
        stderr.write(f"error: {type(e).__name__}: {e}\n")
        return EXIT_DOMAIN
