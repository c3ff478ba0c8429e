"""
Multiscale field laboratory: main entry point.

Usage:
    python -m src.main run experiments/quickstart_variance.json [--seed N] [--replicates N] [--out DIR] [--assert-verdicts]
    python -m src.main oracle [--n 8] [--p 1/2] [--functional sum] [--level 1]
    python -m src.main bounds eval TailOscAlg C=2 beta=1 d=1 delta=0.5 L=16
    python -m src.main weights table algebraic beta=2 --d 1
"""

import sys
import argparse
import logging
from typing import Dict, List, Tuple

from src.bounds import BoundRegime, evaluate
from src.config import Config
from src.errors import EnumerationCapError, LabError, ValidationError
from src.oracle import CellLaw, TinyFieldSpec, TinyFunctional, efron_stein_check, exact_alpha, exact_moments
from src.services.experiment import load_config
from src.services.formatter import ReportFormatter
from src.services.runner import run_experiment
from src.weights import DimensionContext, WeightFamily

# ---------------------------------------------------------------------------
# Logging
# ---------------------------------------------------------------------------

_handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
if Config.LOG_FILE:
    _handlers.append(logging.FileHandler(Config.LOG_FILE))

logging.basicConfig(
    level=getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=_handlers,
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VALIDATION = 2
EXIT_VERDICT = 3

# Keys of ``bounds eval`` that are curve arguments rather than regime parameters.
_POINT_ARGS = ("delta", "L", "x_norm", "R", "D", "p", "base", "u", "r")

# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _parse_pairs(items: List[str]) -> Dict[str, str]:
    pairs = {}
    for item in items:
        if "=" not in item:
            raise ValidationError(item, "expected key=value")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def _as_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ValidationError(key, f"expected a number, got {value!r}")


def _weight_from_pairs(pairs: Dict[str, str], kind: str = None) -> WeightFamily:
    data = {"kind": kind or pairs.get("weight")}
    for name in ("beta", "c", "R", "normalization"):
        for key in (f"weight_{name}", name if kind else None):
            if key and key in pairs:
                data[name] = _as_float(key, pairs[key])
    return WeightFamily.from_dict(data)


def cmd_run(args) -> int:
    config = load_config(args.config).with_overrides(
        seed=args.seed, replicates=args.replicates, output_dir=args.out,
    )
    report = run_experiment(config)

    print("\n--- REPORT ---")
    print(ReportFormatter.format_summary(report))
    print("--------------\n")

    if args.assert_verdicts and not report.all_dominated:
        logger.error("Verdict failure: at least one regime does not dominate the data")
        return EXIT_VERDICT
    return EXIT_OK


def cmd_oracle(args) -> int:
    law = CellLaw.bernoulli(args.p)
    X = TinyFunctional(args.functional, level=args.level if args.functional == "threshold_count" else None)
    spec = TinyFieldSpec.iid(args.n, law)
    moments = exact_moments(spec, X)
    check = efron_stein_check(spec, X)
    duplicated = TinyFieldSpec(2, (law,), {1: 0})
    entries: List[Tuple[str, object]] = [
        ("cells", args.n),
        ("functional", X.label),
        ("mean", moments.mean),
        ("variance", moments.variance),
        ("fourth central moment", moments.fourth_central),
        ("efron-stein rhs", check.rhs),
        ("efron-stein holds", check.holds),
        ("alpha iid {0} vs {1}", exact_alpha(spec, [0], [1]) if args.n >= 2 else "n/a"),
        ("alpha copy {0} vs {1}", exact_alpha(duplicated, [0], [1])),
    ]
    print(ReportFormatter.format_oracle_table(entries))
    return EXIT_OK if check.holds else EXIT_ERROR


def cmd_bounds(args) -> int:
    pairs = _parse_pairs(args.params)
    weight = _weight_from_pairs(pairs) if "weight" in pairs else None
    ctx = DimensionContext(int(_as_float("d", pairs["d"]))) if "d" in pairs else None
    point = {k: _as_float(k, v) for k, v in pairs.items() if k in _POINT_ARGS}
    params = {"C": 1.0}
    params.update(
        {k: _as_float(k, v) for k, v in pairs.items() if k not in _POINT_ARGS and not k.startswith("weight")}
    )
    regime = BoundRegime(args.regime, params)
    value = evaluate(regime, point, weight, ctx)
    print(ReportFormatter.format_bound_value(regime.kind.value, point, value))
    return EXIT_OK


def cmd_weights(args) -> int:
    pairs = _parse_pairs(args.params)
    weight = _weight_from_pairs(pairs, kind=args.family)
    print(ReportFormatter.format_weight_table(weight, DimensionContext(args.d), args.ell))
    return EXIT_OK


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Multiscale functional-inequality field laboratory")
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help="Run an experiment config")
    run.add_argument('config')
    run.add_argument('--seed', type=int)
    run.add_argument('--replicates', type=int)
    run.add_argument('--out')
    run.add_argument('--assert-verdicts', action='store_true')
    run.set_defaults(handler=cmd_run)

    oracle = sub.add_parser('oracle', help="Print exact enumeration tables")
    oracle.add_argument('--n', type=int, default=8)
    oracle.add_argument('--p', default="1/2")
    oracle.add_argument('--functional', choices=['sum', 'cell_product', 'threshold_count'], default='sum')
    oracle.add_argument('--level', default="1")
    oracle.set_defaults(handler=cmd_oracle)

    bounds = sub.add_parser('bounds', help="Evaluate a bound regime")
    bounds.add_argument('action', choices=['eval'])
    bounds.add_argument('regime')
    bounds.add_argument('params', nargs='*')
    bounds.set_defaults(handler=cmd_bounds)

    weights = sub.add_parser('weights', help="Tabulate a weight family")
    weights.add_argument('action', choices=['table'])
    weights.add_argument('family')
    weights.add_argument('params', nargs='*')
    weights.add_argument('--d', type=int, default=1)
    weights.add_argument('--ell', type=float, nargs='+', default=[0.0, 1.0, 2.0, 4.0, 8.0, 16.0])
    weights.set_defaults(handler=cmd_weights)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if not Config.validate():
        return EXIT_VALIDATION

    try:
        return args.handler(args)
    except (ValidationError, EnumerationCapError) as exc:
        logger.error("Invalid input: %s", exc)
        return EXIT_VALIDATION
    except LabError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return EXIT_ERROR
    except Exception as exc:
        logger.exception("Unexpected failure in %s: %s", args.command, exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
