"""
Report output: results.csv, verdicts.csv, report.json and the plain-text tables
printed by the CLI.
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Tuple

from ..weights import DimensionContext, WeightFamily, eval_weight, pi_star, tail_integral

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

RESULT_COLUMNS = (
    "experiment", "model_tag", "functional", "avg_kind", "param_name", "param_value",
    "value", "std_error", "n", "seed", "flags", "config_hash",
)

VERDICT_COLUMNS = (
    "regime", "params", "n_points", "C_fit", "dominated", "margin", "worst_point", "config_hash",
)


def _cell(value: Any) -> str:
    """CSV text for one value; floats use repr so reruns are byte-identical."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def _json_number(value: float) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


class ReportFormatter:
    """Write experiment reports and render CLI tables."""

    @staticmethod
    def _write_csv(path: Path, columns: Sequence[str], records: Iterable[Sequence[Any]]) -> None:
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for record in records:
                writer.writerow([_cell(v) for v in record])

    @staticmethod
    def verdict_record(verdict) -> Tuple[Any, ...]:
        fit = verdict.fit
        return (
            verdict.regime, verdict.params, verdict.n_points, fit.C_fit,
            fit.dominated, fit.margin, fit.worst_point, verdict.config_hash,
        )

    @staticmethod
    def write_report(report, output_dir: str) -> Dict[str, str]:
        """Write the three report files; returns their paths."""
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "results": out / "results.csv",
            "verdicts": out / "verdicts.csv",
            "report": out / "report.json",
        }

        ReportFormatter._write_csv(
            paths["results"], RESULT_COLUMNS, ([getattr(r, c) for c in RESULT_COLUMNS] for r in report.rows)
        )
        ReportFormatter._write_csv(
            paths["verdicts"], VERDICT_COLUMNS, (ReportFormatter.verdict_record(v) for v in report.verdicts)
        )

        document = {
            "schema_version": SCHEMA_VERSION,
            "columns": list(RESULT_COLUMNS),
            "verdict_columns": list(VERDICT_COLUMNS),
            "provenance": report.provenance,
            "row_count": len(report.rows),
            "verdicts": [
                {
                    "regime": v.regime,
                    "params": v.params,
                    "C_fit": _json_number(v.fit.C_fit),
                    "dominated": v.fit.dominated,
                    "margin": _json_number(v.fit.margin),
                    "worst_point": v.fit.worst_point,
                }
                for v in report.verdicts
            ],
            "scaling": None if report.scaling is None else report.scaling._asdict(),
        }
        paths["report"].write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info("Report written to %s", out)
        return {name: str(path) for name, path in paths.items()}

    # ------------------------------------------------------------------
    # Terminal output
    # ------------------------------------------------------------------

    @staticmethod
    def format_summary(report) -> str:
        parts: List[str] = []
        if report.rows:
            first = report.rows[0]
            parts.append(f"📊 {first.experiment} | {first.model_tag} | {first.functional}")
        for row in report.rows:
            flags = f"  [{row.flags}]" if row.flags else ""
            parts.append(
                f"  {row.param_name}={row.param_value:<12} {row.value:.6g} ± {row.std_error:.2g} (n={row.n}){flags}"
            )
        if report.scaling is not None:
            parts.append(f"📈 slope {report.scaling.slope:+.4f} (residual {report.scaling.residual:.3g})")
        for verdict in report.verdicts:
            icon = "✅" if verdict.fit.dominated else "❌"
            parts.append(
                f"{icon} {verdict.regime} C_fit={verdict.fit.C_fit:.4g} margin={verdict.fit.margin:.3g}"
                + ("" if verdict.fit.dominated else f" worst={verdict.fit.worst_point}")
            )
        parts.append(f"🔑 {report.provenance.get('config_hash', '')[:16]}")
        return "\n".join(parts)

    @staticmethod
    def format_weight_table(w: WeightFamily, ctx: DimensionContext, ells: Sequence[float]) -> str:
        parts = [f"⚖️ {w.label}, d={ctx.d}", f"{'ell':>8} {'pi':>14} {'tail':>14} {'pi_star':>14}"]
        for ell in ells:
            parts.append(
                f"{ell:>8g} {eval_weight(w, ell):>14.8g} {tail_integral(w, ell):>14.8g} {pi_star(w, ctx, ell):>14.8g}"
            )
        return "\n".join(parts)

    @staticmethod
    def format_bound_value(regime: str, args: Mapping[str, float], value: float) -> str:
        shown = ", ".join(f"{k}={v:g}" for k, v in sorted(args.items()))
        return f"{regime}({shown}) = {value:.12g}"

    @staticmethod
    def format_oracle_table(entries: Sequence[Tuple[str, Any]]) -> str:
        width = max((len(name) for name, _ in entries), default=0)
        parts = ["🔍 Oracle"]
        for name, value in entries:
            parts.append(f"  {name:<{width}}  {value}")
        return "\n".join(parts)
