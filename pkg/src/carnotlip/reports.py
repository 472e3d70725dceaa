"""
Audit reports and run artifacts.

Every audit in the library returns an ``AuditReport``: a pass/fail verdict,
scalar metrics, a list of violations and optional tables. The CLI renders
them as boxed text and writes JSON/CSV artifacts.
"""

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import pandas as pd

from .utils import json_ready

logger = logging.getLogger(__name__)


@dataclass
class AuditReport:
    """
    Outcome of an empirical audit.

    Attributes:
        name: Audit name
        passed: True if every audited invariant held
        metrics: Scalar measurements (coverage fraction, constants, ...)
        violations: One dict per failing item
        tables: Named DataFrames with per-item detail
    """
    name: str
    passed: bool
    metrics: Dict[str, Any] = field(default_factory=dict)
    violations: List[Dict[str, Any]] = field(default_factory=list)
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready payload (tables are summarized by row count)."""
        return json_ready({
            'name': self.name,
            'passed': self.passed,
            'metrics': self.metrics,
            'violations': self.violations,
            'tables': {k: len(v) for k, v in self.tables.items()},
        })

    def __bool__(self) -> bool:
        return bool(self.passed)


def format_report(report: AuditReport) -> str:
    """
    Generate a text report of an audit.

    Example:
        >>> print(format_report(AuditReport('tiling', True, {'coverage': 1.0})))
    """
    width = 46
    lines = [
        "╔" + "═" * width + "╗",
        "║ " + f"{report.name.upper()} REPORT".ljust(width - 1) + "║",
        "╠" + "═" * width + "╣",
        "║ " + f"{'Status:':<22}{'PASSED' if report.passed else 'FAILED':>22} " + "║",
    ]
    for key, value in report.metrics.items():
        if isinstance(value, float):
            text = f"{value:.6g}"
        else:
            text = str(value)
        if len(text) > 20:
            text = text[:17] + "..."
        lines.append("║ " + f"{key + ':':<24}{text:>20} " + "║")
    lines.append("╠" + "═" * width + "╣")
    lines.append("║ " + f"{'Violations:':<24}{len(report.violations):>20} " + "║")
    lines.append("╚" + "═" * width + "╝")
    return "\n".join(lines)


def build_payload(
    command: str,
    version: str,
    seed: int,
    config: Mapping[str, Any],
    payload: Mapping[str, Any]
) -> Dict[str, Any]:
    """Assemble the deterministic part of a run artifact."""
    return json_ready({
        'command': command,
        'version': version,
        'seed': seed,
        'config': dict(config),
        'payload': dict(payload),
    })


def write_artifacts(
    out_dir: str,
    command: str,
    version: str,
    seed: int,
    config: Mapping[str, Any],
    payload: Mapping[str, Any],
    tables: Optional[Mapping[str, pd.DataFrame]] = None
) -> List[Path]:
    """
    Write ``<command>.json`` plus one CSV per table.

    The JSON body is key-sorted; wall-clock information lives only under
    ``timestamps`` so reruns with an equal config differ in that field alone.

    Args:
        out_dir: Output directory (created if missing)
        command: Artifact stem, e.g. ``"decompose_run"``
        version: Library version
        seed: Root seed
        config: Command parameter record, embedded verbatim
        payload: Command results
        tables: Named DataFrames written as CSV

    Returns:
        List of written paths
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    body = build_payload(command, version, seed, config, payload)
    body['timestamps'] = {
        'written_utc': datetime.now(timezone.utc).isoformat(timespec='seconds')
    }

    written = []
    json_path = out / f"{command}.json"
    with open(json_path, 'w', encoding='utf-8') as f:
        json.dump(body, f, indent=2, sort_keys=True)
        f.write("\n")
    written.append(json_path)

    for name, df in (tables or {}).items():
        csv_path = out / f"{command}_{name}.csv"
        df.to_csv(csv_path, index=False, float_format='%.17g')
        written.append(csv_path)

    logger.info(f"Wrote {len(written)} artifacts to {out}")
    return written
