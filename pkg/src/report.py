import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

logger = logging.getLogger('apaths')


@dataclass
class CheckReport:
    """
    Outcome of one numerical check: the worst residual seen against a tolerance.

    Every checker in the package returns one of these (or a subclass carrying
    extra fields); the suite runner turns them into report records.
    """
    name: str
    residual: Optional[float]
    tolerance: float
    passed: bool
    details: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_residual(cls, name, residual, tolerance, **details):
        residual = float(residual)
        return cls(name=name, residual=residual, tolerance=float(tolerance),
                   passed=bool(math.isfinite(residual) and residual < tolerance),
                   details=details)

    def to_record(self):
        residual = self.residual
        if residual is not None and not math.isfinite(residual):
            residual = None
        record = {
            'name': self.name,
            'residual': residual,
            'tol': self.tolerance,
            'pass': bool(self.passed),
        }
        if self.details:
            record['detail'] = _plain(self.details)
        return record


def _plain(value):
    """Convert numpy scalars/arrays and tuples into JSON-ready values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if hasattr(value, 'tolist'):
        return _plain(value.tolist())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


@dataclass
class Report:
    version: str
    seed: int
    config: Dict[str, Any]
    records: List[CheckReport] = field(default_factory=list)
    wall_ms: float = 0.0

    @property
    def passed(self):
        return all(record.passed for record in self.records)

    def add(self, record):
        self.records.append(record)
        status = 'PASS' if record.passed else 'FAIL'
        logger.info(f"[{status}] {record.name}: residual={record.residual} tol={record.tolerance}")

    def to_dict(self):
        return {
            'version': self.version,
            'seed': self.seed,
            'config': _plain(self.config),
            'records': [record.to_record() for record in self.records],
            'pass': self.passed,
            'wall_ms': round(self.wall_ms, 3),
        }


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def emit_report(report, path):
    """
    Write the JSON report.

    Args:
        report: Report instance
        path: Output file path

    Raises:
        OSError: If the file cannot be written
    """
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(report.to_dict(), f, indent=2)
        f.write('\n')
    logger.info(f"Report written to {path} (pass={report.passed})")


def convergence_rows(n_t_values, defects):
    """
    Pair grid sizes with defects and the observed order log2(previous/current).
    """
    rows = []
    previous = None
    for n_t, defect in zip(n_t_values, defects):
        order = None
        if previous is not None and previous > 0 and defect > 0:
            order = math.log2(previous / defect)
        rows.append({'n_t': int(n_t), 'defect': float(defect), 'order': order})
        previous = defect
    return rows


def emit_convergence_table(rows, path):
    """Write convergence rows as CSV with header n_t,defect,order."""
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['n_t', 'defect', 'order'])
        for row in rows:
            order = '' if row['order'] is None else repr(row['order'])
            writer.writerow([row['n_t'], repr(row['defect']), order])
    logger.info(f"Convergence table written to {path} ({len(rows)} rows)")


def emit_matrix_csv(matrix, path):
    """Dense matrix export for inspection (one row per line, no header)."""
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])
    logger.info(f"Matrix written to {path}")
