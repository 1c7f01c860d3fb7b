"""Solve reports (JSON for machines, markdown/CSV tables for people)."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

from .residuals import Residuals


class MaxIterations(RuntimeError):
    """Iteration budget exhausted; ``report`` carries the best iterate's data."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


def _clean(v):
    if isinstance(v, float):
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


@dataclass
class SolveReport:
    solver: str
    problem: str = ""
    iterations: int = 0
    inner_iterations: int = 0
    wall_time: float = 0.0
    termination: str = "running"
    final: Residuals | None = None
    trace: list = field(default_factory=list)
    sigma_trace: list = field(default_factory=list)
    factorizations: dict = field(default_factory=dict)
    ridge: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def converged(self):
        return self.termination == "converged"

    @property
    def eta(self):
        return self.final.eta if self.final is not None else math.inf

    @property
    def objective(self):
        return self.final.primal_obj if self.final is not None else math.nan

    def record(self, iteration, res: Residuals, sigma, **extra):
        row = {"iter": int(iteration), **res.as_dict(), "sigma": float(sigma)}
        row.update(extra)
        self.trace.append(row)

    def to_dict(self):
        d = asdict(self)
        d["final"] = self.final.as_dict() if self.final is not None else None
        return _clean(d)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def write(self, path):
        """Write JSON, or CSV of the residual trace when ``path`` ends in .csv."""
        path = str(path)
        with open(path, "w") as fh:
            if path.endswith(".csv"):
                fh.write(trace_csv(self))
            else:
                fh.write(self.to_json(indent=2))
                fh.write("\n")


def trace_csv(report: SolveReport) -> str:
    buf = io.StringIO()
    if report.trace:
        w = csv.DictWriter(buf, fieldnames=list(report.trace[0]))
        w.writeheader()
        for row in report.trace:
            w.writerow(row)
    return buf.getvalue()


BENCH_COLUMNS = ("Data", "Solver", "Iter", "eta", "Obj", "Time(s)", "Status")


def bench_rows(entries):
    """``entries``: iterable of ``(data_name, SolveReport)``."""
    rows = []
    for name, rep in entries:
        rows.append({
            "Data": name,
            "Solver": rep.solver,
            "Iter": rep.iterations,
            "eta": f"{rep.eta:.2e}",
            "Obj": f"{rep.objective:.10e}",
            "Time(s)": f"{rep.wall_time:.2f}",
            "Status": rep.termination,
        })
    return rows


def markdown_table(rows, columns=BENCH_COLUMNS) -> str:
    out = ["| " + " | ".join(columns) + " |", "|" + "|".join("---" for _ in columns) + "|"]
    for r in rows:
        out.append("| " + " | ".join(str(r[c]) for c in columns) + " |")
    return "\n".join(out) + "\n"


def csv_table(rows, columns=BENCH_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: r[c] for c in columns})
    return buf.getvalue()
