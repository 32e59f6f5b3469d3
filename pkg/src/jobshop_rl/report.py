"""Comparison tables: makespan per method, lower bound and optimality gap."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from importlib import resources

ABSENT = "absent"


@dataclass
class ComparisonRow:
    instance: str
    size: str
    makespans: dict[str, int | str] = field(default_factory=dict)
    lower_bound: int | None = None
    bound_source: str = "computed"

    def gap(self, method: str) -> float | None:
        """(makespan - LB) / LB, or None when either side is missing."""
        value = self.makespans.get(method)
        if not isinstance(value, int) or not self.lower_bound:
            return None
        return (value - self.lower_bound) / self.lower_bound


def format_gap(gap: float | None) -> str:
    return "" if gap is None else f"{100 * gap:.1f}%"


def _cells(rows: list[ComparisonRow], methods: list[str]) -> tuple[list[str], list[list[str]]]:
    header = ["instance", "size"] + methods + ["lower_bound"] + [f"gap_{m}" for m in methods]
    body = []
    for r in rows:
        line = [r.instance, r.size]
        line += [str(r.makespans.get(m, "")) for m in methods]
        line.append("" if r.lower_bound is None else str(r.lower_bound))
        line += [format_gap(r.gap(m)) for m in methods]
        body.append(line)
    return header, body


def to_text(rows: list[ComparisonRow], methods: list[str]) -> str:
    header, body = _cells(rows, methods)
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    fmt = lambda cells: "  ".join(c.rjust(w) if i >= 2 else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))  # noqa: E731
    lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(b) for b in body]
    return "\n".join(line.rstrip() for line in lines) + "\n"


def to_csv(rows: list[ComparisonRow], methods: list[str]) -> str:
    header, body = _cells(rows, methods)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(body)
    return out.getvalue()


def published_makespans(context: str | None = None) -> dict[str, dict[str, int]]:
    """``{instance: {method: makespan}}`` from the bundled reference table."""
    f = resources.files("jobshop_rl") / "data" / "published_makespans.csv"
    out: dict[str, dict[str, int]] = {}
    with f.open() as fh:
        for row in csv.DictReader(line for line in fh if not line.startswith("#")):
            if context is not None and row["context"] != context:
                continue
            out.setdefault(row["instance"], {})[row["method"]] = int(row["makespan"])
    return out
