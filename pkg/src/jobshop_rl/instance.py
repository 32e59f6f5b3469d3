"""Job-shop problem instances: data model, benchmark file parsers, bounds.

Two on-disk layouts are understood:

* ``std`` (OR-Library): header ``n m`` followed by one line per job holding
  ``m`` ``(machine, duration)`` pairs, machines 0-indexed.
* ``taillard``: header ``n m``, an ``n x m`` duration matrix, then an
  ``n x m`` machine-order matrix with 1-indexed machines.

Tokens may be separated by any whitespace.  Lines starting with ``#`` are
ignored in both layouts.
"""
from __future__ import annotations

import csv
import enum
import random
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from typing import Iterable, Sequence

Operation = tuple[int, int]  # (machine, duration)


class InstanceError(ValueError):
    """Raised when an instance violates the job-shop invariants."""


class ParseError(InstanceError):
    """Malformed instance text. ``line``/``column`` are 1-based when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)


@dataclass(frozen=True)
class Instance:
    """A static job-shop problem.

    ``ops[j][k]`` is the ``(machine, duration)`` pair of the k-th operation
    of job ``j``.  Instances are immutable and hashable.
    """

    name: str
    n_jobs: int
    n_machines: int
    ops: tuple[tuple[Operation, ...], ...]

    def __post_init__(self) -> None:
        ops = tuple(tuple((int(mc), int(d)) for mc, d in job) for job in self.ops)
        object.__setattr__(self, "ops", ops)
        validate(self)

    @classmethod
    def from_lists(cls, name: str, jobs: Sequence[Sequence[Operation]]) -> "Instance":
        n = len(jobs)
        m = len(jobs[0]) if n else 0
        return cls(name, n, m, tuple(tuple(job) for job in jobs))

    @property
    def n_ops(self) -> int:
        return self.n_jobs * self.n_machines

    @cached_property
    def max_duration(self) -> int:
        return max(d for job in self.ops for _, d in job)

    @cached_property
    def total_work(self) -> int:
        return sum(d for job in self.ops for _, d in job)

    @cached_property
    def job_loads(self) -> tuple[int, ...]:
        return tuple(sum(d for _, d in job) for job in self.ops)

    @cached_property
    def machine_loads(self) -> tuple[int, ...]:
        loads = [0] * self.n_machines
        for job in self.ops:
            for mc, d in job:
                loads[mc] += d
        return tuple(loads)

    @cached_property
    def remaining_work(self) -> tuple[tuple[int, ...], ...]:
        """``remaining_work[j][k]``: total duration of ops ``k..m-1`` of job ``j``."""
        out = []
        for job in self.ops:
            suffix = [0] * (len(job) + 1)
            for k in range(len(job) - 1, -1, -1):
                suffix[k] = suffix[k + 1] + job[k][1]
            out.append(tuple(suffix))
        return tuple(out)

    def renamed(self, name: str) -> "Instance":
        return Instance(name, self.n_jobs, self.n_machines, self.ops)


def validate(instance: Instance) -> None:
    """Check all instance invariants, raising :class:`InstanceError`."""
    n, m = instance.n_jobs, instance.n_machines
    if n < 1 or m < 1:
        raise InstanceError(f"instance needs at least one job and one machine, got {n}x{m}")
    if len(instance.ops) != n:
        raise InstanceError(f"expected {n} jobs, got {len(instance.ops)}")
    for j, job in enumerate(instance.ops):
        if len(job) != m:
            raise InstanceError(f"job {j} has {len(job)} operations, expected {m}")
        seen = set()
        for k, (mc, d) in enumerate(job):
            if not 0 <= mc < m:
                raise InstanceError(f"job {j} op {k}: machine id out of range ({mc})")
            if mc in seen:
                raise InstanceError(f"job {j} op {k}: duplicate machine within job ({mc})")
            if d <= 0:
                raise InstanceError(f"job {j} op {k}: non-positive duration ({d})")
            seen.add(mc)


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

def _tokens(text: str) -> list[tuple[str, int, int]]:
    """Whitespace tokens with their 1-based (line, column)."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.lstrip().startswith("#"):
            continue
        col = 0
        for raw in line.split():
            col = line.index(raw, col)
            out.append((raw, lineno, col + 1))
            col += len(raw)
    return out


def _int(tok: tuple[str, int, int], what: str) -> int:
    raw, line, col = tok
    try:
        return int(raw)
    except ValueError:
        raise ParseError(f"expected integer {what}, got {raw!r}", line, col) from None


def _header(toks: list[tuple[str, int, int]]) -> tuple[int, int]:
    if len(toks) < 2:
        raise ParseError("malformed header: expected 'n m'", 1)
    n, m = _int(toks[0], "job count"), _int(toks[1], "machine count")
    if n < 1 or m < 1:
        raise ParseError(f"malformed header: non-positive size {n} {m}", toks[0][1], toks[0][2])
    return n, m


def _check_job(job: list[Operation], locs: list[tuple[int, int]], m: int) -> None:
    seen = set()
    for (mc, d), (line, col) in zip(job, locs):
        if not 0 <= mc < m:
            raise ParseError(f"machine id out of range ({mc})", line, col)
        if mc in seen:
            raise ParseError(f"duplicate machine within job ({mc})", line, col)
        if d <= 0:
            raise ParseError(f"non-positive duration ({d})", line, col)
        seen.add(mc)


def parse_standard(text: str, name: str = "instance") -> Instance:
    """Parse the OR-Library ``n m`` + machine/duration pair layout."""
    toks = _tokens(text)
    n, m = _header(toks)
    body = toks[2:]
    rows: dict[int, list[tuple[str, int, int]]] = {}
    for tok in body:
        rows.setdefault(tok[1], []).append(tok)
    if len(rows) == n:
        # one job per line: report a bad row where it occurs
        for row in rows.values():
            if len(row) != 2 * m:
                raise ParseError(f"wrong pair count: expected {m} pairs, got {len(row) / 2:g}", row[0][1])
        groups = list(rows.values())
    elif len(body) == 2 * n * m:
        groups = [body[j * 2 * m:(j + 1) * 2 * m] for j in range(n)]
    else:
        raise ParseError(
            f"wrong pair count: expected {n * m} pairs in total, got {len(body) / 2:g}",
            body[-1][1] if body else 1,
        )
    jobs = []
    for group in groups:
        job, locs = [], []
        for k in range(m):
            mtok, dtok = group[2 * k], group[2 * k + 1]
            d = _int(dtok, "duration")
            if d <= 0:
                raise ParseError(f"non-positive duration ({d})", dtok[1], dtok[2])
            job.append((_int(mtok, "machine id"), d))
            locs.append((mtok[1], mtok[2]))
        _check_job(job, locs, m)
        jobs.append(job)
    return Instance.from_lists(name, jobs)


def parse_taillard(text: str, name: str = "instance") -> Instance:
    """Parse the Taillard duration-matrix + machine-matrix layout."""
    toks = _tokens(text)
    n, m = _header(toks)
    body = toks[2:]
    if len(body) != 2 * n * m:
        raise ParseError(
            f"matrix-dimension mismatch: expected two {n}x{m} matrices ({2 * n * m} values), "
            f"got {len(body)}",
            body[-1][1] if body else 1,
        )
    times, machines = body[: n * m], body[n * m:]
    jobs = []
    for j in range(n):
        job, locs = [], []
        for k in range(m):
            ttok, mtok = times[j * m + k], machines[j * m + k]
            d = _int(ttok, "duration")
            if d <= 0:
                raise ParseError(f"non-positive duration ({d})", ttok[1], ttok[2])
            job.append((_int(mtok, "machine id") - 1, d))
            locs.append((mtok[1], mtok[2]))
        _check_job(job, locs, m)
        jobs.append(job)
    return Instance.from_lists(name, jobs)


class Format(str, enum.Enum):
    STD = "std"
    TAILLARD = "taillard"


def parse(text: str, fmt: Format | str = Format.STD, name: str = "instance") -> Instance:
    fmt = Format(fmt)
    if fmt is Format.STD:
        return parse_standard(text, name)
    return parse_taillard(text, name)


def serialize_standard(instance: Instance) -> str:
    lines = [f"{instance.n_jobs} {instance.n_machines}"]
    for job in instance.ops:
        lines.append("  ".join(f"{mc} {d}" for mc, d in job))
    return "\n".join(lines) + "\n"


def serialize_taillard(instance: Instance) -> str:
    lines = [f"{instance.n_jobs} {instance.n_machines}"]
    lines += [" ".join(str(d) for _, d in job) for job in instance.ops]
    lines += [" ".join(str(mc + 1) for mc, _ in job) for job in instance.ops]
    return "\n".join(lines) + "\n"


def serialize(instance: Instance, fmt: Format | str = Format.STD) -> str:
    if Format(fmt) is Format.STD:
        return serialize_standard(instance)
    return serialize_taillard(instance)


def load(path, fmt: Format | str | None = None) -> Instance:
    """Read an instance file.  Without ``fmt`` the ``.tai`` suffix selects Taillard."""
    from pathlib import Path

    path = Path(path)
    if fmt is None:
        fmt = Format.TAILLARD if path.suffix == ".tai" else Format.STD
    return parse(path.read_text(), fmt, name=path.stem)


def bundled_names() -> list[str]:
    root = resources.files("jobshop_rl") / "data" / "instances"
    return sorted(p.name.rsplit(".", 1)[0] for p in root.iterdir() if p.name[0] != ".")


def load_bundled(name: str) -> Instance:
    """Load one of the benchmark instances shipped with the package (e.g. ``"ta01"``)."""
    root = resources.files("jobshop_rl") / "data" / "instances"
    for suffix, fmt in ((".txt", Format.STD), (".tai", Format.TAILLARD)):
        f = root / f"{name}{suffix}"
        if f.is_file():
            return parse(f.read_text(), fmt, name=name)
    raise FileNotFoundError(f"no bundled instance named {name!r}")


# --------------------------------------------------------------------------
# bounds
# --------------------------------------------------------------------------

class BoundSource(str, enum.Enum):
    COMPUTED = "computed"
    FILE = "file"
    LITERATURE = "literature"


@dataclass(frozen=True)
class Bounds:
    lower: int
    known_optimum: int | None = None
    source: BoundSource = BoundSource.COMPUTED

    def __post_init__(self) -> None:
        if self.known_optimum is not None and self.lower > self.known_optimum:
            raise InstanceError(f"lower bound {self.lower} exceeds optimum {self.known_optimum}")


def lower_bound(instance: Instance) -> int:
    """max(heaviest machine load, longest job)."""
    return max(max(instance.machine_loads), max(instance.job_loads))


def literature_bounds() -> dict[str, Bounds]:
    """Published lower bounds / optima keyed by lower-case instance name."""
    f = resources.files("jobshop_rl") / "data" / "lower_bounds.csv"
    out = {}
    with f.open() as fh:
        for row in csv.DictReader(line for line in fh if not line.startswith("#")):
            opt = row["known_optimum"].strip()
            out[row["instance"].lower()] = Bounds(
                int(row["lower_bound"]), int(opt) if opt else None, BoundSource.LITERATURE
            )
    return out


def bounds_for(instance: Instance, table: dict[str, Bounds] | None = None) -> Bounds:
    """Sidecar literature bound when available, otherwise the computed one."""
    table = literature_bounds() if table is None else table
    hit = table.get(instance.name.lower())
    if hit is not None:
        return hit
    return Bounds(lower_bound(instance), None, BoundSource.COMPUTED)


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------

def generate_random(
    n: int,
    m: int,
    duration_range: Iterable[int] | tuple[int, int] = (1, 99),
    seed: int | None = 0,
    name: str | None = None,
) -> Instance:
    """Random instance with uniform routings and uniform integer durations.

    ``duration_range`` is either an inclusive ``(low, high)`` pair or any
    iterable of allowed durations.
    """
    if n < 1 or m < 1:
        raise InstanceError(f"need n, m >= 1, got {n}, {m}")
    if isinstance(duration_range, tuple) and len(duration_range) == 2:
        lo, hi = duration_range
        choices = list(range(lo, hi + 1))
    else:
        choices = list(duration_range)
    if not choices:
        raise InstanceError("empty duration range")
    if min(choices) <= 0:
        raise InstanceError("durations must be positive")
    rng = random.Random(seed)
    jobs = []
    for _ in range(n):
        order = list(range(m))
        rng.shuffle(order)
        jobs.append([(mc, rng.choice(choices)) for mc in order])
    return Instance.from_lists(name or f"rand{n}x{m}_s{seed}", jobs)
