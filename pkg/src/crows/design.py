"""Two-level pooling designs and their UE(s^2) bookkeeping.

A design is an ``n x k`` matrix over ``{-1, +1}``: row ``i`` is a well, column
``j`` a compound, and ``+1`` means the compound is present in the well.  The
row constraint ``c`` caps the number of compounds per well.

Columns of the bordered matrix ``L = [1, X]`` are indexed from 0, with column
0 the intercept.  Factor ``j`` (1-based) therefore lives in column ``j`` of
``L`` and row/column ``j`` of ``S = L'L``.  Well (row) indices are 0-based.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class InvalidDesignError(ValueError):
    """Raised when a matrix cannot be used as a design."""


class DataFormatError(ValueError):
    """Raised when an input file does not follow the expected layout."""


@dataclass(frozen=True)
class Violation:
    kind: str  # "shape", "entry" or "row"
    row: int | None = None
    col: int | None = None
    detail: str = ""

    def __str__(self) -> str:
        where = []
        if self.row is not None:
            where.append(f"row {self.row}")
        if self.col is not None:
            where.append(f"column {self.col}")
        loc = ", ".join(where)
        return f"{self.kind} violation{' at ' + loc if loc else ''}: {self.detail}"


def validate(entries, c: int | None = None) -> list[Violation]:
    """Check the design invariants without raising.

    Returns an empty list when ``entries`` is a 2-d matrix over {-1, +1}
    whose rows each hold at most ``c`` entries equal to +1.  Otherwise the
    list starts with the first offending entry (row-major) or row.
    """
    try:
        arr = np.asarray(entries)
    except Exception as exc:  # ragged input and the like
        return [Violation("shape", detail=str(exc))]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        return [Violation("shape", detail=f"expected a non-empty 2-d matrix, got shape {arr.shape}")]
    n, k = arr.shape
    out: list[Violation] = []
    try:
        bad = ~np.isin(arr, (-1, 1))
    except TypeError:
        bad = np.ones(arr.shape, dtype=bool)
    if bad.any():
        i, j = (int(v) for v in np.argwhere(bad)[0])
        out.append(Violation("entry", i, j, f"value {arr[i, j]!r} is not -1 or +1"))
        return out
    if c is not None:
        if not 1 <= c <= k:
            out.append(Violation("shape", detail=f"row constraint c={c} outside 1..{k}"))
            return out
        counts = (arr == 1).sum(axis=1)
        over = np.flatnonzero(counts > c)
        for i in over:
            out.append(Violation("row", int(i), None,
                                 f"{int(counts[i])} entries are +1 but c={c} (row sum must be <= {2 * c - k})"))
    return out


@dataclass
class Design:
    """An ``n x k`` pooling design with row constraint ``c``.

    ``c`` defaults to ``k`` (no constraint).  Construction validates the
    entries and raises :class:`InvalidDesignError` on the first violation.
    """

    entries: np.ndarray
    c: int | None = None

    def __post_init__(self):
        problems = validate(self.entries, self.c)
        if problems:
            raise InvalidDesignError(str(problems[0]))
        self.entries = np.array(self.entries, dtype=np.int64)
        if self.c is None:
            self.c = self.k

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def k(self) -> int:
        return self.entries.shape[1]

    def plus_counts(self) -> np.ndarray:
        return (self.entries == 1).sum(axis=1)

    def copy(self) -> "Design":
        return Design(self.entries.copy(), self.c)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Design):
            return NotImplemented
        return self.c == other.c and np.array_equal(self.entries, other.entries)


@dataclass
class CriterionState:
    """A design together with ``S = L'L`` and ``Q = tr(S^2)``.

    ``S`` is kept as an int64 array and ``Q`` as a Python int; both are
    updated in place by the exchange moves in :mod:`crows.construct`.
    """

    design: Design
    S: np.ndarray
    Q: int

    @property
    def n(self) -> int:
        return self.design.n

    @property
    def k(self) -> int:
        return self.design.k

    @property
    def off_diag_sq(self) -> int:
        """Sum of squared strictly-upper-triangular entries of S."""
        n, k = self.n, self.k
        return (self.Q - n * n * (k + 1)) // 2

    def L_row(self, i: int) -> np.ndarray:
        row = np.empty(self.k + 1, dtype=np.int64)
        row[0] = 1
        row[1:] = self.design.entries[i]
        return row

    def copy(self) -> "CriterionState":
        return CriterionState(self.design.copy(), self.S.copy(), self.Q)


def bordered(entries: np.ndarray) -> np.ndarray:
    entries = np.asarray(entries, dtype=np.int64)
    return np.hstack([np.ones((entries.shape[0], 1), dtype=np.int64), entries])


def build_state(design: Design | np.ndarray, c: int | None = None) -> CriterionState:
    """Compute ``S`` and ``Q`` from scratch in integer arithmetic."""
    if not isinstance(design, Design):
        design = Design(np.asarray(design), c)
    L = bordered(design.entries)
    S = L.T @ L
    Q = int((S * S).sum())
    return CriterionState(design, S, Q)


def ue_s2_fraction(state: CriterionState) -> Fraction:
    """UE(s^2) as an exact rational: off-diagonal square sum over k(k+1)."""
    k = state.k
    if k == 0:
        raise InvalidDesignError("UE(s^2) is undefined for k = 0")
    return Fraction(state.off_diag_sq, k * (k + 1))


def ue_s2(state: CriterionState) -> float:
    """Average squared off-diagonal element of ``S`` (upper triangle)."""
    return float(ue_s2_fraction(state))


def ue_s2_doubled(state: CriterionState) -> float:
    """``(Q - n^2 (k+1)) / (k (k+1))``, i.e. twice :func:`ue_s2`."""
    n, k = state.n, state.k
    return (state.Q - n * n * (k + 1)) / (k * (k + 1))


@dataclass(frozen=True)
class SlackProfile:
    slack: np.ndarray = field(repr=False)

    @property
    def min(self) -> int:
        return int(self.slack.min())

    @property
    def max(self) -> int:
        return int(self.slack.max())

    @property
    def mean(self) -> float:
        return float(self.slack.mean())

    @property
    def tight(self) -> bool:
        return bool((self.slack == 0).all())


def row_slack(design: Design) -> SlackProfile:
    """Per-row slack ``(2c - k) - sum_j x_ij`` (twice the unused capacity)."""
    sums = design.entries.sum(axis=1)
    return SlackProfile((2 * design.c - design.k) - sums)


# --- file formats -----------------------------------------------------------

def design_to_csv(design: Design) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"f{j}" for j in range(1, design.k + 1)])
    for row in design.entries:
        w.writerow([int(v) for v in row])
    return buf.getvalue()


def write_design(design: Design, path: str | Path) -> None:
    Path(path).write_text(design_to_csv(design))


def parse_design_csv(text: str, c: int | None = None) -> Design:
    """Parse the ``f1,...,fk`` design layout.

    When ``c`` is omitted the constraint is set to the fullest row's count.
    """
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DataFormatError("design CSV is empty")
    header = [h.strip() for h in rows[0]]
    expected = [f"f{j}" for j in range(1, len(header) + 1)]
    if header != expected:
        raise DataFormatError(f"design CSV header must be f1..fk, got {header[:4]}...")
    try:
        entries = np.array([[int(float(v)) for v in r] for r in rows[1:]], dtype=np.int64)
    except ValueError as exc:
        raise DataFormatError(f"non-numeric design entry: {exc}") from None
    if entries.ndim != 2 or entries.shape[1] != len(header):
        raise DataFormatError("design CSV rows do not match header width")
    problems = validate(entries)
    if problems:
        raise DataFormatError(str(problems[0]))
    if c is None:
        c = max(int((entries == 1).sum(axis=1).max()), 1)
    return Design(entries, c)


def read_design(path: str | Path, c: int | None = None) -> Design:
    return parse_design_csv(Path(path).read_text(), c)


def read_compound_map(path: str | Path) -> dict[int, str]:
    """Read an ``index,label`` CSV; indices are 1-based factor numbers."""
    labels: dict[int, str] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader):
            if not row:
                continue
            if lineno == 0 and row[0].strip().lower() == "index":
                continue
            try:
                labels[int(row[0])] = row[1].strip()
            except (ValueError, IndexError):
                raise DataFormatError(f"bad compound-map line {lineno + 1}: {row}") from None
    return labels


def pool_sheet(design: Design, labels: Mapping[int, str] | None = None) -> str:
    """One line per well: ``well_id: label, label, ...`` with 1-based wells."""
    lines = []
    for i, row in enumerate(design.entries, start=1):
        present = np.flatnonzero(row == 1) + 1
        names = [labels.get(int(j), f"f{j}") if labels else f"f{j}" for j in present]
        lines.append(f"{i}: {','.join(names)}")
    return "\n".join(lines) + "\n"


def from_incidence(incidence: Sequence[Sequence[int]] | np.ndarray, c: int | None = None) -> Design:
    """Design from a 0/1 presence matrix."""
    inc = np.asarray(incidence, dtype=np.int64)
    return Design(2 * inc - 1, c)


def ones_minus_identity(k: int) -> Design:
    """The one-compound-one-well layout ``2I - J`` (k wells, one compound each)."""
    return Design(2 * np.eye(k, dtype=np.int64) - 1, 1)
