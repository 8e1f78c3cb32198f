"""Lower bounds on ``Q`` and UE(s^2) for designs whose rows are all full.

When every row of ``X`` holds exactly ``c`` entries equal to +1,

    Q = n^2 (1 - k^2) + 2 ||X'1||^2 + 2n ||X1||^2 + sum_{l,j} ||X_l - X_j||_1^2

and the two data-dependent terms are bounded below by spreading fixed
integer totals as evenly as possible over the columns (column sums) and over
ordered column pairs (pairwise Hamming distances).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from crows.design import Design, build_state, row_slack


class BoundError(ValueError):
    pass


@dataclass(frozen=True)
class BoundReport:
    n: int
    k: int
    c: int
    gamma: int
    delta: int
    phi: int
    psi: int
    colsum_lb: int
    rowdiff_lb: int
    rowsum_sq: int
    Q_lb: int
    ue_lb: float

    def as_dict(self) -> dict:
        return asdict(self)


def full_row_bound(n: int, k: int, c: int) -> BoundReport:
    """Bound report for ``n`` wells, ``k`` compounds and ``c`` per well."""
    if n < 1 or k < 1:
        raise BoundError(f"need n >= 1 and k >= 1, got n={n}, k={k}")
    if not 1 <= c <= k:
        raise BoundError(f"need 1 <= c <= k, got c={c}, k={k}")
    gamma, delta = divmod(n * c, k)
    colsum_lb = (k - delta) * (n - 2 * gamma) ** 2 + delta * (n - 2 * gamma - 2) ** 2
    pairs = k * k - k
    if pairs:
        phi, psi = divmod(2 * n * c * (k - c), pairs)
    else:
        phi = psi = 0
    rowdiff_lb = 4 * (pairs * phi * phi + psi * (2 * phi + 1))
    rowsum_sq = n * (2 * c - k) ** 2
    Q_lb = n * n * (1 - k * k) + 2 * colsum_lb + 2 * n * rowsum_sq + rowdiff_lb
    ue_lb = float(Fraction(Q_lb - n * n * (k + 1), 2 * k * (k + 1)))
    return BoundReport(n, k, c, gamma, delta, phi, psi, colsum_lb, rowdiff_lb, rowsum_sq, Q_lb, ue_lb)


def _pairwise_l1(A: np.ndarray) -> np.ndarray:
    # ||A_:,l - A_:,j||_1 for every ordered column pair
    A = np.asarray(A, dtype=np.int64)
    return np.abs(A[:, :, None] - A[:, None, :]).sum(axis=0)


def identity_check(design: Design | np.ndarray) -> tuple[int, int, int]:
    """Residuals of three exact identities valid for any +-1 matrix.

    1. ``||X1_k||^2 + sum_{l,j} ||X_l - X_j||_1 - n k^2``
    2. ``||X'1_n||^2 + sum_{i,m} ||X_i - X_m||_1 - n^2 k``
    3. ``tr(X'XX'X) - [-n^2 k^2 + 2n ||X1_k||^2 + sum_{l,j} ||X_l - X_j||_1^2]``
    """
    X = design.entries if isinstance(design, Design) else np.asarray(design, dtype=np.int64)
    n, k = X.shape
    rowsum_sq = int((X.sum(axis=1) ** 2).sum())
    colsum_sq = int((X.sum(axis=0) ** 2).sum())
    coldiff = _pairwise_l1(X)
    rowdiff = _pairwise_l1(X.T)
    G = X.T @ X
    r1 = rowsum_sq + int(coldiff.sum()) - n * k * k
    r2 = colsum_sq + int(rowdiff.sum()) - n * n * k
    r3 = int((G * G).sum()) - (-n * n * k * k + 2 * n * rowsum_sq + int((coldiff ** 2).sum()))
    return r1, r2, r3


@dataclass(frozen=True)
class Certificate:
    applicable: bool
    Q: int
    Q_lb: int | None
    gap_Q: int | None
    gap_ratio: float | None
    tight: bool

    def as_dict(self) -> dict:
        return asdict(self)


class BoundInconsistency(AssertionError):
    """A full-row design scored below the lower bound."""


def certify(design: Design, report: BoundReport | None = None) -> Certificate:
    """Compare a design's ``Q`` with the bound for its ``(n, k, c)``.

    Designs with any row slack get a certificate marked not applicable.
    """
    if report is None:
        report = full_row_bound(design.n, design.k, design.c)
    if (report.n, report.k, report.c) != (design.n, design.k, design.c):
        raise BoundError(
            f"report is for (n,k,c)={(report.n, report.k, report.c)}, design is {(design.n, design.k, design.c)}")
    Q = build_state(design).Q
    if not row_slack(design).tight:
        return Certificate(False, Q, None, None, None, False)
    gap = Q - report.Q_lb
    if gap < 0:
        raise BoundInconsistency(f"Q={Q} is below the lower bound {report.Q_lb}")
    return Certificate(True, Q, report.Q_lb, gap, gap / report.Q_lb if report.Q_lb else 0.0, gap == 0)
