"""Row-constrained coordinate-exchange construction.

The search minimises ``Q = tr(S^2)`` (equivalently UE(s^2)) over designs
whose rows hold at most ``c`` entries equal to +1.  Each candidate move
changes one row, so its effect on ``Q`` follows from ``S`` and the row alone
and the accepted move is applied as a rank-2 update of ``S``.

Factor columns are addressed by their ``L = [1, X]`` index ``1..k``; wells by
their 0-based row index.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from crows import _kernels
from crows.bounds import full_row_bound
from crows.design import (
    CriterionState,
    Design,
    build_state,
    row_slack,
    ue_s2,
    ue_s2_doubled,
)

DEFAULT_MAX_PASSES = 10_000


class ParameterError(ValueError):
    """Raised for out-of-domain construction parameters."""


@dataclass(frozen=True)
class Flip:
    i: int
    j: int


@dataclass(frozen=True)
class Swap:
    i: int
    j: int  # currently +1, becomes -1
    l: int  # currently -1, becomes +1


@dataclass(frozen=True)
class ExchangeDelta:
    move: Flip | Swap
    delta_Q: int

    @property
    def improves(self) -> bool:
        return self.delta_Q < 0


def _check_params(n: int, k: int, c: int) -> None:
    if n < 1 or k < 1:
        raise ParameterError(f"need n >= 1 and k >= 1, got n={n}, k={k}")
    if not 1 <= c <= k:
        raise ParameterError(f"row constraint must satisfy 1 <= c <= k, got c={c}, k={k}")


def derive_seed(master: int, *key: int) -> int:
    """Stable 64-bit seed for a child task, independent of scheduling."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(x) for x in key))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def random_feasible_init(n: int, k: int, c: int, seed: int) -> Design:
    """Random start: each row gets ``m ~ Uniform{0..c}`` entries set to +1."""
    _check_params(n, k, c)
    rng = np.random.default_rng(seed)
    X = -np.ones((n, k), dtype=np.int64)
    for i in range(n):
        m = int(rng.integers(0, c + 1))
        if m:
            X[i, rng.choice(k, size=m, replace=False)] = 1
    return Design(X, c)


# --- move evaluation --------------------------------------------------------

def _check_cell(state: CriterionState, i: int, j: int) -> None:
    if not 0 <= i < state.n:
        raise IndexError(f"row {i} outside 0..{state.n - 1}")
    if not 1 <= j <= state.k:
        raise IndexError(f"factor column {j} outside 1..{state.k}")


def delta_flip(state: CriterionState, i: int, j: int) -> ExchangeDelta:
    """Change in ``Q`` from flipping the sign of ``x_ij``."""
    _check_cell(state, i, j)
    u = state.L_row(i)
    xij = int(u[j])
    u[j] = 0
    inner = int(u @ state.S[:, j])
    return ExchangeDelta(Flip(i, j), 8 * (state.k - xij * inner))


def delta_swap(state: CriterionState, i: int, j: int, l: int) -> ExchangeDelta:
    """Change in ``Q`` from swapping ``x_ij = +1`` with ``x_il = -1``."""
    _check_cell(state, i, j)
    _check_cell(state, i, l)
    X = state.design.entries
    if X[i, j - 1] != 1 or X[i, l - 1] != -1:
        raise ValueError(f"swap needs x[{i},{j}] = +1 and x[{i},{l}] = -1")
    n, k, S = state.n, state.k, state.S
    u = state.L_row(i)
    u[j] = 0
    a = int(u @ S[:, j])
    b = int(u @ S[:, l])
    return ExchangeDelta(Swap(i, j, l), 8 * (2 * (k - 1) + n - a + b - int(S[j, l])))


def delta_general(state: CriterionState, i: int, J: Iterable[int], allow_intercept: bool = False) -> int:
    """Change in ``Q`` from flipping every ``L`` entry of row ``i`` indexed by ``J``.

    Index 0 (the intercept) is accepted only with ``allow_intercept=True``;
    the resulting matrix is then no longer of the form ``[1, X]``.
    """
    J = sorted(set(int(j) for j in J))
    if not J:
        return 0
    if J[0] < 0 or J[-1] > state.k:
        raise IndexError(f"column indices must lie in 0..{state.k}")
    if J[0] == 0 and not allow_intercept:
        raise ValueError("the intercept column cannot be flipped")
    k = state.k
    u = state.L_row(i)
    mask = np.zeros(k + 1, dtype=bool)
    mask[J] = True
    outside = np.where(mask, 0, u)
    inner = state.S[J] @ outside
    size = len(J)
    return 8 * size * (k + 1 - size) - 8 * int(u[J] @ inner)


def _flip_S(S: np.ndarray, u: np.ndarray, j: int) -> None:
    # subtract 2 x_ij L_i[j] from row j of S and its transpose from column j
    r = 2 * u[j] * u
    r[j] = 0
    S[j, :] -= r
    S[:, j] -= r
    u[j] = -u[j]


def apply_move(state: CriterionState, delta: ExchangeDelta, check: bool = False) -> CriterionState:
    """Apply an evaluated move in place and return ``state``.

    With ``check=True`` the result is compared against a full recomputation.
    """
    move = delta.move
    u = state.L_row(move.i)
    X = state.design.entries
    if isinstance(move, Flip):
        _flip_S(state.S, u, move.j)
        X[move.i, move.j - 1] = u[move.j]
    else:
        _flip_S(state.S, u, move.j)
        _flip_S(state.S, u, move.l)
        X[move.i, move.j - 1] = u[move.j]
        X[move.i, move.l - 1] = u[move.l]
    state.Q += delta.delta_Q
    if check:
        fresh = build_state(X.copy(), state.design.c)
        if fresh.Q != state.Q or not np.array_equal(fresh.S, state.S):
            raise AssertionError("incremental update diverged from recomputation")
    return state


# --- local search -----------------------------------------------------------

@dataclass
class OptimizeResult:
    state: CriterionState
    passes: int
    converged: bool
    moves: int


def _optimize_python(state: CriterionState, max_passes: int) -> OptimizeResult:
    # reference route built from the public move operations
    n, k, c = state.n, state.k, state.design.c
    X = state.design.entries
    passes, moves = 0, 0
    while passes < max_passes:
        passes += 1
        changed = False
        for i in range(n):
            count = int((X[i] == 1).sum())
            for j in range(1, k + 1):
                if X[i, j - 1] == 1 or count < c:
                    d = delta_flip(state, i, j)
                    if d.delta_Q < 0:
                        count -= int(X[i, j - 1])
                        apply_move(state, d)
                        moves += 1
                        changed = True
            high = [j for j in range(1, k + 1) if X[i, j - 1] == 1]
            low = [j for j in range(1, k + 1) if X[i, j - 1] == -1]
            for j in high:
                if not low:
                    break
                u = state.L_row(i)
                u[j] = 0
                # L_i[j] S_{:,l} - s_jl over candidate l; first minimiser wins
                scores = u @ state.S[:, low] - state.S[j, low]
                l = low[int(np.argmin(scores))]
                d = delta_swap(state, i, j, l)
                if d.delta_Q < 0:
                    apply_move(state, d)
                    low.remove(l)
                    low.append(j)
                    low.sort()
                    moves += 1
                    changed = True
        if not changed:
            return OptimizeResult(state, passes, True, moves)
    return OptimizeResult(state, passes, False, moves)


def optimize_from(design: Design, max_passes: int = DEFAULT_MAX_PASSES, engine: str = "compiled") -> OptimizeResult:
    """Coordinate-exchange descent from ``design`` to a local optimum.

    Rows are visited in order; each visit tries single flips (a -1 becomes
    +1 only while the row is below capacity) and then count-preserving
    swaps.  Passes repeat until one makes no exchange.  Only strict
    improvements are accepted, so ``Q`` decreases along the trajectory.
    """
    state = build_state(design.copy())
    if engine == "python":
        return _optimize_python(state, max_passes)
    if engine != "compiled":
        raise ValueError(f"unknown engine {engine!r}")
    X = state.design.entries
    passes, converged, total, moves = _kernels.optimize_rows(X, state.S, state.design.c, max_passes)
    state.Q += int(total)
    return OptimizeResult(state, int(passes), bool(converged), int(moves))


# --- multi-start ------------------------------------------------------------

@dataclass(frozen=True)
class ConstructConfig:
    n: int
    k: int
    c: int
    starts: int = 100
    seed: int = 0
    max_passes: int = DEFAULT_MAX_PASSES
    init: str = "uniform-count"

    def __post_init__(self):
        _check_params(self.n, self.k, self.c)
        if self.starts < 1:
            raise ParameterError("starts must be >= 1")
        if self.init != "uniform-count":
            raise ParameterError(f"unknown init rule {self.init!r}")


@dataclass(frozen=True)
class StartRecord:
    start: int
    seed: int
    Q: int
    ue_s2: float
    passes: int
    converged: bool


@dataclass
class ConstructResult:
    state: CriterionState
    best_start: int
    log: list[StartRecord] = field(default_factory=list)

    @property
    def design(self) -> Design:
        return self.state.design

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["start", "seed", "Q", "ue_s2", "passes", "converged"])
        for r in self.log:
            w.writerow([r.start, r.seed, r.Q, repr(r.ue_s2), r.passes, int(r.converged)])
        return buf.getvalue()


def _one_start(config: ConstructConfig, start: int, engine: str):
    seed = derive_seed(config.seed, start)
    design = random_feasible_init(config.n, config.k, config.c, seed)
    res = optimize_from(design, config.max_passes, engine)
    rec = StartRecord(start, seed, res.state.Q, ue_s2(res.state), res.passes, res.converged)
    return rec, res.state


def _seeded_start(config: ConstructConfig, start: int, design: Design, engine: str):
    design = Design(design.entries.copy(), config.c)
    res = optimize_from(design, config.max_passes, engine)
    rec = StartRecord(start, -1, res.state.Q, ue_s2(res.state), res.passes, res.converged)
    return rec, res.state


def construct(config: ConstructConfig, threads: int = 1, engine: str = "compiled",
              initial: Sequence[Design] = ()) -> ConstructResult:
    """Best of ``config.starts`` independent random starts (ties: lowest start).

    Designs in ``initial`` are optimised as extra starts numbered after the
    random ones; their log seed is -1.
    """
    for d in initial:
        if (d.n, d.k) != (config.n, config.k):
            raise ParameterError(f"initial design is {d.n}x{d.k}, expected {config.n}x{config.k}")
    starts = range(config.starts)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            outcomes = list(pool.map(lambda s: _one_start(config, s, engine), starts))
    else:
        outcomes = [_one_start(config, s, engine) for s in starts]
    outcomes += [_seeded_start(config, config.starts + i, d, engine) for i, d in enumerate(initial)]
    best = min(range(len(outcomes)), key=lambda s: (outcomes[s][0].Q, s))
    return ConstructResult(outcomes[best][1], best, [rec for rec, _ in outcomes])


# --- constraint sweep -------------------------------------------------------

SWEEP_COLUMNS = [
    "c", "Q", "ue_s2", "ue_s2_doubled", "slack_min", "slack_mean", "slack_max",
    "Q_lb", "ue_lb", "gap_Q", "best_start",
]


@dataclass(frozen=True)
class SweepRow:
    c: int
    Q: int
    ue_s2: float
    ue_s2_doubled: float
    slack_min: int
    slack_mean: float
    slack_max: int
    Q_lb: int | None
    ue_lb: float | None
    best_start: int

    @property
    def gap_Q(self) -> int | None:
        return None if self.Q_lb is None else self.Q - self.Q_lb


def constraint_sweep(
    n: int,
    k: int,
    c_list: Sequence[int],
    starts: int = 100,
    seed: int = 0,
    threads: int = 1,
    max_passes: int = DEFAULT_MAX_PASSES,
    carry: bool = True,
) -> list[SweepRow]:
    """Construct the best design for each ``c`` and summarise it.

    With ``carry`` the best design of the previous ``c`` also serves as one
    extra start whenever it is feasible for the current ``c``; a looser
    constraint can then never end up worse than a tighter one.  The lower
    bound is reported only for designs without row slack, since it assumes
    every row is full.
    """
    if not c_list:
        raise ParameterError("c_list must be non-empty")
    rows = []
    prev: Design | None = None
    for c in c_list:
        cfg = ConstructConfig(n, k, int(c), starts, derive_seed(seed, int(c)), max_passes)
        initial = [prev] if carry and prev is not None and int(prev.plus_counts().max()) <= c else []
        res = construct(cfg, threads, initial=initial)
        prev = res.design
        slack = row_slack(res.design)
        Q_lb = ue_lb = None
        if slack.tight:
            rep = full_row_bound(n, k, int(c))
            Q_lb, ue_lb = rep.Q_lb, rep.ue_lb
        rows.append(SweepRow(int(c), res.state.Q, ue_s2(res.state), ue_s2_doubled(res.state),
                             slack.min, slack.mean, slack.max, Q_lb, ue_lb, res.best_start))
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([
            r.c, r.Q, repr(r.ue_s2), repr(r.ue_s2_doubled), r.slack_min, repr(r.slack_mean), r.slack_max,
            "" if r.Q_lb is None else r.Q_lb,
            "" if r.ue_lb is None else repr(r.ue_lb),
            "" if r.gap_Q is None else r.gap_Q,
            r.best_start,
        ])
    return buf.getvalue()


def parse_c_list(text: str) -> list[int]:
    """Parse ``"2..144"``, ``"2,5,10"`` or a mix such as ``"2..5,10"``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ParameterError(f"empty c list {text!r}")
    return out
