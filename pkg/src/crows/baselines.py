"""Comparison methods: one-compound-one-well screening and poolHiTS.

poolHiTS pools compounds with a shifted transversal design (STD): ``a``
layers of ``q`` pools each, where compound ``x`` with base-``q`` digits
``(d_0, ..., d_G)`` goes, in layer ``j < q``, to pool
``sum_g d_g j^g mod q`` (layer ``j = q``, when used, takes pool ``d_G``).
Wells are binarized against a normal quantile and decoded by counting
negative and positive wells per compound.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from crows.analyze import lenth_pse
from crows.design import Design


class BaselineError(ValueError):
    pass


def norm_ppf(p: float) -> float:
    return float(stats.norm.ppf(p))


def norm_cdf(x: float) -> float:
    return float(stats.norm.cdf(x))


def t_ppf(p: float, df: float) -> float:
    return float(stats.t.ppf(p, df))


def _sign(direction: str) -> int:
    if direction == "positive":
        return 1
    if direction == "negative":
        return -1
    raise BaselineError(f"direction must be 'positive' or 'negative', got {direction!r}")


# --- one compound, one well -------------------------------------------------

def ocow_analyze(y, mu: float, sigma: float, direction: str = "positive", level: float = 0.95) -> tuple[int, ...]:
    """Compounds (1-based) whose single well lies beyond ``mu +- z_level sigma``."""
    if not sigma > 0:
        raise BaselineError("sigma must be positive")
    s = _sign(direction)
    y = np.asarray(y, dtype=float)
    cut = norm_ppf(level) * sigma
    return tuple(int(i) + 1 for i in np.flatnonzero(s * (y - mu) > cut))


def lenth_df(k: int) -> int:
    return k // 3


def ocow_lenth_analyze(y, mu_hat: float, direction: str = "positive", level: float = 0.95) -> tuple[int, ...]:
    """OCOW with Lenth's PSE in place of a known sigma.

    Threshold ``t_{level, floor(k/3)} * PSE`` on ``y - mu_hat``.
    """
    s = _sign(direction)
    centered = np.asarray(y, dtype=float) - mu_hat
    k = centered.size
    if k < 6:
        raise BaselineError("Lenth's method needs at least 6 compounds")
    pse = lenth_pse(centered)
    if pse == 0.0:
        warnings.warn("pseudo standard error is zero; declaring no hits", RuntimeWarning, stacklevel=2)
        return ()
    cut = t_ppf(level, lenth_df(k)) * pse
    return tuple(int(i) + 1 for i in np.flatnonzero(s * centered > cut))


def ocow_tpr(D: float, level: float = 0.95) -> float:
    """Probability that an active compound with effect ``D`` (in SD units) is called."""
    return 1.0 - norm_cdf(norm_ppf(level) - D)


# --- shifted transversal designs --------------------------------------------

def is_prime(q: int) -> bool:
    if q < 2:
        return False
    return all(q % d for d in range(2, math.isqrt(q) + 1))


@dataclass(frozen=True)
class STDesign:
    k: int
    q: int
    a: int
    gamma: int
    pools: np.ndarray  # (a, k): pool index of each compound in each layer

    @property
    def n(self) -> int:
        return self.a * self.q

    def incidence(self) -> np.ndarray:
        """(a*q, k) 0/1 matrix; well ``layer*q + pool``."""
        inc = np.zeros((self.n, self.k), dtype=np.int64)
        for layer in range(self.a):
            inc[layer * self.q + self.pools[layer], np.arange(self.k)] = 1
        return inc

    def pool_sizes(self) -> np.ndarray:
        return self.incidence().sum(axis=1)

    def to_design(self) -> Design:
        inc = self.incidence()
        return Design(2 * inc - 1, max(int(inc.sum(axis=1).max()), 1))


def std_design(k: int, q: int, a: int, gamma: int, c: int | None = None) -> STDesign:
    """Shifted transversal design for ``k`` compounds."""
    if k < 1:
        raise BaselineError("k must be positive")
    if not is_prime(q):
        raise BaselineError(f"q={q} is not prime")
    if gamma < 0:
        raise BaselineError("gamma must be non-negative")
    if q ** (gamma + 1) < k:
        raise BaselineError(f"capacity q^(gamma+1) = {q ** (gamma + 1)} is below k = {k}")
    if not 1 <= a <= q + 1:
        raise BaselineError(f"need 1 <= a <= q+1, got a={a}, q={q}")
    x = np.arange(k)
    digits = np.stack([(x // q ** g) % q for g in range(gamma + 1)])
    pools = np.empty((a, k), dtype=np.int64)
    for j in range(a):
        if j < q:
            powers = np.array([pow(j, g, q) for g in range(gamma + 1)], dtype=np.int64)
            pools[j] = (powers @ digits) % q
        else:
            pools[j] = digits[gamma]
    d = STDesign(k, q, a, gamma, pools)
    if c is not None:
        biggest = int(d.pool_sizes().max())
        if biggest > c:
            raise BaselineError(f"largest pool holds {biggest} compounds > c = {c}; choose a larger q")
    return d


def default_errors(a: int, gamma: int, expected_hits: int = 1) -> int:
    """Largest ``E`` with ``a >= expected_hits * gamma + 2E + 1``."""
    return max(0, (a - expected_hits * gamma - 1) // 2)


@dataclass(frozen=True)
class STDPreset:
    q: int
    a: int
    gamma: int
    E: int


def std_preset(n: int, k: int, c: int) -> STDPreset:
    """Pick an STD for a CRowS size ``(n, k, c)``.

    Prefers ``a * q == n``; otherwise the well count closest to ``n``
    (ties to the smaller).  The compression power is the smallest that
    covers ``k``, every pool must fit ``c`` and there must be enough layers
    to tolerate one error for a single hit (``a >= gamma + 3``).
    """
    best = None
    for q in range(2, max(n, k) + 2):
        if not is_prime(q):
            continue
        gamma = 0
        while q ** (gamma + 1) < k:
            gamma += 1
        if gamma + 3 > q + 1:
            continue
        full = std_design(k, q, q + 1, gamma)
        # largest pool among the first a layers, for every a
        layer_max = np.array([np.bincount(row, minlength=q).max() for row in full.pools])
        prefix_max = np.maximum.accumulate(layer_max)
        for a in range(gamma + 3, q + 2):
            if prefix_max[a - 1] > c:
                break
            key = (abs(a * q - n), a * q, q)
            if best is None or key < best[0]:
                best = (key, STDPreset(q, a, gamma, default_errors(a, gamma)))
    if best is None:
        raise BaselineError(f"no shifted transversal design fits k={k}, c={c}")
    return best[1]


# --- well labelling and decoding --------------------------------------------

def binarize_wells(y, mu: float, sigma: float, direction: str = "positive", level: float = 0.96) -> np.ndarray:
    """Boolean hit label per well: beyond ``mu +- z_level sigma``.

    With pilot estimates pass the sample mean as ``mu`` and ``sqrt(S^2)``
    as ``sigma``.
    """
    if not sigma > 0:
        raise BaselineError("sigma must be positive")
    s = _sign(direction)
    y = np.asarray(y, dtype=float)
    return s * (y - mu) > norm_ppf(level) * sigma


@dataclass(frozen=True)
class DecodeResult:
    hits: tuple[int, ...]
    status: tuple[str, ...]  # per compound: inert, active or inconclusive

    @property
    def inconclusive(self) -> tuple[int, ...]:
        return tuple(i + 1 for i, s in enumerate(self.status) if s == "inconclusive")


def poolhits_decode(design: STDesign | np.ndarray, labels, E: int) -> DecodeResult:
    """Decode binary well labels.

    A compound in at least ``E+1`` negative wells is inert; otherwise it is
    active if it is in at least ``E+1`` positive wells and inconclusive if
    not.  Inconclusive compounds are reported as hits.
    """
    inc = design.incidence() if isinstance(design, STDesign) else np.asarray(design, dtype=np.int64)
    labels = np.asarray(labels, dtype=bool)
    if labels.shape != (inc.shape[0],):
        raise BaselineError(f"expected {inc.shape[0]} well labels, got {labels.shape}")
    if E < 0:
        raise BaselineError("E must be non-negative")
    if (inc.sum(axis=0) == 0).any():
        raise BaselineError("design has a compound that appears in no well")
    pos = labels.astype(np.int64) @ inc
    neg = (~labels).astype(np.int64) @ inc
    status = []
    for p_, n_ in zip(pos, neg):
        if n_ >= E + 1:
            status.append("inert")
        elif p_ >= E + 1:
            status.append("active")
        else:
            status.append("inconclusive")
    hits = tuple(i + 1 for i, s in enumerate(status) if s != "inert")
    return DecodeResult(hits, tuple(status))
