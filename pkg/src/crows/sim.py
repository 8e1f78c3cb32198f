"""Synthetic screens and the three-method comparison study.

Responses follow the main-effects model ``y = b0 + X b + e`` with ``+-1``
coding: an active compound has coefficient ``D/2`` (in units of sigma) so
that wells containing it differ in mean by ``D``, and ``b0`` is chosen so a
well without actives has mean ``mu``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from crows.analyze import analyze
from crows.baselines import (
    STDPreset,
    binarize_wells,
    ocow_analyze,
    ocow_lenth_analyze,
    poolhits_decode,
    std_design,
    std_preset,
)
from crows.construct import ConstructConfig, construct, derive_seed
from crows.design import Design, ones_minus_identity

EFFECT_SIZES = (0.75, 1.0, 1.5, 2.0, 2.25, 3.0, 4.0)
METHODS = ("crows", "poolhits", "ocow")

FULL_SIZES = (
    (88, 96, 10), (88, 96, 30), (88, 96, 50),
    (85, 150, 10), (91, 150, 30), (91, 150, 50),
    (92, 192, 10), (99, 192, 30), (99, 192, 50),
)
DESK = ((24, 31, 5), (24, 31, 10), (30, 31, 10))


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class Interaction:
    sign: str = "synergistic"  # or "antagonistic"
    heredity: str = "strong"  # or "weak"

    def __post_init__(self):
        if self.sign not in ("synergistic", "antagonistic"):
            raise SimulationError(f"unknown interaction sign {self.sign!r}")
        if self.heredity not in ("strong", "weak"):
            raise SimulationError(f"unknown heredity {self.heredity!r}")

    @property
    def tag(self) -> str:
        return f"{self.heredity}-{self.sign}"

    @classmethod
    def parse(cls, text: str) -> "Interaction":
        heredity, _, sign = text.partition("-")
        return cls(sign, heredity)


@dataclass(frozen=True)
class Scenario:
    D: float
    a: int = 1
    mu: float = 0.0
    sigma: float = 1.0
    direction: str = "positive"
    interaction: Interaction | None = None
    knowledge: str = "known"  # or "pilot"
    n_pilot: int = 12
    active: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.D <= 0:
            raise SimulationError("effect size D must be positive")
        if self.a < 0:
            raise SimulationError("number of actives must be non-negative")
        if self.direction not in ("positive", "negative"):
            raise SimulationError(f"unknown direction {self.direction!r}")
        if self.knowledge not in ("known", "pilot"):
            raise SimulationError(f"unknown knowledge mode {self.knowledge!r}")
        if self.interaction is not None and self.a != 2:
            raise SimulationError("interaction scenarios need exactly two active compounds")

    @property
    def sign(self) -> int:
        return 1 if self.direction == "positive" else -1


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _active(scenario: Scenario, k: int, active) -> tuple[int, ...]:
    active = tuple(scenario.active if active is None else active)
    if len(active) > k:
        raise SimulationError(f"{len(active)} actives but only {k} compounds")
    if any(not 1 <= j <= k for j in active):
        raise SimulationError("active compounds must lie in 1..k")
    return active


def gen_response(design: Design, scenario: Scenario, seed, active=None, noise: bool = True) -> np.ndarray:
    """Draw one response vector.  ``noise=False`` returns the mean."""
    rng = _rng(seed)
    X = design.entries
    active = _active(scenario, design.k, active)
    half = scenario.sign * scenario.D / 2 * scenario.sigma
    beta = np.zeros(design.k)
    beta[np.asarray(active, dtype=int) - 1] = half
    b0 = scenario.mu + len(active) * half
    y = b0 + X @ beta
    if noise:
        y = y + scenario.sigma * rng.standard_normal(design.n)
    return y


def gen_interaction_response(design: Design, scenario: Scenario, seed, active=None, noise: bool = True,
                             pair: tuple[int, int] | None = None) -> np.ndarray:
    """Response with one two-factor interaction of half the main-effect size.

    Strong heredity pairs the two actives; weak heredity pairs the first
    active with a randomly drawn inactive compound (or ``pair`` if given).
    The intercept is set so the well without any compound still has mean
    ``mu``.
    """
    if scenario.interaction is None:
        return gen_response(design, scenario, seed, active, noise)
    rng = _rng(seed)
    X = design.entries
    active = _active(scenario, design.k, active)
    if len(active) != 2:
        raise SimulationError("interaction scenarios need exactly two active compounds")
    inter = scenario.interaction
    if pair is None:
        if inter.heredity == "strong":
            pair = (active[0], active[1])
        else:
            others = np.setdiff1d(np.arange(1, design.k + 1), active)
            pair = (active[0], int(rng.choice(others)))
    p1, p2 = pair
    n_parents_active = (p1 in active) + (p2 in active)
    if (inter.heredity == "strong") != (n_parents_active == 2) or n_parents_active == 0:
        raise SimulationError(f"pair {pair} is incompatible with {inter.heredity} heredity")
    half = scenario.sign * scenario.D / 2 * scenario.sigma
    gamma = (half / 2) * (1 if inter.sign == "synergistic" else -1)
    beta = np.zeros(design.k)
    beta[np.asarray(active) - 1] = half
    product = X[:, p1 - 1] * X[:, p2 - 1]
    b0 = scenario.mu + len(active) * half - gamma
    y = b0 + X @ beta + gamma * product
    if noise:
        y = y + scenario.sigma * rng.standard_normal(design.n)
    return y


def pilot_draw(mu: float, sigma: float, seed, n_pilot: int = 12) -> tuple[float, float]:
    """Sample mean and variance of a pilot run of ``n_pilot`` inert wells."""
    if sigma < 0:
        raise SimulationError("sigma must be non-negative")
    rng = _rng(seed)
    xbar = mu + sigma / math.sqrt(n_pilot) * rng.standard_normal()
    s2 = sigma * sigma * rng.chisquare(n_pilot - 1) / (n_pilot - 1)
    return float(xbar), float(s2)


def evaluate(declared, truth, k: int) -> tuple[float, float]:
    """True and false positive rates of a declared hit set."""
    declared, truth = set(declared), set(truth)
    if truth:
        tpr = len(declared & truth) / len(truth)
    else:
        tpr = 1.0 if not declared else math.nan
    inactive = k - len(truth)
    fpr = len(declared - truth) / inactive if inactive else 0.0
    return tpr, fpr


# --- study ------------------------------------------------------------------

@dataclass
class DesignSpec:
    """One design size with the designs each method runs on."""

    label: str
    n: int
    k: int
    c: int
    crows: Design | None = None
    std: STDPreset | None = None

    def std_or_preset(self) -> STDPreset:
        return self.std or std_preset(self.n, self.k, self.c)


@dataclass
class StudyConfig:
    designs: list[DesignSpec]
    methods: Sequence[str] = METHODS
    D: Sequence[float] = EFFECT_SIZES
    a: int = 1
    reps: int = 1000
    seed: int = 42
    interaction: Interaction | None = None
    knowledge: str = "known"
    mu: float = 0.0
    sigma: float = 1.0
    direction: str = "positive"
    starts: int = 100
    binarize_level: float = 0.96

    def __post_init__(self):
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise SimulationError(f"unknown methods {sorted(unknown)}")
        if self.reps < 0:
            raise SimulationError("reps must be non-negative")


REPORT_COLUMNS = [
    "method", "design", "n", "k", "c", "D", "a", "interaction", "knowledge", "replicates",
    "tpr", "tpr_se", "fpr", "fpr_se", "seed",
]


@dataclass(frozen=True)
class StudyRow:
    method: str
    design: str
    n: int
    k: int
    c: int
    D: float
    a: int
    interaction: str
    knowledge: str
    replicates: int
    tpr: float
    tpr_se: float
    fpr: float
    fpr_se: float
    seed: int


@dataclass
class StudyReport:
    rows: list[StudyRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([
                r.method, r.design, r.n, r.k, r.c, repr(float(r.D)), r.a, r.interaction, r.knowledge,
                r.replicates, repr(r.tpr), repr(r.tpr_se), repr(r.fpr), repr(r.fpr_se), r.seed,
            ])
        return buf.getvalue()

    def get(self, method: str, design: str, D: float) -> StudyRow:
        for r in self.rows:
            if r.method == method and r.design == design and r.D == D:
                return r
        raise KeyError((method, design, D))


def cell_key(*parts) -> tuple[int, ...]:
    """Stable integer key for a study cell, independent of run order."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))


def replicate_seed(master: int, key: tuple[int, ...], r: int) -> int:
    return derive_seed(master, *key, r)


def _mean_se(values: list[float]) -> tuple[float, float]:
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def run_replicate(method: str, design: Design, k: int, scenario: Scenario, seed: int,
                  std=None, E: int = 0, binarize_level: float = 0.96) -> tuple[float, float]:
    """One simulated screen analysed by ``method``; returns (TPR, FPR)."""
    rng = np.random.default_rng(seed)
    active = tuple(sorted(int(j) + 1 for j in rng.choice(k, size=scenario.a, replace=False)))
    y = gen_interaction_response(design, scenario, rng, active)
    if scenario.knowledge == "pilot":
        mu_hat, s2 = pilot_draw(scenario.mu, scenario.sigma, rng, scenario.n_pilot)
        sd_hat = math.sqrt(s2)
    else:
        mu_hat, sd_hat = scenario.mu, scenario.sigma
    if method == "crows":
        declared = analyze(design, y, sd_hat, scenario.direction).hits
    elif method == "poolhits":
        labels = binarize_wells(y, mu_hat, sd_hat, scenario.direction, binarize_level)
        declared = poolhits_decode(std, labels, E).hits
    elif method == "ocow":
        if scenario.knowledge == "pilot":
            declared = ocow_lenth_analyze(y, mu_hat, scenario.direction)
        else:
            declared = ocow_analyze(y, mu_hat, sd_hat, scenario.direction)
    else:
        raise SimulationError(f"unknown method {method!r}")
    return evaluate(declared, active, k)


def _method_design(spec: DesignSpec, method: str, cfg: StudyConfig):
    if method == "crows":
        if spec.crows is None:
            seed = derive_seed(cfg.seed, *cell_key("design", spec.n, spec.k, spec.c))
            spec.crows = construct(ConstructConfig(spec.n, spec.k, spec.c, cfg.starts, seed)).design
        return spec.crows, None, 0
    if method == "poolhits":
        pre = spec.std_or_preset()
        std = std_design(spec.k, pre.q, pre.a, pre.gamma)
        return std.to_design(), std, pre.E
    return ones_minus_identity(spec.k), None, 0


def run_study(cfg: StudyConfig, threads: int = 1) -> StudyReport:
    """Replicated comparison over designs x methods x effect sizes.

    Replicate ``r`` of a cell draws its seed from (master seed, cell, r), so
    cells can be re-run alone and thread count does not affect results.
    The cell seed omits the method, so methods see the same active sets.
    """
    tag = cfg.interaction.tag if cfg.interaction else "none"
    cells = []
    for spec in cfg.designs:
        for method in cfg.methods:
            design, std, E = _method_design(spec, method, cfg)
            for D in cfg.D:
                scenario = Scenario(float(D), cfg.a, cfg.mu, cfg.sigma, cfg.direction, cfg.interaction,
                                    cfg.knowledge)
                key = cell_key(spec.label, spec.n, spec.k, spec.c, float(D), cfg.a, tag, cfg.knowledge)
                cells.append((spec, method, design, std, E, scenario, key))

    def run_cell(cell):
        spec, method, design, std, E, scenario, key = cell
        out = [run_replicate(method, design, spec.k, scenario, replicate_seed(cfg.seed, key, r), std, E,
                             cfg.binarize_level)
               for r in range(cfg.reps)]
        if not out:
            return None
        tpr, tpr_se = _mean_se([t for t, _ in out])
        fpr, fpr_se = _mean_se([f for _, f in out])
        return StudyRow(method, spec.label, design.n, spec.k, spec.c, scenario.D, cfg.a, tag, cfg.knowledge,
                        len(out), tpr, tpr_se, fpr, fpr_se, cfg.seed)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(run_cell, cells))
    else:
        rows = [run_cell(c) for c in cells]
    return StudyReport([r for r in rows if r is not None])


def preset_designs(name: str) -> list[DesignSpec]:
    sizes = {"table1": FULL_SIZES, "desk": DESK}.get(name)
    if sizes is None:
        raise SimulationError(f"unknown preset {name!r}; choose table1 or desk")
    return [DesignSpec(f"n{n}k{k}c{c}", n, k, c) for n, k, c in sizes]


def with_design(spec: DesignSpec, design: Design) -> DesignSpec:
    return replace(spec, crows=design)
