"""Lasso-based hit calling for pooled screens.

Pipeline: center and scale the design, fit a Lasso path over a log-spaced
lambda grid, drop estimates that are too small or point the wrong way, refit
every surviving support by least squares and keep the model with the
smallest BIC.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from crows import _kernels
from crows.design import Design

CD_TOL = 1e-8
CD_MAX_SWEEPS = 10_000
POLISH_AFTER = 200


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class Scaling:
    """How the centered/scaled design relates to the +-1 coding.

    ``columns`` lists the 1-based factors kept in the scaled design (constant
    columns are dropped); ``means``/``scales`` are per kept column, so that
    ``X_cs[:, t] = (X[:, columns[t] - 1] - means[t]) / scales[t]``.
    """

    columns: np.ndarray
    means: np.ndarray
    scales: np.ndarray
    dropped: tuple[int, ...]
    y_mean: float


def center_scale(design: Design | np.ndarray, y) -> tuple[np.ndarray, np.ndarray, Scaling]:
    """Center every column and scale it to squared length ``n``; center ``y``."""
    X = np.asarray(design.entries if isinstance(design, Design) else design, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if y.shape != (n,):
        raise AnalysisError(f"response has shape {y.shape}, expected ({n},)")
    means = X.mean(axis=0)
    centered = X - means
    scales = np.sqrt((centered ** 2).mean(axis=0))
    keep = scales > 0
    if not keep.any():
        raise AnalysisError("no estimable factors: every design column is constant")
    cols = np.flatnonzero(keep) + 1
    dropped = tuple(int(j) for j in np.flatnonzero(~keep) + 1)
    X_cs = centered[:, keep] / scales[keep]
    y_mean = float(y.mean())
    return X_cs, y - y_mean, Scaling(cols, means[keep], scales[keep], dropped, y_mean)


@dataclass(frozen=True)
class GridSpec:
    """``n_lambda`` log-spaced values from ``lambda_max`` down to
    ``scale * exp(log_min) / n``; ``scale`` is the noise SD so the grid
    moves with the response units."""

    n_lambda: int = 100
    log_min: float = -8.0
    scale: float = 1.0


@dataclass
class LassoPath:
    lambdas: np.ndarray
    coef: np.ndarray  # (n_lambda, p) on the scaled design
    intercept: np.ndarray  # (n_lambda,), zero for centered responses
    sweeps: np.ndarray
    converged: np.ndarray
    lambda_max: float

    @property
    def all_converged(self) -> bool:
        return bool(self.converged.all())


def lambda_grid(X_cs: np.ndarray, y_c: np.ndarray, spec: GridSpec = GridSpec()) -> tuple[np.ndarray, float]:
    n = X_cs.shape[0]
    if spec.n_lambda < 1:
        raise AnalysisError("lambda grid must be non-empty")
    lam_max = float(np.max(np.abs(X_cs.T @ y_c))) / n
    s = spec.scale
    floor = math.exp(spec.log_min) / n
    top = max(lam_max / s, floor)
    grid = np.exp(np.linspace(math.log(top), math.log(floor), spec.n_lambda)) * s
    grid[0] = top * s
    return grid, lam_max


def lasso_path(X_cs: np.ndarray, y_c: np.ndarray, grid: GridSpec | np.ndarray = GridSpec()) -> LassoPath:
    """Coordinate-descent solutions of
    ``(1/2n) ||y_c - X_cs b||^2 + lambda ||b||_1`` along a descending grid,
    each warm-started from the previous one."""
    X_cs = np.ascontiguousarray(X_cs, dtype=float)
    y_c = np.asarray(y_c, dtype=float)
    n = X_cs.shape[0]
    if isinstance(grid, GridSpec):
        lambdas, lam_max = lambda_grid(X_cs, y_c, grid)
    else:
        lambdas = np.asarray(grid, dtype=float)
        if lambdas.size == 0:
            raise AnalysisError("lambda grid must be non-empty")
        lam_max = float(np.max(np.abs(X_cs.T @ y_c))) / n
    G = X_cs.T @ X_cs / n
    b = X_cs.T @ y_c / n
    p = X_cs.shape[1]
    coef = np.zeros((len(lambdas), p))
    sweeps = np.zeros(len(lambdas), dtype=np.int64)
    conv = np.zeros(len(lambdas), dtype=bool)
    beta = np.zeros(p)
    for a, lam in enumerate(lambdas):
        if lam >= lam_max:
            beta[:] = 0.0
            conv[a] = True
        else:
            s, ok = _kernels.lasso_cd(G, b, beta, lam, CD_TOL, POLISH_AFTER)
            while not ok and s < CD_MAX_SWEEPS:
                _polish(G, b, beta, lam)
                s2, ok = _kernels.lasso_cd(G, b, beta, lam, CD_TOL, min(POLISH_AFTER, CD_MAX_SWEEPS - s))
                s += s2
            sweeps[a], conv[a] = s, ok
        coef[a] = beta
    return LassoPath(lambdas, coef, np.zeros(len(lambdas)), sweeps, conv, lam_max)


def _objective(G: np.ndarray, b: np.ndarray, beta: np.ndarray, lam: float) -> float:
    return 0.5 * float(beta @ G @ beta) - float(b @ beta) + lam * float(np.abs(beta).sum())


def _polish(G: np.ndarray, b: np.ndarray, beta: np.ndarray, lam: float) -> None:
    """Active-set refinement for badly conditioned problems, in place.

    Repeatedly solves ``G_AA x = b_A - lam s_A`` on the current support
    ``A`` with signs ``s_A`` and moves toward ``x``, stopping at the first
    coordinate that would change sign (it is dropped).  Each accepted step
    lowers the objective; coordinate descent then handles coordinates that
    need to enter the support.
    """
    for _ in range(2 * len(beta) + 2):
        A = np.flatnonzero(beta)
        if A.size == 0:
            return
        sgn = np.sign(beta[A])
        G_AA = G[np.ix_(A, A)]
        _, sv, vt = np.linalg.svd(G_AA)
        if sv[-1] <= 1e-10 * sv[0]:
            # flat direction: the objective is linear along it, so slide
            # until a coordinate reaches zero
            v = vt[-1]
            if sgn @ v > 0 or (sgn @ v == 0 and not np.any(beta[A] * v < 0)):
                v = -v
            hit = beta[A] * v < 0
            if not hit.any():
                return
            t = -beta[A][hit] / v[hit]
            step = float(t.min())
            trial = beta.copy()
            trial[A] = beta[A] + step * v
            trial[A[hit][t <= step]] = 0.0
            if _objective(G, b, trial, lam) > _objective(G, b, beta, lam) + 1e-14:
                return
            beta[:] = trial
            continue
        x, *_ = np.linalg.lstsq(G_AA, b[A] - lam * sgn, rcond=None)
        trial = beta.copy()
        crossing = np.sign(x) != sgn
        if crossing.any():
            cur = beta[A]
            t = cur[crossing] / (cur[crossing] - x[crossing])
            step = float(t.min())
            trial[A] = cur + step * (x - cur)
            trial[A[crossing][t <= step]] = 0.0
        else:
            trial[A] = x
        if _objective(G, b, trial, lam) > _objective(G, b, beta, lam):
            return
        beta[:] = trial
        if not crossing.any():
            return


def kkt_residual(X_cs: np.ndarray, y_c: np.ndarray, beta: np.ndarray, lam: float) -> float:
    """Largest violation of the Lasso optimality conditions at ``beta``."""
    n = X_cs.shape[0]
    g = X_cs.T @ (X_cs @ beta - y_c) / n
    nz = beta != 0
    res = np.zeros_like(g)
    res[nz] = np.abs(g[nz] + lam * np.sign(beta[nz]))
    res[~nz] = np.maximum(np.abs(g[~nz]) - lam, 0.0)
    return float(res.max(initial=0.0))


# --- thresholding, refit and selection --------------------------------------

@dataclass
class AnalysisResult:
    direction: str
    selected_index: int
    selected_lambda: float
    hits: tuple[int, ...]
    estimates: dict[int, float]
    intercept: float
    bic: np.ndarray
    supports: list[tuple[int, ...]] = field(repr=False)
    path: LassoPath | None = field(default=None, repr=False)
    scaling: Scaling | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {
            "direction": self.direction,
            "selected_lambda": self.selected_lambda,
            "selected_index": self.selected_index,
            "hits": list(self.hits),
            "estimates": {str(k): v for k, v in self.estimates.items()},
            "intercept": self.intercept,
        }


def _check_direction(direction: str) -> int:
    if direction not in ("positive", "negative"):
        raise AnalysisError(f"direction must be 'positive' or 'negative', got {direction!r}")
    return 1 if direction == "positive" else -1


def ols_refit(X: np.ndarray, y: np.ndarray, support) -> tuple[float, np.ndarray, float]:
    """Least squares of ``y`` on an intercept plus the ``support`` columns of
    the +-1 design (1-based).  Returns ``(intercept, coef, rss)``."""
    n = X.shape[0]
    A = np.ones((n, len(support) + 1))
    if support:
        A[:, 1:] = X[:, np.asarray(support) - 1]
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ sol
    return float(sol[0]), sol[1:], float(resid @ resid)


BIC_FORMS = ("known-sigma", "log-rss")


def bic(rss: float, n: int, p: int, sigma: float | None = None, form: str = "known-sigma") -> float:
    """BIC of a least-squares fit with ``p`` coefficients (intercept included).

    ``known-sigma``: ``RSS / sigma^2 + p ln n``; ``log-rss``:
    ``n ln(RSS / n) + p ln n``.
    """
    if form == "known-sigma":
        return rss / (sigma * sigma) + p * math.log(n)
    if form == "log-rss":
        return n * math.log(max(rss, 1e-300) / n) + p * math.log(n)
    raise AnalysisError(f"unknown BIC form {form!r}")


def threshold_and_refit(
    path: LassoPath,
    sigma: float,
    direction: str,
    scaling: Scaling,
    y,
    design: Design | np.ndarray,
    coding: str = "original",
    bic_form: str = "known-sigma",
) -> AnalysisResult:
    """Turn a Lasso path into a declared hit set.

    At each lambda, coefficients on the original +-1 coding (or on the scaled
    coding with ``coding="scaled"``) below ``sigma/8`` in the effect
    direction are zeroed.  The survivors are refit by least squares with an
    intercept, capped at the ``n - 2`` largest, and refit again after
    dropping any whose refit estimate falls below ``sigma/8`` in the effect
    direction.  The smallest BIC (see :func:`bic`; ``p`` counts the
    intercept) picks the model; ties go to the larger lambda.
    """
    if not sigma > 0:
        raise AnalysisError("sigma must be positive")
    sign = _check_direction(direction)
    if coding not in ("original", "scaled"):
        raise AnalysisError(f"unknown coding {coding!r}")
    X = np.asarray(design.entries if isinstance(design, Design) else design, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    cut = sigma / 8.0
    cap = max(n - 2, 0)

    coefs = path.coef / scaling.scales if coding == "original" else path.coef
    cache: dict[tuple[int, ...], tuple[tuple[int, ...], float, np.ndarray, float]] = {}
    bics = np.empty(len(path.lambdas))
    supports: list[tuple[int, ...]] = []
    fits = []
    for a in range(len(path.lambdas)):
        signed = sign * coefs[a]
        keep = np.flatnonzero(signed >= cut)
        if len(keep) > cap:
            keep = keep[np.argsort(-signed[keep], kind="stable")[:cap]]
            keep.sort()
        cand = tuple(int(scaling.columns[t]) for t in keep)
        if cand not in cache:
            sup = cand
            while True:
                b0, b, rss = ols_refit(X, y, sup)
                good = [s for s, v in zip(sup, b) if sign * v >= cut]
                if len(good) == len(sup):
                    break
                sup = tuple(good)
            cache[cand] = (sup, b0, b, rss)
        sup, b0, b, rss = cache[cand]
        supports.append(sup)
        fits.append((b0, b))
        bics[a] = bic(rss, n, len(sup) + 1, sigma, bic_form)

    best = 0
    for a in range(1, len(bics)):
        if bics[a] < bics[best]:
            best = a
    b0, b = fits[best]
    hits = supports[best]
    return AnalysisResult(
        direction=direction,
        selected_index=best,
        selected_lambda=float(path.lambdas[best]),
        hits=hits,
        estimates={j: float(v) for j, v in zip(hits, b)},
        intercept=b0,
        bic=bics,
        supports=supports,
        path=path,
        scaling=scaling,
    )


def analyze(
    design: Design | np.ndarray,
    y,
    sigma: float,
    direction: str = "positive",
    grid: GridSpec | None = None,
    coding: str = "original",
    bic_form: str = "known-sigma",
) -> AnalysisResult:
    """Full pipeline from raw responses to a declared hit set."""
    _check_direction(direction)
    if not sigma > 0:
        raise AnalysisError("sigma must be positive")
    X_cs, y_c, scaling = center_scale(design, y)
    path = lasso_path(X_cs, y_c, grid or GridSpec(scale=sigma))
    return threshold_and_refit(path, sigma, direction, scaling, y, design, coding, bic_form)


def profile_csv(result: AnalysisResult) -> str:
    """Per-lambda coefficients on the +-1 coding, one row per grid point."""
    path, scaling = result.path, result.scaling
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda", "bic", "support"] + [f"f{j}" for j in scaling.columns])
    orig = path.coef / scaling.scales
    for a, lam in enumerate(path.lambdas):
        w.writerow([repr(float(lam)), repr(float(result.bic[a])),
                    " ".join(str(j) for j in result.supports[a])] + [repr(float(v)) for v in orig[a]])
    return buf.getvalue()


def lenth_pse(values) -> float:
    """Lenth's pseudo standard error of a set of centered effects.

    ``s0 = 1.5 median|c|``; the PSE is ``1.5`` times the median of the
    ``|c|`` strictly below ``2.5 s0``.  Returns 0.0 when every value is 0.
    """
    a = np.abs(np.asarray(values, dtype=float))
    if a.size < 2:
        raise AnalysisError("Lenth's PSE needs at least two values")
    s0 = 1.5 * float(np.median(a))
    trimmed = a[a < 2.5 * s0]
    if trimmed.size == 0:
        return 0.0
    return 1.5 * float(np.median(trimmed))
