"""Bayesian bootstrap with sup-t simultaneous confidence intervals."""

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ApmError, DegenerateWarning, ReplicateFailure, ZeroSpread
from .estimate import EstimatorConfig, estimate_all
from .panel import Panel, cohortize

log = logging.getLogger(__name__)

NORMAL_IQR = 1.348979500
MAX_FAIL_SHARE = 0.05


@dataclass(frozen=True)
class BootstrapResult:
    """
    Replicates, standard errors and simultaneous intervals.

    Attributes
    ----------
    theta_hat : np.ndarray
        Point estimate, length p.
    replicates : np.ndarray
        M' x p matrix of successful replicates.
    sigma_hat : np.ndarray
        Floored IQR standard errors.
    q_crit : float
        Critical value shared by all coordinates.
    intervals : np.ndarray
        p x 2 array of lower and upper bounds.
    degenerate : np.ndarray
        True where the standard error hit the positivity floor.
    """

    theta_hat: np.ndarray
    replicates: np.ndarray
    sigma_hat: np.ndarray
    q_crit: float
    intervals: np.ndarray
    alpha: float
    M: int
    seed: int
    failed_replicates: int = 0
    centered: bool = True
    degenerate: Optional[np.ndarray] = None
    names: tuple = ()


def replicate_rng(seed: int, m: int) -> np.random.Generator:
    """Independent generator for replicate ``m``, independent of execution order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(m)]))


def draw_weights(n: int, rng: np.random.Generator) -> np.ndarray:
    """Normalized Exponential(1) weights on the simplex."""
    if n < 1:
        raise ValueError("n must be positive")
    xi = rng.exponential(1.0, size=n)
    return xi / xi.sum()


def iqr_se(column: np.ndarray) -> float:
    """
    Interquartile range divided by that of the standard normal.

    Raises
    ------
    ZeroSpread
        If the interquartile range is zero.
    """
    column = np.asarray(column, dtype=float)
    if column.size < 2:
        raise ValueError("need at least two replicates")
    q25, q75 = np.quantile(column, [0.25, 0.75])
    spread = q75 - q25
    if spread <= 0:
        raise ZeroSpread("interquartile range is zero")
    return float(spread / NORMAL_IQR)


def critical_value(
    replicates: np.ndarray,
    theta_hat: np.ndarray,
    sigma: np.ndarray,
    alpha: float,
    centered: bool = True,
) -> float:
    """
    Empirical ``1 - alpha`` quantile of the max standardized deviation.

    With ``centered=False`` the replicates are standardized without
    subtracting the point estimate.
    """
    replicates = np.atleast_2d(np.asarray(replicates, dtype=float))
    theta_hat = np.asarray(theta_hat, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("standard errors must be positive")
    dev = replicates - theta_hat if centered else replicates
    z = np.max(np.abs(dev) / sigma, axis=1)
    return float(np.quantile(z, 1.0 - alpha))


def floor_sigma(sigma: np.ndarray, theta_hat: np.ndarray) -> np.ndarray:
    return np.maximum(sigma, 1e-12 * np.abs(theta_hat) + 1e-300)


def summarize(
    theta_hat: np.ndarray,
    replicates: np.ndarray,
    alpha: float,
    centered: bool = True,
):
    """Standard errors, critical value and intervals from replicates."""
    p = len(theta_hat)
    raw = np.zeros(p)
    for j in range(p):
        try:
            raw[j] = iqr_se(replicates[:, j])
        except ZeroSpread:
            raw[j] = 0.0
    sigma = floor_sigma(raw, theta_hat)
    degenerate = sigma > raw
    if degenerate.any():
        warnings.warn(
            f"coordinates {np.flatnonzero(degenerate).tolist()} have zero bootstrap spread",
            DegenerateWarning,
            stacklevel=2,
        )
    q = critical_value(replicates, theta_hat, sigma, alpha, centered)
    intervals = np.column_stack([theta_hat - q * sigma, theta_hat + q * sigma])
    return sigma, q, intervals, degenerate


def bootstrap(
    panel: Panel,
    r: int,
    target,
    M: int,
    alpha: float,
    seed: int,
    config: Optional[EstimatorConfig] = None,
    centered: bool = True,
    threads: int = 1,
) -> BootstrapResult:
    """
    Simultaneous inference by re-running the weighted estimator.

    Replicate ``m`` draws Exponential weights from a generator seeded by
    ``(seed, m)``, so the result does not depend on ``threads``.

    Parameters
    ----------
    target
        Object with ``evaluate(means)`` and ``names(outcome_ids)``, for
        example :class:`~apmpanel.targets.CellTarget`.

    Raises
    ------
    ReplicateFailure
        If more than 5% of replicates fail.
    """
    if M < 2:
        raise ValueError("M must be at least 2")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    config = config or EstimatorConfig()
    index = cohortize(panel, config.min_cohort_size)
    theta_hat = np.asarray(target.evaluate(estimate_all(panel, r, config, index=index).means), dtype=float)
    n = panel.n_units

    def one(m: int):
        weights = draw_weights(n, replicate_rng(seed, m))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                est = estimate_all(panel, r, config, weights=weights, index=index)
                return np.asarray(target.evaluate(est.means), dtype=float)
        except (ApmError, np.linalg.LinAlgError) as exc:
            log.debug("replicate %d failed: %s", m, exc)
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(M)))
    else:
        results = [one(m) for m in range(M)]
    kept = [x for x in results if x is not None]
    failed = M - len(kept)
    if failed > MAX_FAIL_SHARE * M:
        raise ReplicateFailure(f"{failed} of {M} bootstrap replicates failed")
    if len(kept) < 2:
        raise ReplicateFailure("fewer than two replicates succeeded")
    replicates = np.vstack(kept)
    sigma, q, intervals, degenerate = summarize(theta_hat, replicates, alpha, centered)
    return BootstrapResult(
        theta_hat,
        replicates,
        sigma,
        q,
        intervals,
        alpha,
        M,
        seed,
        failed,
        centered,
        degenerate,
        tuple(target.names(panel.outcome_ids)),
    )
