"""Synthetic factor-model panels, a fixed effects baseline, masking evaluation and influence oracles."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .apm import projector
from .errors import (
    DegenerateCohort,
    DisconnectedDesign,
    HeteroskedasticTruth,
    UnidentifiedAfterMask,
    UnidentifiedTarget,
)
from .estimate import EstimatorConfig, bridge_matrix, estimate_all, r_matrix
from .panel import Cohort, CohortIndex, Panel, cohortize, mask_cell
from .perturb import EigenWindow, first_order_operator

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DgpTruth:
    """
    Population parameters of a factor-model panel.

    Attributes
    ----------
    gamma : np.ndarray
        T x r factor matrix; row ``t`` is the factor vector of outcome ``t``.
    t_sets : tuple of tuple of int
        Observed outcomes of each cohort.
    cohort_probs : np.ndarray
        Cohort probabilities.
    loading_means : np.ndarray
        C x r conditional loading means.
    loading_covs : np.ndarray
        C x r x r conditional loading covariances, symmetric positive
        semidefinite.
    noise : np.ndarray
        Noise variances: length C for homoskedastic noise or C x T for
        outcome-specific variances.
    distribution : {"gaussian", "uniform"}
        Family used for loadings and noise.
    """

    gamma: np.ndarray
    t_sets: Tuple[Tuple[int, ...], ...]
    cohort_probs: np.ndarray
    loading_means: np.ndarray
    loading_covs: np.ndarray
    noise: np.ndarray
    distribution: str = "gaussian"

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        if gamma.ndim == 1:
            gamma = gamma[:, None]
        t_dim, r = gamma.shape
        t_sets = tuple(tuple(sorted(int(t) for t in s)) for s in self.t_sets)
        n_c = len(t_sets)
        probs = np.asarray(self.cohort_probs, dtype=float)
        means = np.asarray(self.loading_means, dtype=float).reshape(n_c, r)
        covs = np.asarray(self.loading_covs, dtype=float).reshape(n_c, r, r)
        noise = np.asarray(self.noise, dtype=float)
        if noise.ndim == 0:
            noise = np.full(n_c, float(noise))
        if probs.shape != (n_c,) or np.any(probs < 0) or abs(probs.sum() - 1) > 1e-12:
            raise ValueError("cohort_probs must be a probability vector with one entry per cohort")
        if any(len(s) == 0 for s in t_sets):
            raise ValueError("every cohort must observe at least one outcome")
        if any(t < 0 or t >= t_dim for s in t_sets for t in s):
            raise ValueError("observed sets reference unknown outcomes")
        if set(range(t_dim)) - {t for s in t_sets for t in s}:
            raise ValueError("every outcome must be observed by some cohort")
        for cov in covs:
            if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov)[0] < -1e-12 * max(1.0, np.abs(cov).max()):
                raise ValueError("loading covariances must be symmetric positive semidefinite")
        if noise.shape not in ((n_c,), (n_c, t_dim)) or np.any(noise < 0):
            raise ValueError("noise must hold nonnegative variances per cohort or per cell")
        if self.distribution not in ("gaussian", "uniform"):
            raise ValueError("distribution must be 'gaussian' or 'uniform'")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "t_sets", t_sets)
        object.__setattr__(self, "cohort_probs", probs)
        object.__setattr__(self, "loading_means", means)
        object.__setattr__(self, "loading_covs", covs)
        object.__setattr__(self, "noise", noise)

    @property
    def n_outcomes(self) -> int:
        return self.gamma.shape[0]

    @property
    def r(self) -> int:
        return self.gamma.shape[1]

    @property
    def n_cohorts(self) -> int:
        return len(self.t_sets)

    @property
    def heteroskedastic(self) -> bool:
        return self.noise.ndim == 2

    @property
    def mu_true(self) -> np.ndarray:
        """C x T matrix of conditional outcome means."""
        return self.loading_means @ self.gamma.T

    def noise_variances(self, cohort: int) -> np.ndarray:
        if self.heteroskedastic:
            return self.noise[cohort].copy()
        return np.full(self.n_outcomes, self.noise[cohort])

    def indicator(self, cohort: int) -> np.ndarray:
        ind = np.zeros(self.n_outcomes)
        ind[list(self.t_sets[cohort])] = 1.0
        return ind

    def loading_second_moment(self, cohort: int) -> np.ndarray:
        m = self.loading_means[cohort]
        return self.loading_covs[cohort] + np.outer(m, m)

    def second_moment(self, cohort: int) -> np.ndarray:
        """Population uncentered second moment of the cohort's observed outcomes."""
        e = self.indicator(cohort)
        g = self.gamma
        full = g @ self.loading_second_moment(cohort) @ g.T + np.diag(self.noise_variances(cohort))
        return full * np.outer(e, e)

    def observed_projection(self, cohort: int) -> np.ndarray:
        """Projector onto the factor rows of the cohort's observed outcomes."""
        return projector(self.gamma * self.indicator(cohort)[:, None])

    def apm(self, cohorts: Optional[Sequence[int]] = None) -> np.ndarray:
        """Population aggregated projection matrix over ``cohorts`` (default all)."""
        cohorts = range(self.n_cohorts) if cohorts is None else cohorts
        d = self.n_outcomes
        out = np.zeros((d, d))
        for c in cohorts:
            out += np.diag(self.indicator(c)) - self.observed_projection(c)
        return 0.5 * (out + out.T)


def block_pattern(T: int, n_missing: int = 1) -> Tuple[Tuple[int, ...], ...]:
    """A target cohort missing the last outcomes and a reference cohort observing all."""
    if not 0 < n_missing < T:
        raise ValueError("need 0 < n_missing < T")
    return (tuple(range(T - n_missing)), tuple(range(T)))


def staircase_pattern(C: int, r: int = 1) -> Tuple[Tuple[int, ...], ...]:
    """Cohort ``c`` observes outcomes ``c..c+r``; neighbours share ``r`` outcomes."""
    return tuple(tuple(range(c, c + r + 1)) for c in range(C))


def three_cohort_pattern() -> Tuple[Tuple[int, ...], ...]:
    """Three cohorts over four outcomes in a staircase."""
    return staircase_pattern(3, 1)


def staggered_pattern(C: int, pre_window: int, never_treated: bool = True) -> Tuple[Tuple[int, ...], ...]:
    """
    Event-study pattern: cohort ``c`` observes ``pre_window`` untreated outcomes ending at ``c + pre_window - 1``.

    An optional never-treated cohort observes every outcome.
    """
    T = C + pre_window - 1 + (1 if never_treated else 0)
    sets = [tuple(range(c, c + pre_window)) for c in range(C)]
    if never_treated:
        sets.append(tuple(range(T)))
    return tuple(sets)


def truth_from_config(config: dict) -> DgpTruth:
    """
    Build a :class:`DgpTruth` from a JSON-style dictionary.

    Keys are ``T``, ``r``, ``gamma`` (nested list or ``"random"``),
    ``cohorts`` (list of objects with ``prob``, ``loading_mean``,
    ``loading_cov`` and ``t_set``), ``noise`` (scalar, per-cohort list or
    per-cell nested list) and ``seed`` (used for a random ``gamma``).
    """
    T, r = int(config["T"]), int(config["r"])
    cohorts = config["cohorts"]
    gamma = config.get("gamma", "random")
    if isinstance(gamma, str):
        if gamma != "random":
            raise ValueError("gamma must be a matrix or 'random'")
        rng = np.random.default_rng(np.random.SeedSequence([int(config.get("seed", 0)), 1]))
        gamma = rng.normal(size=(T, r))
    gamma = np.asarray(gamma, dtype=float).reshape(T, r)
    noise = config.get("noise", 1.0)
    return DgpTruth(
        gamma=gamma,
        t_sets=tuple(tuple(c["t_set"]) for c in cohorts),
        cohort_probs=np.array([float(c["prob"]) for c in cohorts]),
        loading_means=np.array([c["loading_mean"] for c in cohorts], dtype=float).reshape(len(cohorts), r),
        loading_covs=np.array([c.get("loading_cov", np.eye(r).tolist()) for c in cohorts], dtype=float).reshape(
            len(cohorts), r, r
        ),
        noise=np.asarray(noise, dtype=float),
        distribution=config.get("distribution", "gaussian"),
    )


def _matrix_root(cov: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(cov)
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


def _standard_draws(rng: np.random.Generator, size, distribution: str) -> np.ndarray:
    if distribution == "uniform":
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=size)
    return rng.standard_normal(size=size)


def generate(
    truth: DgpTruth,
    n: int,
    seed: int,
    on_empty: str = "error",
    outcome_ids: Optional[Sequence[str]] = None,
) -> Panel:
    """
    Draw a panel of ``n`` units.

    Cohort sizes are multinomial, loadings and noise have the configured
    means and variances, and only the cohort's observed cells are kept.
    Units are ordered by cohort.

    Raises
    ------
    DegenerateCohort
        If a cohort draws no units and ``on_empty`` is ``"error"``. With
        ``"redraw"`` cohort sizes are redrawn (up to 100 times).
    """
    if n < truth.n_cohorts:
        raise ValueError("need at least one unit per cohort")
    rng = np.random.default_rng(seed)
    for _ in range(100):
        counts = rng.multinomial(n, truth.cohort_probs)
        if counts.min() > 0 or on_empty != "redraw":
            break
    if counts.min() == 0 and on_empty != "allow":
        raise DegenerateCohort(f"cohorts {np.flatnonzero(counts == 0).tolist()} drew no units")
    d, r = truth.n_outcomes, truth.r
    values = np.full((n, d), np.nan)
    start = 0
    for c, size in enumerate(counts):
        if size == 0:
            continue
        root = _matrix_root(truth.loading_covs[c])
        lam = truth.loading_means[c] + _standard_draws(rng, (size, r), truth.distribution) @ root.T
        eps = _standard_draws(rng, (size, d), truth.distribution) * np.sqrt(truth.noise_variances(c))
        block = lam @ truth.gamma.T + eps
        t = list(truth.t_sets[c])
        values[start:start + size, t] = block[:, t]
        start += size
    return Panel.from_dense(values, outcome_ids=outcome_ids)


def twfe_from_moments(
    t_sets: Sequence[Sequence[int]],
    weights: np.ndarray,
    cohort_means: np.ndarray,
) -> np.ndarray:
    """
    Additive unit and outcome effects fitted from cohort summaries.

    With unit effects concentrated out, the outcome effects solve the
    normal equations ``sum_c w_c D_c g = sum_c w_c D_c ybar_c`` where
    ``D_c`` demeans over the cohort's observed outcomes. The minimum-norm
    solution satisfies ``sum_t g_t = 0``. Returns the C x T matrix of
    imputed means ``mean unit effect of c + g_t``.

    Raises
    ------
    DisconnectedDesign
        If the outcome effects are not identified up to a constant.
    """
    cohort_means = np.asarray(cohort_means, dtype=float)
    d = cohort_means.shape[1]
    lhs = np.zeros((d, d))
    rhs = np.zeros(d)
    for t_set, w, ybar in zip(t_sets, weights, cohort_means):
        t = list(t_set)
        if not t or w <= 0:
            continue
        centre = np.zeros((d, d))
        centre[t, t] = 1.0
        centre[np.ix_(t, t)] -= 1.0 / len(t)
        y = np.zeros(d)
        y[t] = ybar[t]
        lhs += w * centre
        rhs += w * centre @ y
    evals = np.linalg.eigvalsh(lhs)
    if evals[-1] <= 0 or np.sum(evals > 1e-10 * evals[-1]) < d - 1:
        raise DisconnectedDesign("unit-outcome design is disconnected; outcome effects are not identified")
    g = np.linalg.lstsq(lhs, rhs, rcond=1e-10)[0]
    g -= g.mean()
    out = np.empty((len(t_sets), d))
    for k, (t_set, ybar) in enumerate(zip(t_sets, cohort_means)):
        t = list(t_set)
        level = np.mean(ybar[t] - g[t]) if t else np.nan
        out[k] = level + g
    return out


def twfe_estimate(panel: Panel, index: Optional[CohortIndex] = None) -> np.ndarray:
    """
    Two-way fixed effects imputation of every cohort outcome mean.

    Fits ``y_it = a_i + g_t`` by least squares on the observed cells
    and returns ``mean of a_i over cohort c + g_t``.
    """
    if index is None:
        index = cohortize(panel, 1)
    means = np.zeros((index.n_cohorts, index.n_outcomes))
    for k, c in enumerate(index.cohorts):
        if c.t_set:
            means[k, list(c.t_set)] = panel.values[np.ix_(c.members, c.t_set)].mean(axis=0)
    return twfe_from_moments(index.t_sets, index.sizes.astype(float), means)


def twfe_population(truth: DgpTruth) -> np.ndarray:
    """Large-sample limit of :func:`twfe_estimate` under ``truth``."""
    return twfe_from_moments(truth.t_sets, truth.cohort_probs, truth.mu_true)


@dataclass(frozen=True)
class MaskMetrics:
    """Resampling accuracy of one estimator on one masked cell."""

    target_cohort: int
    target_outcome: int
    estimator: str
    abs_bias: float
    se: float
    rmse: float
    truth: float
    mean_estimate: float
    reps: int


def _resampled_index(index: CohortIndex) -> CohortIndex:
    cohorts, start = [], 0
    for c in index.cohorts:
        members = np.arange(start, start + c.size)
        cohorts.append(Cohort(c.t_set, members))
        start += c.size
    return CohortIndex(tuple(cohorts), start, index.n_outcomes, np.zeros(0, dtype=int))


def _metrics(c, t, name, draws, truth) -> MaskMetrics:
    draws = np.asarray(draws, dtype=float)
    bias = float(draws.mean() - truth)
    se = float(draws.std())
    rmse = float(np.sqrt(np.mean((draws - truth) ** 2)))
    return MaskMetrics(c, t, name, abs(bias), se, rmse, truth, float(draws.mean()), len(draws))


def mask_eval(
    panel: Panel,
    targets: Sequence[Tuple[int, int]],
    reps: int = 100,
    seed: int = 0,
    estimators: Sequence[str] = ("apm", "twfe"),
    r: int = 1,
    config: Optional[EstimatorConfig] = None,
    threads: int = 1,
) -> List[MaskMetrics]:
    """
    Hide observed cells and measure how well each estimator recovers them.

    For each ``(cohort, outcome)`` target the cell is masked, units are
    resampled with replacement within each cohort ``reps`` times, and each
    estimator's prediction is compared with the pre-mask sample mean.
    ``se`` is the standard deviation across resamples, so
    ``rmse**2 = abs_bias**2 + se**2``.

    Raises
    ------
    UnidentifiedAfterMask
        If the masked data no longer identify a target.
    """
    config = config or EstimatorConfig()
    unknown = set(estimators) - {"apm", "twfe"}
    if unknown:
        raise ValueError(f"unknown estimators {sorted(unknown)}")
    index = cohortize(panel, config.min_cohort_size)
    out = []
    for k, (c, t) in enumerate(targets):
        masked, truth = mask_cell(panel, index, c, t)
        midx = cohortize(masked, config.min_cohort_size)
        new_c = int(midx.labels()[index.cohorts[c].members[0]])
        cfg = replace(config, target_cohort=new_c)
        try:
            check = estimate_all(masked, r, cfg, index=midx)
        except UnidentifiedTarget as exc:
            raise UnidentifiedAfterMask(f"target ({c}, {t}): {exc}") from exc
        if not np.isfinite(check.means.mu_hat[new_c, t]):
            raise UnidentifiedAfterMask(f"target ({c}, {t}): outcome not reachable after masking")
        groups = [co.members for co in midx.cohorts]
        boot_index = _resampled_index(midx)

        def one(b, k=k, t=t, new_c=new_c, cfg=cfg, masked=masked, groups=groups, boot_index=boot_index):
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), k, b]))
            rows = np.concatenate([rng.choice(g, size=len(g), replace=True) for g in groups])
            boot = masked.take_rows(rows)
            res = {}
            if "apm" in estimators:
                res["apm"] = estimate_all(boot, r, cfg, index=boot_index).means.mu_hat[new_c, t]
            if "twfe" in estimators:
                res["twfe"] = twfe_estimate(boot, boot_index)[new_c, t]
            return res

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                draws = list(pool.map(one, range(reps)))
        else:
            draws = [one(b) for b in range(reps)]
        for name in estimators:
            out.append(_metrics(c, t, name, [d[name] for d in draws], truth))
        log.info("mask target (%d, %d) done", c, t)
    return out


def _panel_cohorts(truth: DgpTruth, panel: Panel, index: Optional[CohortIndex]) -> np.ndarray:
    """Truth cohort of every panel row."""
    if index is None:
        index = cohortize(panel, 1)
    lookup = {s: k for k, s in enumerate(truth.t_sets)}
    labels = np.full(panel.n_units, -1, dtype=int)
    for c in index.cohorts:
        if c.t_set not in lookup:
            raise ValueError(f"panel cohort {c.t_set} is not a cohort of the truth")
        labels[c.members] = lookup[c.t_set]
    return labels


def pc_influence_operator(truth: DgpTruth, cohort: int, convention: str = "validated") -> np.ndarray:
    """
    T^2 x T^2 linear map from a second-moment error to the projector error.

    Built from the eigenpairs of the population second moment; the
    ``r`` largest eigenvalues form the window.
    """
    d, r = truth.n_outcomes, truth.r
    window = EigenWindow.from_matrix(truth.second_moment(cohort), d - r, r)
    return first_order_operator(window, convention)


def apm_influence_operator(truth: DgpTruth, cohorts: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    T^2 x T^2 linear map from the summed cohort projector errors to the error in the factor projector.

    Equal to ``kron(A+, P) + kron(P, A+)`` where ``A+`` is the
    pseudo-inverse of the population APM and ``P`` projects onto the factors.
    """
    a = truth.apm(cohorts)
    window = EigenWindow.from_matrix(a, 0, truth.r)
    # the APM moves by minus the summed projector errors
    return -first_order_operator(window, "validated")


def oracle_influence(
    truth: DgpTruth,
    panel: Panel,
    target_cohort: int,
    convention: str = "validated",
    index: Optional[CohortIndex] = None,
) -> np.ndarray:
    """
    Per-unit influence function of the extrapolated means of one cohort.

    Uses the true factors, second moments and cohort probabilities. The
    sample average of the rows approximates ``mu_hat - mu`` for the
    principal components version of the estimator.

    Parameters
    ----------
    truth : DgpTruth
        Homoskedastic population.
    panel : Panel
        Sample drawn from ``truth``.
    target_cohort : int
        Cohort position in ``truth``.
    convention : {"validated", "printed"}
        Sign of the cohort projector expansion.

    Returns
    -------
    np.ndarray
        N x T array.

    Raises
    ------
    HeteroskedasticTruth
        If the noise variances differ across outcomes.
    """
    if truth.heteroskedastic and not np.all(truth.noise == truth.noise[:, :1]):
        raise HeteroskedasticTruth("oracle requires equal noise variances within each cohort")
    d = truth.n_outcomes
    labels = _panel_cohorts(truth, panel, index)
    present = sorted(set(labels[labels >= 0].tolist()))
    y = np.nan_to_num(panel.values, nan=0.0)
    outer = np.einsum("ni,nj->nij", y, y).reshape(panel.n_units, d * d)

    summed = np.zeros((panel.n_units, d * d))
    for c in present:
        rows = labels == c
        h_c = pc_influence_operator(truth, c, convention)
        dev = outer[rows] - truth.second_moment(c).reshape(-1)
        summed[rows] = dev @ h_c.T / truth.cohort_probs[c]

    g = truth.gamma
    t_set = truth.t_sets[target_cohort]
    mu = truth.mu_true[target_cohort]
    e = truth.indicator(target_cohort)
    rm = r_matrix(g, t_set)
    left = np.kron((mu * e) @ rm, rm)
    compose = left @ apm_influence_operator(truth, present)
    psi = summed @ compose.T
    rows = labels == target_cohort
    direct = y[rows] @ bridge_matrix(g, t_set).T - mu
    psi[rows] += direct / truth.cohort_probs[target_cohort]
    return psi
