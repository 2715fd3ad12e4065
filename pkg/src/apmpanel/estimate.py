"""Bridge extrapolation of cohort means and the end-to-end estimator."""

import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .apm import Apm, FactorBasis, build_apm, null_basis
from .errors import (
    EmptyCohort,
    IdentificationWarning,
    RankDeficientRestriction,
    SingularGram,
    UnidentifiedTarget,
    ZeroCohortWeight,
)
from .factors import cohort_projection, second_moment
from .graph import build_overlap_graph, components_from_adjacency
from .panel import CohortIndex, Panel, cohortize

RANK_TOL = 1e-8

BasisLike = Union[FactorBasis, np.ndarray]


def _basis_array(basis: BasisLike) -> np.ndarray:
    g = basis.gamma_tilde if isinstance(basis, FactorBasis) else np.asarray(basis, dtype=float)
    return g[:, None] if g.ndim == 1 else g


@dataclass(frozen=True)
class EstimatorConfig:
    """
    Choices for :func:`estimate_all`.

    Parameters
    ----------
    factor_method : {"pc", "split"}
        Cohort factor estimator.
    min_cohort_size : int
        Size filter applied when the panel is grouped into cohorts.
    gap_floor : float, optional
        Weak-identification threshold for the APM eigengap. Defaults to
        ``1e-6`` times the largest APM eigenvalue.
    target_cohort : int, optional
        Cohort whose overlap-graph component is estimated. Defaults to the
        component holding the most units.
    """

    factor_method: str = "pc"
    min_cohort_size: int = 2
    gap_floor: Optional[float] = None
    target_cohort: Optional[int] = None


@dataclass(frozen=True)
class CohortMeans:
    """
    Estimated cohort outcome means.

    Attributes
    ----------
    mu_hat : np.ndarray
        C x T matrix. Rows of cohorts outside the estimated component, and
        outcomes no cohort in it observes, are NaN.
    observed_flag : np.ndarray
        C x T booleans, True where the cohort observes the outcome.
    cohort_probs : np.ndarray
        Empirical (or weighted) cohort shares over all retained units.
    """

    mu_hat: np.ndarray
    observed_flag: np.ndarray
    cohort_probs: np.ndarray

    @property
    def n_cohorts(self) -> int:
        return self.mu_hat.shape[0]


@dataclass(frozen=True)
class Estimate:
    """Everything produced by one run of the estimator."""

    means: CohortMeans
    basis: FactorBasis
    apm: Apm
    index: CohortIndex
    component: Tuple[int, ...]
    covered_outcomes: Tuple[int, ...]
    excluded_cohorts: Tuple[int, ...] = ()
    projections: dict = field(default_factory=dict, repr=False)


def cohort_observed_mean(
    panel: Panel,
    index: CohortIndex,
    cohort: int,
    weights: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Per-outcome mean over cohort members, zero for unobserved outcomes.

    With ``weights`` the mean is weighted by member weights renormalized
    within the cohort.
    """
    c = index.cohorts[cohort]
    if c.size == 0:
        raise EmptyCohort(f"cohort {cohort} has no members")
    t = list(c.t_set)
    block = panel.values[np.ix_(c.members, t)]
    out = np.zeros(index.n_outcomes)
    if weights is None:
        out[t] = block.mean(axis=0)
        return out
    w = np.asarray(weights, dtype=float)[c.members]
    if np.all(w == w[0]) and w[0] > 0:
        out[t] = block.mean(axis=0)
        return out
    total = w.sum()
    if not total > 0:
        raise ZeroCohortWeight(f"cohort {cohort} has zero total weight")
    out[t] = (w / total) @ block
    return out


def _restricted_gram(g: np.ndarray, t_set: Sequence[int]) -> np.ndarray:
    rows = g[list(t_set)]
    r = g.shape[1]
    sv = np.linalg.svd(rows, compute_uv=False) if rows.size else np.zeros(0)
    if len(sv) < r or sv[0] == 0 or sv[r - 1] <= RANK_TOL * max(sv[0], 1.0):
        raise RankDeficientRestriction(
            f"basis restricted to outcomes {tuple(t_set)} has rank below {r}"
        )
    return rows.T @ rows


def bridge_extrapolate(basis: BasisLike, t_set: Sequence[int], observed_mean: np.ndarray) -> np.ndarray:
    """
    Extrapolate a cohort's observed means to every outcome.

    Solves for the loading mean that best reproduces the observed means
    from the basis rows of the observed outcomes and maps it through the
    full basis. The result does not depend on which basis of the factor
    space is supplied.

    Raises
    ------
    RankDeficientRestriction
        If the observed rows of the basis do not have full column rank.
    """
    g = _basis_array(basis)
    t = list(t_set)
    gram = _restricted_gram(g, t)
    m = np.asarray(observed_mean, dtype=float)
    coef = np.linalg.solve(gram, g[t].T @ m[t])
    return g @ coef


def bridge_matrix(basis: BasisLike, t_set: Sequence[int]) -> np.ndarray:
    """The T x T linear map from a full-length observed-mean vector to the extrapolated means."""
    g = _basis_array(basis)
    t = list(t_set)
    gram = _restricted_gram(g, t)
    sel = np.zeros((g.shape[0], g.shape[0]))
    sel[t, t] = 1.0
    return g @ np.linalg.solve(gram, g.T @ sel)


def r_matrix(basis: BasisLike, t_set: Sequence[int]) -> np.ndarray:
    """
    ``I + G (G' E G)^{-1} G' (I - E)`` for the cohort's selection mask ``E``.

    Raises
    ------
    SingularGram
        If ``G' E G`` is numerically singular.
    """
    g = _basis_array(basis)
    d = g.shape[0]
    sel = np.zeros(d)
    sel[list(t_set)] = 1.0
    gram = g.T @ (g * sel[:, None])
    if np.linalg.cond(gram) > 1.0 / RANK_TOL:
        raise SingularGram(f"Gram matrix of outcomes {tuple(t_set)} is singular")
    return np.eye(d) + g @ np.linalg.solve(gram, g.T * (1.0 - sel)[None, :])


def cohort_probabilities(index: CohortIndex, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Share of retained units (or retained weight) in each cohort."""
    if weights is None:
        sizes = index.sizes.astype(float)
        return sizes / sizes.sum()
    w = np.asarray(weights, dtype=float)
    mass = np.array([w[c.members].sum() for c in index.cohorts])
    return mass / mass.sum()


def choose_component(
    index: CohortIndex,
    r: int,
    target_cohort: Optional[int] = None,
) -> Tuple[List[int], List[int]]:
    """
    Pick the overlap-graph component to estimate.

    Returns the component's cohorts and the cohorts left out. Cohorts
    observing fewer than ``r`` outcomes are never eligible.
    """
    eligible = [k for k, c in enumerate(index.cohorts) if len(c.t_set) >= r]
    if target_cohort is not None and target_cohort not in eligible:
        raise UnidentifiedTarget(
            f"cohort {target_cohort} observes fewer than r={r} outcomes"
        )
    if not eligible:
        raise UnidentifiedTarget(f"no cohort observes at least r={r} outcomes")
    graph = build_overlap_graph(index, r)
    adj = graph.adjacency[np.ix_(eligible, eligible)]
    sizes = index.sizes
    comps = [[eligible[k] for k in comp] for comp in components_from_adjacency(adj)]
    if target_cohort is not None:
        comp = next(cm for cm in comps if target_cohort in cm)
    else:
        # largest by unit count, ties broken by smallest member
        comp = max(comps, key=lambda cm: (sizes[cm].sum(), -cm[0]))
    excluded = [k for k in range(index.n_cohorts) if k not in comp]
    return comp, excluded


def estimate_all(
    panel: Panel,
    r: int,
    config: Optional[EstimatorConfig] = None,
    weights: Optional[np.ndarray] = None,
    index: Optional[CohortIndex] = None,
) -> Estimate:
    """
    Estimate every cohort outcome mean in one overlap-graph component.

    Steps: group units into cohorts, estimate each cohort's factor space,
    aggregate the projectors into the APM, take its ``r``-dimensional null
    space, and extrapolate each cohort's observed means through it.

    Parameters
    ----------
    panel : Panel
        The data.
    r : int
        Number of factors.
    config : EstimatorConfig, optional
        Estimator choices.
    weights : np.ndarray, optional
        Length-N unit weights for the weighted (bootstrap) version.
    index : CohortIndex, optional
        Precomputed cohort grouping of ``panel``.

    Raises
    ------
    UnidentifiedTarget
        If the target cohort cannot be extrapolated.
    """
    config = config or EstimatorConfig()
    if index is None:
        index = cohortize(panel, config.min_cohort_size)
    d = index.n_outcomes
    short = [k for k, c in enumerate(index.cohorts) if len(c.t_set) < r]
    if short:
        warnings.warn(
            f"cohorts {short} observe fewer than r={r} outcomes and are skipped",
            IdentificationWarning,
            stacklevel=2,
        )
    comp, excluded = choose_component(index, r, config.target_cohort)
    if excluded:
        warnings.warn(
            f"overlap graph is disconnected; cohorts {excluded} are outside the estimated component",
            IdentificationWarning,
            stacklevel=2,
        )
    covered = sorted({t for k in comp for t in index.cohorts[k].t_set})
    if len(covered) <= r:
        raise UnidentifiedTarget(f"component covers only {len(covered)} outcomes, need more than r={r}")

    projections = {}
    terms = []
    for k in comp:
        moment = second_moment(panel, index, k, weights)
        proj = cohort_projection(moment, r, config.factor_method)
        projections[k] = proj
        mask = index.indicator(k).astype(float)
        terms.append((proj[np.ix_(covered, covered)], mask[covered]))
    apm_sub = build_apm(terms, comp)
    basis_sub = null_basis(apm_sub, r, config.gap_floor, check_null=False)

    # embed the component's solution back into all T outcomes
    gamma = np.zeros((d, r))
    gamma[covered] = basis_sub.gamma_tilde
    basis = FactorBasis(gamma, basis_sub.eigengap, basis_sub.null_residual, basis_sub.weak)
    full = np.zeros((d, d))
    full[np.ix_(covered, covered)] = apm_sub.matrix
    apm = Apm(full, apm_sub.spectrum, apm_sub.eigenvectors, apm_sub.contributing_cohorts)

    mu = np.full((index.n_cohorts, d), np.nan)
    observed = np.array([index.indicator(k) for k in range(index.n_cohorts)]).reshape(index.n_cohorts, d)
    for k in comp:
        c = index.cohorts[k]
        mean = cohort_observed_mean(panel, index, k, weights)
        try:
            row = bridge_extrapolate(gamma, c.t_set, mean)
        except RankDeficientRestriction as exc:
            if k == config.target_cohort:
                raise UnidentifiedTarget(str(exc)) from exc
            warnings.warn(f"cohort {k}: {exc}", IdentificationWarning, stacklevel=2)
            continue
        row[[t for t in range(d) if t not in covered]] = np.nan
        mu[k] = row
    means = CohortMeans(mu, observed, cohort_probabilities(index, weights))
    return Estimate(
        means,
        basis,
        apm,
        index,
        tuple(comp),
        tuple(covered),
        tuple(excluded),
        projections,
    )
