"""Cohort-specific factor space estimators."""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .apm import fix_signs
from .errors import (
    EmptyCohort,
    RankExceedsObserved,
    TooFewOutcomes,
    ZeroCohortWeight,
)
from .panel import CohortIndex, Panel


@dataclass(frozen=True)
class CohortSecondMoment:
    """
    Uncentered second moment of a cohort's observed outcomes.

    Attributes
    ----------
    matrix : np.ndarray
        T x T symmetric matrix, zero outside the observed rows and columns.
    cohort : int
        Cohort position in its index.
    t_set : tuple of int
        Observed outcomes of the cohort.
    effective_n : float
        Member count, or total cohort weight times N when weighted.
    """

    matrix: np.ndarray
    cohort: int
    t_set: Tuple[int, ...]
    effective_n: float


@dataclass(frozen=True)
class CohortFactorEstimate:
    """
    Estimated factor space of one cohort.

    ``basis`` has orthonormal columns supported on the observed rows and
    ``spectrum`` lists the ascending eigenvalues of the second moment.
    """

    basis: np.ndarray
    spectrum: np.ndarray
    method: str

    @property
    def projection(self) -> np.ndarray:
        return self.basis @ self.basis.T


def _uniform(w: np.ndarray) -> bool:
    return bool(np.all(w == w[0]))


def second_moment(
    panel: Panel,
    index: CohortIndex,
    cohort: int,
    weights: Optional[np.ndarray] = None,
) -> CohortSecondMoment:
    """
    Average of ``y y'`` over cohort members, restricted to observed outcomes.

    With ``weights`` (length N, nonnegative, summing to one) the average is
    weighted, with the weights renormalized inside the cohort. Equal
    weights within the cohort give exactly the unweighted result.

    Raises
    ------
    EmptyCohort
        The cohort has no members.
    ZeroCohortWeight
        Every member has zero weight.
    """
    c = index.cohorts[cohort]
    if c.size == 0:
        raise EmptyCohort(f"cohort {cohort} has no members")
    t = list(c.t_set)
    block = panel.values[np.ix_(c.members, t)]
    d = index.n_outcomes
    out = np.zeros((d, d))
    if weights is None:
        sub = block.T @ block / c.size
        eff = float(c.size)
    else:
        w = np.asarray(weights, dtype=float)[c.members]
        total = w.sum()
        if not total > 0:
            raise ZeroCohortWeight(f"cohort {cohort} has zero total weight")
        if _uniform(w):
            sub = block.T @ block / c.size
        else:
            sub = (block * (w / total)[:, None]).T @ block
        eff = float(total * index.n_units)
    sub = 0.5 * (sub + sub.T)
    out[np.ix_(t, t)] = sub
    return CohortSecondMoment(out, cohort, c.t_set, eff)


def _embed(sub_vectors: np.ndarray, rows: Sequence[int], d: int) -> np.ndarray:
    out = np.zeros((d, sub_vectors.shape[1]))
    out[list(rows)] = sub_vectors
    return out


def _full_spectrum(sub_evals: np.ndarray, d: int) -> np.ndarray:
    return np.sort(np.concatenate([np.zeros(d - len(sub_evals)), sub_evals]))


def pc_factors(m: CohortSecondMoment, r: int, observed_count: Optional[int] = None) -> CohortFactorEstimate:
    """
    Principal components estimate: eigenvectors of the ``r`` largest eigenvalues.

    The eigenproblem is solved on the observed sub-block and embedded back,
    so structural zeros never mix into the basis.

    Raises
    ------
    RankExceedsObserved
        If ``r`` exceeds the number of observed outcomes.
    """
    t = list(m.t_set)
    n_obs = len(t) if observed_count is None else observed_count
    if r > n_obs or r > len(t):
        raise RankExceedsObserved(f"r={r} exceeds the {len(t)} observed outcomes of cohort {m.cohort}")
    d = m.matrix.shape[0]
    evals, evecs = np.linalg.eigh(m.matrix[np.ix_(t, t)])
    basis = _embed(fix_signs(evecs[:, ::-1][:, :r]), t, d)
    return CohortFactorEstimate(basis, _full_spectrum(evals, d), "pc")


def holdout_windows(t_set: Sequence[int], r: int) -> list:
    """
    Holdout sets for the split estimator.

    Windows of ``r`` consecutive observed outcomes starting at positions
    ``0..r``, so each step swaps one outcome and no outcome is held out of
    every window.
    """
    t = sorted(t_set)
    return [tuple(t[j:j + r]) for j in range(r + 1)]


def hetero_split_factors(m: CohortSecondMoment, t_set: Sequence[int], r: int) -> CohortFactorEstimate:
    """
    Factor space estimate robust to outcome-specific noise variances.

    For each holdout window the off-diagonal block between the remaining
    outcomes and the window involves no noise variance. Its top ``r``
    left singular vectors span the factor rows of the remaining outcomes.
    These pieces are stitched together as the null space of a small
    aggregated projection matrix over the cohort's outcomes.

    Raises
    ------
    TooFewOutcomes
        If fewer than ``2r + 1`` outcomes are observed.
    """
    t = sorted(int(x) for x in t_set)
    if len(t) < 2 * r + 1:
        raise TooFewOutcomes(f"split estimator needs at least {2 * r + 1} outcomes, cohort observes {len(t)}")
    d = m.matrix.shape[0]
    pos = {x: k for k, x in enumerate(t)}
    stitched = np.zeros((len(t), len(t)))
    for window in holdout_windows(t, r):
        rest = [x for x in t if x not in window]
        block = m.matrix[np.ix_(rest, list(window))]
        left = np.linalg.svd(block, full_matrices=False)[0][:, :r]
        idx = [pos[x] for x in rest]
        stitched[idx, idx] += 1.0
        stitched[np.ix_(idx, idx)] -= left @ left.T
    stitched = 0.5 * (stitched + stitched.T)
    _, evecs = np.linalg.eigh(stitched)
    basis = _embed(fix_signs(evecs[:, :r]), t, d)
    evals = np.linalg.eigvalsh(m.matrix[np.ix_(t, t)])
    return CohortFactorEstimate(basis, _full_spectrum(evals, d), "split")


def cohort_projection(
    m: CohortSecondMoment,
    r: int,
    method: str = "pc",
) -> np.ndarray:
    """Projector onto a cohort's estimated factor space.

    A cohort observing exactly ``r`` outcomes spans all of them, so its
    projector is the selection mask itself.
    """
    t = list(m.t_set)
    if len(t) == r:
        d = m.matrix.shape[0]
        out = np.zeros((d, d))
        out[t, t] = 1.0
        return out
    if method == "pc":
        return pc_factors(m, r).projection
    if method == "split":
        return hetero_split_factors(m, t, r).projection
    raise ValueError(f"unknown factor method {method!r}")


__all__ = [
    "CohortSecondMoment",
    "CohortFactorEstimate",
    "second_moment",
    "pc_factors",
    "hetero_split_factors",
    "holdout_windows",
    "cohort_projection",
]
