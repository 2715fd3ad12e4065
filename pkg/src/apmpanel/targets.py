"""Target parameters built from estimated cohort means."""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateDenominator, MissingTreatedMean, TargetEvaluationError
from .estimate import CohortMeans

DENOM_TOL = 1e-10


def default_adoption(observed_flag: np.ndarray) -> list:
    """
    Treatment start of each cohort inferred from its observed untreated outcomes.

    A cohort is taken to adopt right after its last observed outcome.
    Cohorts observing the final outcome are treated as never adopting.
    """
    d = observed_flag.shape[1]
    out = []
    for row in observed_flag:
        obs = np.flatnonzero(row)
        last = int(obs.max()) if obs.size else -1
        out.append(last + 1 if last + 1 < d else None)
    return out


def dynamic_effects(
    means: CohortMeans,
    treated_means: np.ndarray,
    b: int,
    p: int,
    adoption: Optional[Sequence[Optional[int]]] = None,
    normalize: bool = False,
) -> np.ndarray:
    """
    Probability-weighted treated minus untreated means by relative time.

    Coordinate ``j`` (0-based) collects cells whose outcome index minus the
    cohort's adoption index equals ``j - b``, so the first ``b`` coordinates
    are pre-treatment placebos. Without ``normalize`` the cohort shares are
    summed as they are; with it each coordinate is divided by the total
    share it used.

    Parameters
    ----------
    means : CohortMeans
        Untreated mean estimates.
    treated_means : np.ndarray
        C x T treated-outcome means, NaN where unavailable.
    b : int
        Number of pre-treatment coordinates.
    p : int
        Total number of coordinates.
    adoption : sequence, optional
        Adoption outcome index per cohort, None for never-treated.
        Defaults to :func:`default_adoption`.

    Raises
    ------
    MissingTreatedMean
        If a selected cell lacks a treated or untreated mean.
    """
    if p < 1 or not 0 <= b < p:
        raise ValueError("need p >= 1 and 0 <= b < p")
    m = np.asarray(treated_means, dtype=float)
    mu = means.mu_hat
    if m.shape != mu.shape:
        raise ValueError(f"treated means have shape {m.shape}, expected {mu.shape}")
    if adoption is None:
        adoption = default_adoption(means.observed_flag)
    probs = means.cohort_probs
    theta = np.zeros(p)
    mass = np.zeros(p)
    d = mu.shape[1]
    for c, start in enumerate(adoption):
        if start is None:
            continue
        for j in range(p):
            t = start + j - b
            if not 0 <= t < d:
                continue
            if np.isnan(m[c, t]) or np.isnan(mu[c, t]):
                raise MissingTreatedMean(f"no mean for cohort {c}, outcome {t}")
            theta[j] += probs[c] * (m[c, t] - mu[c, t])
            mass[j] += probs[c]
    if normalize:
        theta = np.divide(theta, mass, out=np.zeros(p), where=mass > 0)
    return theta


def _population_means(means: CohortMeans, t: int) -> Tuple[float, float]:
    probs = means.cohort_probs
    col = means.mu_hat[:, t]
    obs = means.observed_flag[:, t]
    if np.isnan(col).any():
        raise TargetEvaluationError(f"outcome {t} has cohorts without estimates")
    counterfactual = float(probs @ col)
    weight = float(probs[obs].sum())
    if weight <= 0:
        raise TargetEvaluationError(f"outcome {t} is observed by no cohort")
    observed = float(probs[obs] @ col[obs]) / weight
    return counterfactual, observed


def attribution_shares(means: CohortMeans, t1: int, t2: int) -> Tuple[float, float]:
    """
    Split the gap in observed mean outcomes between two outcomes.

    The column share is the gap in population-wide means; the row share is
    the part due to which cohorts are observed. The two shares sum to one.

    Raises
    ------
    DegenerateDenominator
        If the observed gap is numerically zero.
    """
    if t1 == t2:
        raise ValueError("t1 and t2 must differ")
    full1, obs1 = _population_means(means, t1)
    full2, obs2 = _population_means(means, t2)
    denom = obs1 - obs2
    finite = means.mu_hat[np.isfinite(means.mu_hat)]
    scale = max(float(np.abs(finite).max()) if finite.size else 0.0, 1.0)
    if abs(denom) < DENOM_TOL * scale:
        raise DegenerateDenominator(f"observed gap {denom:.3e} between outcomes {t1} and {t2} is zero")
    theta_col = (full1 - full2) / denom
    theta_row = ((obs1 - full1) - (obs2 - full2)) / denom
    return theta_col, theta_row


def plug_in(
    h: Callable[[np.ndarray, np.ndarray], np.ndarray],
    means: CohortMeans,
    eta: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Evaluate a user function of the mean matrix and nuisance vector.

    Any exception raised by ``h``, and any non-finite output, surfaces as
    :class:`TargetEvaluationError`.
    """
    eta = np.zeros(0) if eta is None else np.asarray(eta, dtype=float)
    try:
        with np.errstate(divide="raise", invalid="raise"):
            out = np.atleast_1d(np.asarray(h(means.mu_hat, eta), dtype=float))
    except TargetEvaluationError:
        raise
    except Exception as exc:
        raise TargetEvaluationError(f"target function failed: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise TargetEvaluationError("target function returned non-finite values")
    return out


@dataclass(frozen=True)
class CellTarget:
    """One or more cohort outcome means."""

    cells: Tuple[Tuple[int, int], ...]

    def names(self, outcome_ids=None) -> list:
        return [f"mu[{c},{_label(t, outcome_ids)}]" for c, t in self.cells]

    def evaluate(self, means: CohortMeans) -> np.ndarray:
        def h(mu, eta):
            return np.array([mu[c, t] for c, t in self.cells])

        return plug_in(h, means)


@dataclass(frozen=True)
class DynamicEffects:
    """Event-study effect path."""

    b: int
    p: int
    treated_means: np.ndarray
    adoption: Optional[Tuple[Optional[int], ...]] = None
    normalize: bool = False

    def names(self, outcome_ids=None) -> list:
        return [f"dynamic[{j - self.b}]" for j in range(self.p)]

    def evaluate(self, means: CohortMeans) -> np.ndarray:
        def h(mu, eta):
            view = CohortMeans(mu, means.observed_flag, means.cohort_probs)
            return dynamic_effects(view, self.treated_means, self.b, self.p, self.adoption, self.normalize)

        try:
            return plug_in(h, means)
        except TargetEvaluationError as exc:
            if isinstance(exc.__cause__, MissingTreatedMean):
                raise exc.__cause__ from None
            raise


@dataclass(frozen=True)
class AttributionShares:
    """Column and row shares of an observed outcome gap."""

    t1: int
    t2: int

    def names(self, outcome_ids=None) -> list:
        a, b = _label(self.t1, outcome_ids), _label(self.t2, outcome_ids)
        return [f"share_col[{a},{b}]", f"share_row[{a},{b}]"]

    def evaluate(self, means: CohortMeans) -> np.ndarray:
        return np.array(attribution_shares(means, self.t1, self.t2))


@dataclass(frozen=True)
class LinearFunctional:
    """Weighted sum of the mean matrix."""

    weights: np.ndarray

    def names(self, outcome_ids=None) -> list:
        return ["linear"]

    def evaluate(self, means: CohortMeans) -> np.ndarray:
        w = np.asarray(self.weights, dtype=float)
        if not np.all(np.isfinite(w)):
            raise ValueError("functional weights must be finite")
        used = w != 0
        return plug_in(lambda mu, eta: np.sum(w[used] * mu[used]), means)


def _label(t: int, outcome_ids) -> str:
    return str(outcome_ids[t]) if outcome_ids is not None else str(t)
