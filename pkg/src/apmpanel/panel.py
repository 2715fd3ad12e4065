"""Panel data model, CSV ingestion, cohort grouping and cell masking."""

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import (
    AllCohortsDropped,
    DegenerateWarning,
    DuplicateCell,
    EmptyCohort,
    EmptyInput,
    NotObserved,
    ParseError,
)

HEADER = ("unit_id", "outcome_id", "value")


@dataclass(frozen=True)
class Panel:
    """
    Unit by outcome matrix of real values with explicit missingness.

    Parameters
    ----------
    values : np.ndarray
        N x T array. Missing cells hold NaN, which is never a legal value.
    unit_ids : tuple of str
        Row labels.
    outcome_ids : tuple of str
        Column labels in canonical order.
    """

    values: np.ndarray
    unit_ids: Tuple[str, ...]
    outcome_ids: Tuple[str, ...]
    observed: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("values must be a 2-d array")
        if len(self.unit_ids) != values.shape[0]:
            raise ValueError("unit_ids length does not match the number of rows")
        if len(self.outcome_ids) != values.shape[1]:
            raise ValueError("outcome_ids length does not match the number of columns")
        if np.isinf(values).any():
            raise ValueError("observed values must be finite")
        values.setflags(write=False)
        observed = ~np.isnan(values)
        observed.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "unit_ids", tuple(str(u) for u in self.unit_ids))
        object.__setattr__(self, "outcome_ids", tuple(str(o) for o in self.outcome_ids))
        object.__setattr__(self, "observed", observed)

    @classmethod
    def from_dense(
        cls,
        values: np.ndarray,
        unit_ids: Optional[Sequence[str]] = None,
        outcome_ids: Optional[Sequence[str]] = None,
    ) -> "Panel":
        """Build a panel from an array with NaN marking missing cells.

        Default labels are zero padded so that their lexicographic order
        matches the column order.
        """
        values = np.asarray(values, dtype=float)
        n, t = values.shape
        if unit_ids is None:
            width = max(len(str(max(n - 1, 0))), 1)
            unit_ids = [f"u{i:0{width}d}" for i in range(n)]
        if outcome_ids is None:
            width = max(len(str(max(t - 1, 0))), 1)
            outcome_ids = [f"t{j:0{width}d}" for j in range(t)]
        return cls(values, tuple(unit_ids), tuple(outcome_ids))

    @property
    def n_units(self) -> int:
        return self.values.shape[0]

    @property
    def n_outcomes(self) -> int:
        return self.values.shape[1]

    def take_rows(self, rows: np.ndarray, relabel: bool = False) -> "Panel":
        """Return a panel made of the given rows (repeats allowed)."""
        rows = np.asarray(rows, dtype=int)
        if relabel:
            unit_ids = tuple(f"{self.unit_ids[i]}#{k}" for k, i in enumerate(rows))
        else:
            unit_ids = tuple(self.unit_ids[i] for i in rows)
        return Panel(self.values[rows], unit_ids, self.outcome_ids)

    def outcome_index(self, key: str) -> int:
        """Resolve an outcome label, falling back to an integer position."""
        key = str(key)
        if key in self.outcome_ids:
            return self.outcome_ids.index(key)
        try:
            pos = int(key)
        except ValueError:
            raise KeyError(f"unknown outcome {key!r}") from None
        if not 0 <= pos < self.n_outcomes:
            raise KeyError(f"outcome position {pos} out of range")
        return pos


def load_long_csv(path) -> Panel:
    """
    Read a long-format panel file.

    The file has header ``unit_id,outcome_id,value`` and one row per
    observed cell. Missing cells are simply absent. Outcome columns are
    ordered lexicographically by label and units by first appearance.

    Raises
    ------
    ParseError
        Malformed header, wrong field count or non-finite value.
    DuplicateCell
        A (unit, outcome) pair occurs twice.
    EmptyInput
        No data rows.
    """
    cells = {}
    unit_order = {}
    outcomes = set()
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise EmptyInput(f"{path}: file is empty")
        if tuple(h.strip() for h in header) != HEADER:
            raise ParseError(f"{path}: expected header {','.join(HEADER)}, got {','.join(header)}")
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise ParseError(f"{path}:{line_no}: expected 3 fields, got {len(row)}")
            unit, outcome, raw = (x.strip() for x in row)
            if not unit or not outcome:
                raise ParseError(f"{path}:{line_no}: empty identifier")
            try:
                value = float(raw)
            except ValueError:
                raise ParseError(f"{path}:{line_no}: bad number {raw!r}") from None
            if not math.isfinite(value):
                raise ParseError(f"{path}:{line_no}: non-finite value {raw!r}")
            if (unit, outcome) in cells:
                raise DuplicateCell(f"{path}:{line_no}: duplicate cell ({unit}, {outcome})")
            cells[(unit, outcome)] = value
            unit_order.setdefault(unit, len(unit_order))
            outcomes.add(outcome)
    if not cells:
        raise EmptyInput(f"{path}: no data rows")
    outcome_ids = sorted(outcomes)
    col = {o: j for j, o in enumerate(outcome_ids)}
    values = np.full((len(unit_order), len(outcome_ids)), np.nan)
    for (unit, outcome), value in cells.items():
        values[unit_order[unit], col[outcome]] = value
    return Panel(values, tuple(unit_order), tuple(outcome_ids))


def write_long_csv(panel: Panel, path) -> None:
    """Write a panel in the long format read by :func:`load_long_csv`."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(HEADER)
        rows, cols = np.nonzero(panel.observed)
        for i, j in zip(rows, cols):
            writer.writerow((panel.unit_ids[i], panel.outcome_ids[j], repr(float(panel.values[i, j]))))


@dataclass(frozen=True)
class Cohort:
    """Units sharing one observed-outcome set."""

    t_set: Tuple[int, ...]
    members: np.ndarray

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def degenerate(self) -> bool:
        # a cohort with nothing observed carries no information
        return len(self.t_set) == 0


@dataclass(frozen=True)
class CohortIndex:
    """
    Partition of panel rows into cohorts.

    Attributes
    ----------
    cohorts : tuple of Cohort
        Sorted lexicographically by observed set.
    n_units, n_outcomes : int
        Shape of the source panel.
    dropped_units : np.ndarray
        Rows removed by the size filter.
    dropped_sets : tuple
        Observed sets of the removed cohorts.
    """

    cohorts: Tuple[Cohort, ...]
    n_units: int
    n_outcomes: int
    dropped_units: np.ndarray
    dropped_sets: Tuple[Tuple[int, ...], ...] = ()

    @property
    def n_cohorts(self) -> int:
        return len(self.cohorts)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([c.size for c in self.cohorts], dtype=int)

    @property
    def t_sets(self) -> Tuple[Tuple[int, ...], ...]:
        return tuple(c.t_set for c in self.cohorts)

    def indicator(self, cohort: int) -> np.ndarray:
        """Boolean length-T vector of the cohort's observed outcomes."""
        ind = np.zeros(self.n_outcomes, dtype=bool)
        ind[list(self.cohorts[cohort].t_set)] = True
        return ind

    def mask(self, cohort: int) -> np.ndarray:
        """Diagonal 0/1 selection matrix of the cohort's observed outcomes."""
        return np.diag(self.indicator(cohort).astype(float))

    def labels(self) -> np.ndarray:
        """Cohort position of every panel row, -1 for dropped rows."""
        out = np.full(self.n_units, -1, dtype=int)
        for k, c in enumerate(self.cohorts):
            out[c.members] = k
        return out

    def find(self, t_set: Sequence[int]) -> int:
        """Position of the cohort with the given observed set."""
        key = tuple(sorted(int(t) for t in t_set))
        for k, c in enumerate(self.cohorts):
            if c.t_set == key:
                return k
        raise KeyError(f"no cohort observes exactly {key}")


def cohortize(panel: Panel, min_cohort_size: int = 2) -> CohortIndex:
    """
    Group units by their exact observed-outcome set.

    Cohorts with fewer than ``min_cohort_size`` members are dropped and
    reported in the returned index.

    Raises
    ------
    AllCohortsDropped
        If no cohort is large enough.
    """
    if min_cohort_size < 1:
        raise ValueError("min_cohort_size must be at least 1")
    patterns, inverse = np.unique(panel.observed, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    groups = []
    for k, pattern in enumerate(patterns):
        t_set = tuple(int(t) for t in np.flatnonzero(pattern))
        members = np.flatnonzero(inverse == k)
        groups.append((t_set, members))
    groups.sort(key=lambda g: g[0])
    kept, dropped_units, dropped_sets = [], [], []
    for t_set, members in groups:
        if len(members) >= min_cohort_size:
            members.setflags(write=False)
            kept.append(Cohort(t_set, members))
        else:
            dropped_units.append(members)
            dropped_sets.append(t_set)
    if not kept:
        raise AllCohortsDropped(
            f"no cohort has at least {min_cohort_size} members ({len(groups)} cohorts found)"
        )
    dropped = np.sort(np.concatenate(dropped_units)) if dropped_units else np.zeros(0, dtype=int)
    if dropped.size:
        warnings.warn(
            f"dropped {dropped.size} units in {len(dropped_sets)} cohorts smaller than {min_cohort_size}",
            DegenerateWarning,
            stacklevel=2,
        )
    return CohortIndex(tuple(kept), panel.n_units, panel.n_outcomes, dropped, tuple(dropped_sets))


def cohort_block(panel: Panel, index: CohortIndex, cohort: int) -> np.ndarray:
    """Observed values of a cohort as an N_c x |T_c| array."""
    c = index.cohorts[cohort]
    if c.size == 0:
        raise EmptyCohort(f"cohort {cohort} has no members")
    return panel.values[np.ix_(c.members, c.t_set)]


def mask_cell(panel: Panel, index: CohortIndex, cohort: int, outcome: int) -> Tuple[Panel, float]:
    """
    Blank one outcome for every member of a cohort.

    Returns
    -------
    masked : Panel
        Copy of ``panel`` with the cells removed.
    truth : float
        Sample mean of the removed cells.

    Raises
    ------
    NotObserved
        If the cohort does not observe ``outcome``.
    """
    c = index.cohorts[cohort]
    if c.size == 0:
        raise EmptyCohort(f"cohort {cohort} has no members")
    if outcome not in c.t_set:
        raise NotObserved(f"outcome {outcome} is not observed by cohort {cohort} {c.t_set}")
    values = panel.values.copy()
    truth = float(values[c.members, outcome].mean())
    values[c.members, outcome] = np.nan
    if len(c.t_set) == 1:
        warnings.warn(
            f"masking left cohort {cohort} with no observed outcomes", DegenerateWarning, stacklevel=2
        )
    return Panel(values, panel.unit_ids, panel.outcome_ids), truth
