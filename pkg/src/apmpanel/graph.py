"""Observed-outcome overlap graph and connectivity diagnostics."""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc
from scipy.sparse.csgraph import shortest_path

from .errors import BadRank
from .panel import CohortIndex


@dataclass(frozen=True)
class OverlapGraph:
    """
    Cohorts as nodes, with an edge where two cohorts share enough outcomes.

    Attributes
    ----------
    r : int
        Factor rank the edge rule was evaluated for.
    adjacency : np.ndarray
        Symmetric boolean C x C matrix with a zero diagonal.
    overlap_counts : np.ndarray
        Integer C x C matrix of shared-outcome counts, zero diagonal.
    rank_tol : float or None
        Relative singular value threshold when a basis was used.
    """

    r: int
    adjacency: np.ndarray
    overlap_counts: np.ndarray
    rank_tol: Optional[float] = None

    @property
    def n_cohorts(self) -> int:
        return self.adjacency.shape[0]

    def edges(self) -> List[Tuple[int, int, int]]:
        """Edge list ``(c1, c2, overlap)`` with ``c1 < c2``."""
        i, j = np.nonzero(np.triu(self.adjacency, k=1))
        return [(int(a), int(b), int(self.overlap_counts[a, b])) for a, b in zip(i, j)]

    def neighbors(self, cohort: int) -> List[int]:
        return [int(k) for k in np.flatnonzero(self.adjacency[cohort])]


def overlap_counts(index: CohortIndex) -> np.ndarray:
    """Number of outcomes observed by both cohorts, for every pair."""
    ind = np.array([index.indicator(c) for c in range(index.n_cohorts)], dtype=int).reshape(
        index.n_cohorts, index.n_outcomes
    )
    counts = ind @ ind.T
    np.fill_diagonal(counts, 0)
    return counts


def build_overlap_graph(
    index: CohortIndex,
    r: int,
    factor_basis: Optional[np.ndarray] = None,
    rank_tol: float = 1e-8,
) -> OverlapGraph:
    """
    Build the overlap graph for rank ``r``.

    Without a basis, two distinct cohorts are linked when they share at
    least ``r`` outcomes. With a T x r basis, they are linked when the
    basis rows of the shared outcomes have numerical rank ``r``: the
    ``r``-th singular value exceeds ``rank_tol`` times the largest.

    Raises
    ------
    BadRank
        If ``r < 1`` or ``r >= T``.
    """
    if r < 1 or r >= index.n_outcomes:
        raise BadRank(f"rank {r} must satisfy 1 <= r < T = {index.n_outcomes}")
    counts = overlap_counts(index)
    adjacency = counts >= r
    if factor_basis is not None:
        basis = np.asarray(factor_basis, dtype=float)
        if basis.ndim == 1:
            basis = basis[:, None]
        if basis.shape[0] != index.n_outcomes:
            raise ValueError(f"basis has {basis.shape[0]} rows, expected {index.n_outcomes}")
        for a, b in zip(*np.nonzero(np.triu(adjacency, k=1))):
            shared = sorted(set(index.cohorts[a].t_set) & set(index.cohorts[b].t_set))
            sv = np.linalg.svd(basis[shared], compute_uv=False)
            ok = len(sv) >= r and sv[0] > 0 and sv[r - 1] > rank_tol * sv[0]
            adjacency[a, b] = adjacency[b, a] = ok
    np.fill_diagonal(adjacency, False)
    return OverlapGraph(r, adjacency, counts, rank_tol if factor_basis is not None else None)


def components_from_adjacency(adjacency: np.ndarray) -> List[List[int]]:
    """Connected components of a boolean adjacency matrix, ordered by smallest member."""
    n = adjacency.shape[0]
    if n == 0:
        return []
    _, labels = _cc(coo_matrix(adjacency.astype(np.int8)), directed=False)
    groups = {}
    for node, lab in enumerate(labels):
        groups.setdefault(lab, []).append(node)
    # label each component by its smallest member
    return sorted(groups.values(), key=lambda g: g[0])


def connected_components(g: OverlapGraph) -> List[List[int]]:
    """Components as sorted member lists, ordered by smallest member."""
    return components_from_adjacency(g.adjacency)


def component_labels(g: OverlapGraph) -> np.ndarray:
    """Component label of each cohort, equal to the smallest member of its component."""
    labels = np.empty(g.n_cohorts, dtype=int)
    for comp in connected_components(g):
        labels[comp] = comp[0]
    return labels


def is_connected(g: OverlapGraph) -> bool:
    return len(connected_components(g)) <= 1


def hop_distances(g: OverlapGraph, start: int) -> np.ndarray:
    """Edge distance from ``start`` to every cohort (inf if unreachable)."""
    return shortest_path(coo_matrix(g.adjacency.astype(np.int8)).tocsr(), unweighted=True, indices=start)


def reach_profile(g: OverlapGraph, index: CohortIndex, start: int) -> List[Tuple[int, ...]]:
    """
    Outcomes observed within each breadth-first depth of ``start``.

    Entry ``d`` is the sorted set of outcomes observed by some cohort at
    most ``d`` edges away. The list stops at the deepest reachable level.
    """
    if not 0 <= start < g.n_cohorts:
        raise IndexError(f"start cohort {start} out of range")
    dist = hop_distances(g, start)
    depth = int(dist[np.isfinite(dist)].max())
    profile = []
    for d in range(depth + 1):
        covered = set()
        for c in np.flatnonzero(dist <= d):
            covered.update(index.cohorts[c].t_set)
        profile.append(tuple(sorted(covered)))
    return profile


def equivalence_graphs(index: CohortIndex) -> Tuple[bool, bool]:
    """
    Connectivity of the two auxiliary graphs used for rank one.

    Returns
    -------
    bipartite_connected : bool
        Graph with a node per retained unit and per outcome and an edge
        per observed cell.
    check_connected : bool
        Graph on outcomes with an edge between two outcomes when some
        cohort observes both.
    """
    n_out = index.n_outcomes
    units = [m for c in index.cohorts for m in c.members]
    row_of = {u: k for k, u in enumerate(units)}
    n_units = len(units)
    rows, cols = [], []
    for c in index.cohorts:
        for u in c.members:
            for t in c.t_set:
                rows.append(row_of[u])
                cols.append(n_units + t)
    size = n_units + n_out
    bip = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(size, size))
    n_bip, _ = _cc(bip, directed=False)

    check = np.zeros((n_out, n_out), dtype=bool)
    for c in index.cohorts:
        t = list(c.t_set)
        check[np.ix_(t, t)] = True
    np.fill_diagonal(check, False)
    return n_bip == 1, len(components_from_adjacency(check)) == 1
