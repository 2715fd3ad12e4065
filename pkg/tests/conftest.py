import warnings

import numpy as np
import pytest

from apmpanel.panel import Panel


def bfs_connected(adjacency):
    """Plain breadth-first connectivity check, independent of the package."""
    n = len(adjacency)
    if n == 0:
        return True
    seen = {0}
    frontier = [0]
    while frontier:
        nxt = []
        for a in frontier:
            for b in range(n):
                if adjacency[a][b] and b not in seen:
                    seen.add(b)
                    nxt.append(b)
        frontier = nxt
    return len(seen) == n


def count_graph(t_sets, r):
    n = len(t_sets)
    return [[a != b and len(set(t_sets[a]) & set(t_sets[b])) >= r for b in range(n)] for a in range(n)]


def random_pattern(rng, r, max_T=12, max_C=6, connected=True, tries=1000):
    """Random observed sets with every outcome covered and the chosen connectivity."""
    for _ in range(tries):
        T = int(rng.integers(r + 2, max_T + 1))
        C = int(rng.integers(2, max_C + 1))
        sets = []
        for _ in range(C):
            size = int(rng.integers(r, T + 1))
            sets.append(tuple(sorted(rng.choice(T, size=size, replace=False).tolist())))
        if len(set(sets)) < C:
            continue
        if set(range(T)) - {t for s in sets for t in s}:
            continue
        if bfs_connected(count_graph(sets, r)) == connected:
            return T, tuple(sorted(sets))
    raise RuntimeError("no pattern found")


def noiseless_instance(rng, T, r, t_sets, n_per=None):
    """
    Panel with y_i = gamma lambda_i exactly, plus the sample-level cohort means.

    Cohorts are laid out in sorted order, matching the package's cohort order.
    Returns (panel, gamma, mu) where mu[c] = gamma @ mean loading of cohort c.
    """
    t_sets = sorted(tuple(sorted(s)) for s in t_sets)
    gamma = rng.normal(size=(T, r))
    rows, mus = [], []
    for s in t_sets:
        n = n_per or (r + 3)
        lam = rng.normal(size=(n, r)) + rng.normal(size=r)
        block = np.full((n, T), np.nan)
        full = lam @ gamma.T
        block[:, list(s)] = full[:, list(s)]
        rows.append(block)
        mus.append(gamma @ lam.mean(axis=0))
    panel = Panel.from_dense(np.vstack(rows))
    return panel, gamma, np.array(mus)


def proj(m):
    """Projector via the normal-equations formula, used as an oracle."""
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    return m @ np.linalg.pinv(m.T @ m) @ m.T


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield
