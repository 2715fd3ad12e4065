"""
Acceptance suite.

Each test computes its metrics, prints one ``CRITERION k: PASS`` or
``CRITERION k: FAIL`` line with the numbers behind it, then asserts.
Run with ``pytest tests/test_acceptance.py -s`` or as a script.
"""
import time
import warnings

import numpy as np
import pytest

from apmpanel.apm import build_apm
from apmpanel.errors import OutsideNeighborhood
from apmpanel.estimate import EstimatorConfig, estimate_all
from apmpanel.factors import (
    CohortSecondMoment,
    cohort_projection,
    hetero_split_factors,
    pc_factors,
    second_moment,
)
from apmpanel.graph import build_overlap_graph, equivalence_graphs, is_connected
from apmpanel.inference import bootstrap
from apmpanel.panel import cohortize
from apmpanel.perturb import EigenWindow, check_bound, first_order_term, op_norm
from apmpanel.sim import DgpTruth, generate, mask_eval, oracle_influence, staircase_pattern, twfe_population
from apmpanel.targets import CellTarget

from conftest import bfs_connected, count_graph, noiseless_instance, proj, random_pattern


def report(k, ok, detail):
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line, flush=True)
    return line


@pytest.fixture
def show(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            report(k, ok, detail)
    return emit


def identification_instances(seed=2024, count=50):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        r = (1, 2, 3)[i % 3]
        T, sets = random_pattern(rng, r)
        out.append((r, T, sets))
    return out


def staircase_truth(noise=0.5):
    return DgpTruth(
        gamma=np.array([[1.0], [2.0], [4.0], [3.0]]),
        t_sets=staircase_pattern(3, 1),
        cohort_probs=np.array([0.3, 0.3, 0.4]),
        loading_means=np.array([[1.0], [2.0], [0.5]]),
        loading_covs=np.array([[[1.0]], [[0.5]], [[1.5]]]),
        noise=np.full(3, noise),
    )


# --- 1: exact recovery on noiseless connected instances ---

def test_criterion_1_exact_identification(show):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst_proj = worst_mean = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for r, T, sets in identification_instances():
            assert bfs_connected(count_graph(sets, r))
            panel, gamma, mu = noiseless_instance(rng, T, r, sets)
            est = estimate_all(panel, r, EstimatorConfig(min_cohort_size=1))
            worst_proj = max(worst_proj, np.linalg.norm(est.basis.projection - proj(gamma)))
            worst_mean = max(worst_mean, np.max(np.abs(est.means.mu_hat - mu)))
    elapsed = time.perf_counter() - start
    ok = worst_proj <= 1e-10 and worst_mean <= 1e-10 and elapsed < 5
    show(1, ok, f"max projector err {worst_proj:.2e}, max mean err {worst_mean:.2e}, {elapsed:.2f}s")
    assert ok


# --- 2: true factors stay in the null space after disconnecting ---

def disconnect(rng, sets, r, max_steps=500):
    """Drop observed outcomes one at a time until the rank-r overlap graph splits."""
    sets = [list(s) for s in sets]
    for _ in range(max_steps):
        if not bfs_connected(count_graph(sets, r)):
            return tuple(tuple(s) for s in sets)
        c = int(rng.integers(len(sets)))
        # keep every cohort informative: a cohort with exactly r outcomes adds nothing
        if len(sets[c]) <= r + 1:
            continue
        t = sets[c][int(rng.integers(len(sets[c])))]
        others = [tuple(s) for k, s in enumerate(sets) if k != c]
        reduced = tuple(x for x in sets[c] if x != t)
        if not any(t in s for s in others) or reduced in others:
            continue
        sets[c] = list(reduced)
    return None


def noiseless_apm(panel, r):
    index = cohortize(panel, 1)
    terms = [
        (cohort_projection(second_moment(panel, index, k), r), index.indicator(k).astype(float))
        for k in range(index.n_cohorts)
    ]
    return build_apm(terms)


def test_criterion_2_null_containment(show):
    rng = np.random.default_rng(2)
    worst_residual = 0.0
    disconnected = 0
    too_small = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for r, T, sets in identification_instances():
            for pattern in (sets, disconnect(rng, sets, r)):
                if pattern is None:
                    continue
                panel, gamma, _ = noiseless_instance(rng, T, r, pattern)
                apm = noiseless_apm(panel, r)
                worst_residual = max(worst_residual, np.max(np.abs(apm.matrix @ gamma)))
                if pattern is sets:
                    continue
                disconnected += 1
                scale = max(1.0, apm.spectrum[-1])
                null_dim = int(np.sum(apm.spectrum < 1e-8 * scale))
                if null_dim <= r:
                    too_small.append((r, null_dim))
    small_r = sorted({r for r, _ in too_small})
    ok = worst_residual <= 1e-10 and not too_small
    show(2, ok, f"max |A gamma| {worst_residual:.2e}; {len(too_small)}/{disconnected} disconnected cases "
                f"have null dimension <= r (ranks {small_r})")
    assert worst_residual <= 1e-10
    assert not too_small, "pairwise-overlap disconnection does not always lose identification for r >= 2"


# --- 3: root-N rate of an extrapolated mean ---

def test_criterion_3_root_n_consistency(show):
    truth = staircase_truth()
    cell = (0, 3)
    start = time.perf_counter()
    rmse = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for n in (1000, 4000, 16000):
            errs = [
                estimate_all(generate(truth, n, seed=1000 * n + rep), 1).means.mu_hat[cell] - truth.mu_true[cell]
                for rep in range(200)
            ]
            rmse.append(float(np.sqrt(np.mean(np.square(errs)))))
    ratios = [rmse[0] / rmse[1], rmse[1] / rmse[2]]
    elapsed = time.perf_counter() - start
    ok = all(1.5 <= q <= 2.7 for q in ratios) and elapsed < 120
    show(3, ok, f"rmse {[round(x, 4) for x in rmse]}, ratios {[round(q, 3) for q in ratios]}, {elapsed:.1f}s")
    assert ok


# --- 4: joint coverage of simultaneous intervals ---

def test_criterion_4_simultaneous_coverage(show):
    truth = staircase_truth()
    cells = ((0, 2), (0, 3), (1, 0))
    target = CellTarget(cells)
    mu = np.array([truth.mu_true[c] for c in cells])
    start = time.perf_counter()
    hits = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for rep in range(200):
            panel = generate(truth, 2000, seed=50_000 + rep)
            res = bootstrap(panel, 1, target, M=300, alpha=0.05, seed=rep, threads=4)
            hits += bool(np.all((res.intervals[:, 0] <= mu) & (mu <= res.intervals[:, 1])))
    coverage = hits / 200
    elapsed = time.perf_counter() - start
    ok = coverage >= 0.90 and elapsed < 600
    show(4, ok, f"joint coverage {coverage:.3f}, {elapsed:.1f}s")
    assert ok


# --- 5: perturbation bound and quadratic remainder ---

def random_symmetric(rng, d):
    a = rng.normal(size=(d, d))
    return (a + a.T) / 2


def test_criterion_5_perturbation_bound(show):
    rng = np.random.default_rng(5)
    d = 8
    start = time.perf_counter()
    held = 0
    slopes = []
    tried = 1000
    for _ in range(tried):
        m = random_symmetric(rng, d)
        # proper windows only: the full window has a constant projector
        s = int(rng.integers(0, d))
        r = int(rng.integers(1, d - s + (0 if s == 0 else 1)))
        window = EigenWindow.from_matrix(m, s, r)
        direction = random_symmetric(rng, d)
        direction /= op_norm(direction)
        size = rng.uniform(0.01, 0.99) * window.gap
        try:
            held += check_bound(m, m + size * direction, s, r).holds
        except OutsideNeighborhood:
            pass
        eps = window.gap * np.array([1e-1, 1e-2, 1e-3, 1e-4])
        errs = [
            op_norm(EigenWindow.from_matrix(m + e * direction, s, r).projection - window.projection
                    - first_order_term(window, e * direction))
            for e in eps
        ]
        slopes.append(np.polyfit(np.log(eps), np.log(errs), 1)[0])
    elapsed = time.perf_counter() - start
    ok = held == tried and min(slopes) >= 1.8 and elapsed < 30
    show(5, ok, f"bound held {held}/{tried}, min slope {min(slopes):.3f}, median {np.median(slopes):.3f}, "
                f"{elapsed:.1f}s")
    assert ok


# --- 6: eigenvalues of a homoskedastic cohort second moment ---

def test_criterion_6_second_moment_eigenstructure(show):
    gamma = np.array([[1.0], [2.0], [-1.0], [0.5], [3.0], [1.5]])
    noise_var = 0.7
    truth = DgpTruth(
        gamma=gamma,
        t_sets=((0, 1, 2, 3), (2, 3, 4, 5)),
        cohort_probs=np.array([0.5, 0.5]),
        loading_means=np.array([[1.0], [-0.5]]),
        loading_covs=np.ones((2, 1, 1)),
        noise=np.full(2, noise_var),
    )
    start = time.perf_counter()
    panel = generate(truth, 50_000, seed=6)
    index = cohortize(panel, 1)
    observed = (0, 1, 2, 3)
    k = [c.t_set for c in index.cohorts].index(observed)
    sample = np.linalg.eigvalsh(second_moment(panel, index, k).matrix)
    # rank one signal: E[lambda^2] * |gamma_T|^2 on top of the noise variance in every observed direction
    signal = (1.0 + 1.0 ** 2) * float(gamma[list(observed), 0] @ gamma[list(observed), 0])
    expected = np.array([0.0, 0.0] + [noise_var] * 3 + [signal + noise_var])
    nonzero = expected > 0
    rel = np.abs(sample[nonzero] - expected[nonzero]) / expected[nonzero]
    zeros = np.max(np.abs(sample[~nonzero]))
    elapsed = time.perf_counter() - start
    ok = rel.max() <= 0.05 and zeros <= 1e-10 and elapsed < 30
    show(6, ok, f"max relative err {rel.max():.4f} on nonzero eigenvalues, max |zero eigenvalue| {zeros:.1e}, "
                f"{elapsed:.2f}s")
    assert ok


# --- 7: three rank-one connectivity notions agree ---

def oracle_bipartite_connected(t_sets, sizes, T):
    nodes = sum(sizes) + T
    adjacency = [[False] * nodes for _ in range(nodes)]
    unit = 0
    for s, n in zip(t_sets, sizes):
        for _ in range(n):
            for t in s:
                adjacency[unit][sum(sizes) + t] = adjacency[sum(sizes) + t][unit] = True
            unit += 1
    return bfs_connected(adjacency)


def oracle_check_connected(t_sets, T):
    adjacency = [[a != b and any(a in s and b in s for s in t_sets) for b in range(T)] for a in range(T)]
    return bfs_connected(adjacency)


def test_criterion_7_rank_one_graph_equivalence(show):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    disagreements = 0
    connected_count = 0
    for i in range(100):
        T, sets = random_pattern(rng, 1, connected=bool(i % 2))
        panel, _, _ = noiseless_instance(rng, T, 1, sets, n_per=2)
        index = cohortize(panel, 1)
        g1 = is_connected(build_overlap_graph(index, 1))
        bipartite, check = equivalence_graphs(index)
        oracles = (
            bfs_connected(count_graph(sets, 1)),
            oracle_bipartite_connected(sorted(sets), [2] * len(sets), T),
            oracle_check_connected(sets, T),
        )
        verdicts = {g1, bipartite, check, *oracles}
        disagreements += len(verdicts) != 1
        connected_count += g1
    elapsed = time.perf_counter() - start
    ok = disagreements == 0 and elapsed < 5
    show(7, ok, f"{disagreements} disagreements over 100 instances ({connected_count} connected), {elapsed:.2f}s")
    assert ok


# --- 8: split estimator under outcome-wise heteroskedasticity ---

def test_criterion_8_heteroskedastic_split(show):
    gamma = np.array([[1.0], [0.8], [1.2], [0.9], [1.1]])
    noise = np.array([0.5, 5.0, 0.5, 5.0, 1.0])
    truth = DgpTruth(gamma, ((0, 1, 2, 3, 4),), np.ones(1), np.array([[1.0]]), np.array([[[1.0]]]), noise[None, :])
    target = proj(gamma)
    outcomes = tuple(range(5))
    start = time.perf_counter()
    population = CohortSecondMoment(truth.second_moment(0), 0, outcomes, 1.0)
    pop_split = np.linalg.norm(hetero_split_factors(population, outcomes, 1).projection - target)
    pop_pc = np.linalg.norm(pc_factors(population, 1).projection - target)
    panel = generate(truth, 100_000, seed=8)
    index = cohortize(panel, 1)
    sample = second_moment(panel, index, 0)
    n_split = np.linalg.norm(hetero_split_factors(sample, outcomes, 1).projection - target)
    n_pc = np.linalg.norm(pc_factors(sample, 1).projection - target)
    elapsed = time.perf_counter() - start
    spread = noise.max() / noise.min()
    ok = spread >= 10 and pop_split <= 1e-8 and pop_pc >= 0.05 and n_split < n_pc / 2 and elapsed < 60
    show(8, ok, f"noise variance spread {spread:.0f}x; population split {pop_split:.1e}, PC {pop_pc:.3f}; "
                f"N=100000 split {n_split:.4f}, PC {n_pc:.4f}; {elapsed:.2f}s")
    assert ok


# --- 9: APM against two-way fixed effects on a masked cell ---

def population_twfe_prediction(gamma, t_sets, probs, loading_means, cohort, outcome):
    """Weighted least squares of cohort means on cohort and outcome dummies."""
    n_cohorts, T = len(t_sets), gamma.shape[0]
    rows, targets, weights = [], [], []
    for c, s in enumerate(t_sets):
        mean = gamma @ loading_means[c]
        for t in s:
            row = np.zeros(n_cohorts + T)
            row[c] = row[n_cohorts + t] = 1.0
            rows.append(row)
            targets.append(mean[t])
            weights.append(probs[c])
    root = np.sqrt(weights)
    coef = np.linalg.lstsq(np.array(rows) * root[:, None], np.array(targets) * root, rcond=None)[0]
    return coef[cohort] + coef[n_cohorts + outcome]


def test_criterion_9_twfe_comparison(show):
    gamma = np.array([[4.0], [1.0], [2.0], [3.0]])
    t_sets = ((0, 1, 2), (0, 3), (1, 2, 3))
    probs = np.full(3, 1 / 3)
    means = np.array([[1.0], [2.0], [3.0]])
    truth = DgpTruth(gamma, t_sets, probs, means, np.full((3, 1, 1), 0.5), np.full(3, 1.0))
    masked_sets = ((1, 2),) + t_sets[1:]
    oracle = population_twfe_prediction(gamma, masked_sets, probs, means, 0, 0)
    pop_bias = abs(oracle - truth.mu_true[0, 0])
    masked_truth = DgpTruth(gamma, masked_sets, probs, means, np.full((3, 1, 1), 0.5), np.full(3, 1.0))
    assert abs(twfe_population(masked_truth)[0, 0] - oracle) < 1e-10
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        apm, twfe = mask_eval(generate(truth, 5000, seed=1), [(0, 0)], reps=100, seed=1)
    elapsed = time.perf_counter() - start
    ok = (pop_bias >= 0.1 and apm.abs_bias <= 0.3 * twfe.abs_bias and apm.rmse < twfe.rmse
          and twfe.se <= apm.se and elapsed < 300)
    show(9, ok, f"population TWFE bias {pop_bias:.3f}; APM bias {apm.abs_bias:.3f} se {apm.se:.3f} "
                f"rmse {apm.rmse:.3f}; TWFE bias {twfe.abs_bias:.3f} se {twfe.se:.3f} rmse {twfe.rmse:.3f}; "
                f"{elapsed:.1f}s")
    assert ok


# --- 10: influence-function oracle tracks the estimation error ---

def test_criterion_10_asymptotic_linearity(show):
    truth = staircase_truth()
    n, reps = 10_000, 200
    start = time.perf_counter()
    scaled_err, scaled_psi = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for rep in range(reps):
            panel = generate(truth, n, seed=100_000 + rep)
            est = estimate_all(panel, 1)
            psi = oracle_influence(truth, panel, 0, "validated")
            scaled_err.append(np.sqrt(n) * (est.means.mu_hat[0] - truth.mu_true[0]))
            scaled_psi.append(psi.sum(axis=0) / np.sqrt(n))
    scaled_err, scaled_psi = np.array(scaled_err), np.array(scaled_psi)
    corr = [np.corrcoef(scaled_err[:, j], scaled_psi[:, j])[0, 1] for j in range(truth.n_outcomes)]
    elapsed = time.perf_counter() - start
    ok = min(corr) > 0.95 and elapsed < 300
    show(10, ok, f"correlations {[round(float(c), 4) for c in corr]}, {elapsed:.1f}s")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-s", "-q"]))
