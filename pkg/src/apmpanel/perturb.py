"""First-order expansion of eigenspace projectors and its error bound."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import OutsideNeighborhood

CONVENTIONS = ("validated", "printed")


@dataclass(frozen=True)
class EigenWindow:
    """
    A block of ``r`` consecutive eigenpairs after skipping the ``s`` smallest.

    Attributes
    ----------
    s : int
        Number of eigenvalues below the window.
    r : int
        Window width.
    eigenvalues : np.ndarray
        All eigenvalues in ascending order.
    eigenvectors : np.ndarray
        Matching orthonormal eigenvectors as columns.
    """

    s: int
    r: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        d = len(self.eigenvalues)
        if not (self.r >= 1 and self.s >= 0 and self.s + self.r <= d):
            raise ValueError(f"invalid window s={self.s}, r={self.r} for dimension {d}")

    @classmethod
    def from_matrix(cls, m: np.ndarray, s: int, r: int) -> "EigenWindow":
        m = np.asarray(m, dtype=float)
        evals, evecs = np.linalg.eigh(0.5 * (m + m.T))
        return cls(s, r, evals, evecs)

    @property
    def inside(self) -> np.ndarray:
        return np.arange(self.s, self.s + self.r)

    @property
    def outside(self) -> np.ndarray:
        d = len(self.eigenvalues)
        return np.setdiff1d(np.arange(d), self.inside)

    @property
    def projection(self) -> np.ndarray:
        u = self.eigenvectors[:, self.inside]
        return u @ u.T

    @property
    def gap(self) -> float:
        return window_gap(self.eigenvalues, self.s, self.r)


def window_gap(eigenvalues: np.ndarray, s: int, r: int) -> float:
    """
    A quarter of the smaller spectral gap at the two window edges.

    Missing neighbours below the first or above the last eigenvalue count
    as infinitely far away.
    """
    lam = np.concatenate([[-np.inf], np.asarray(eigenvalues, dtype=float), [np.inf]])
    lower = lam[s + 1] - lam[s]
    upper = lam[s + r + 1] - lam[s + r]
    return 0.25 * float(min(lower, upper))


def _coefficients(window: EigenWindow, convention: str) -> np.ndarray:
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    lam = window.eigenvalues
    coef = 1.0 / (lam[window.inside][:, None] - lam[window.outside][None, :])
    return coef if convention == "validated" else -coef


def first_order_term(window: EigenWindow, delta_m: np.ndarray, convention: str = "validated") -> np.ndarray:
    """
    Linear part of the change in the window projector under ``delta_m``.

    Sums ``(P_j dM P_k + P_k dM P_j) / (lam_j - lam_k)`` over eigenpairs
    ``j`` inside and ``k`` outside the window. ``convention="printed"``
    flips the coefficient sign, for auditing the alternative form.
    """
    u = window.eigenvectors
    coef = _coefficients(window, convention)
    rotated = u.T @ np.asarray(delta_m, dtype=float) @ u
    inner = np.zeros_like(rotated)
    i, o = window.inside, window.outside
    inner[np.ix_(i, o)] = coef * rotated[np.ix_(i, o)]
    inner[np.ix_(o, i)] = inner[np.ix_(i, o)].T
    return u @ inner @ u.T


def first_order_operator(window: EigenWindow, convention: str = "validated") -> np.ndarray:
    """
    Matrix of :func:`first_order_term` acting on column-stacked ``delta_m``.

    Returns the d^2 x d^2 matrix ``K`` with
    ``vec(first_order_term(window, D)) = K vec(D)`` for symmetric ``D``.
    """
    u = window.eigenvectors
    d = u.shape[0]
    coef = _coefficients(window, convention)
    out = np.zeros((d * d, d * d))
    for a, j in enumerate(window.inside):
        pj = np.outer(u[:, j], u[:, j])
        for b, k in enumerate(window.outside):
            pk = np.outer(u[:, k], u[:, k])
            out += coef[a, b] * (np.kron(pj, pk) + np.kron(pk, pj))
    return out


def vec(m: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(m).reshape(-1, order="F")


def unvec(v: np.ndarray, d: int) -> np.ndarray:
    return np.asarray(v).reshape((d, d), order="F")


def op_norm(m: np.ndarray) -> float:
    """Spectral norm; uses a symmetric eigensolve when ``m`` is symmetric."""
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return 0.0
    if m.shape[0] == m.shape[1] and np.allclose(m, m.T, rtol=0, atol=1e-14 * max(1.0, np.abs(m).max())):
        return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (m + m.T)))))
    return float(np.linalg.norm(m, 2))


class BoundCheck(NamedTuple):
    approx_error: float
    bound: float
    holds: bool


def check_bound(
    m: np.ndarray,
    m_hat: np.ndarray,
    s: int,
    r: int,
    convention: str = "validated",
) -> BoundCheck:
    """
    Compare the exact projector change with its first-order term.

    Returns the spectral norm of the remainder, the bound
    ``2 / (pi * gap**2) * ||m_hat - m||**2`` and whether it holds.

    Raises
    ------
    OutsideNeighborhood
        If ``||m_hat - m||`` exceeds the window gap of ``m``.
    """
    m = np.asarray(m, dtype=float)
    m_hat = np.asarray(m_hat, dtype=float)
    window = EigenWindow.from_matrix(m, s, r)
    delta = m_hat - m
    size = op_norm(delta)
    gap = window.gap
    if size > gap:
        raise OutsideNeighborhood(f"perturbation norm {size:.3e} exceeds window gap {gap:.3e}")
    if size == 0:
        return BoundCheck(0.0, 0.0, True)
    moved = EigenWindow.from_matrix(m_hat, s, r)
    remainder = moved.projection - window.projection - first_order_term(window, delta, convention)
    err = op_norm(remainder)
    bound = 2.0 / (np.pi * gap**2) * size**2
    return BoundCheck(err, bound, bool(err <= bound))
