"""Aggregated projection matrix and extraction of the common factor basis."""

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import BadRank, DimensionMismatch, IdentificationWarning

PINV_RCOND = 1e-12
GAP_FLOOR_REL = 1e-6


def projector(m: np.ndarray, rcond: float = PINV_RCOND) -> np.ndarray:
    """
    Orthogonal projector onto the column space of ``m``.

    Computed from the singular value decomposition, so rank-deficient
    inputs are handled like ``M (M'M)^+ M'``: singular values below
    ``rcond`` times the largest are treated as zero.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    d = m.shape[0]
    if m.size == 0:
        return np.zeros((d, d))
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((d, d))
    u = u[:, s > rcond * s[0]]
    return u @ u.T


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so that each one's largest-magnitude entry is positive."""
    vectors = np.array(vectors, dtype=float)
    if vectors.size == 0:
        return vectors
    rows = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[rows, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


@dataclass(frozen=True)
class Apm:
    """
    Aggregated projection matrix.

    Attributes
    ----------
    matrix : np.ndarray
        Symmetric T x T sum of ``E_c - P_c`` over contributing cohorts.
    spectrum : np.ndarray
        Ascending eigenvalues of ``matrix``.
    eigenvectors : np.ndarray
        Matching orthonormal eigenvectors as columns.
    contributing_cohorts : tuple of int
        Cohort positions that entered the sum.
    """

    matrix: np.ndarray
    spectrum: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    contributing_cohorts: Tuple[int, ...] = ()

    def eigengap(self, r: int) -> float:
        """The ``(r+1)``-th smallest eigenvalue, or inf when ``r = T``."""
        return float(self.spectrum[r]) if r < len(self.spectrum) else float("inf")


@dataclass(frozen=True)
class FactorBasis:
    """
    Orthonormal T x r basis of the estimated factor space.

    Attributes
    ----------
    gamma_tilde : np.ndarray
        Basis vectors as columns.
    eigengap : float
        Smallest eigenvalue of the source matrix outside the null window.
    null_residual : float
        Largest eigenvalue inside the null window (zero when exact).
    weak : bool
        True when ``eigengap`` fell below the gap floor.
    """

    gamma_tilde: np.ndarray
    eigengap: float = float("nan")
    null_residual: float = 0.0
    weak: bool = False

    @property
    def rank(self) -> int:
        return self.gamma_tilde.shape[1]

    @property
    def projection(self) -> np.ndarray:
        return self.gamma_tilde @ self.gamma_tilde.T


def build_apm(
    terms: Sequence[Tuple[np.ndarray, np.ndarray]],
    cohorts: Optional[Sequence[int]] = None,
) -> Apm:
    """
    Sum ``E_c - P_c`` over cohort terms.

    Parameters
    ----------
    terms : sequence of (projector, mask) pairs
        Each a T x T matrix. Masks may also be given as 0/1 vectors.
    cohorts : sequence of int, optional
        Labels recorded as the contributing cohorts.

    Raises
    ------
    DimensionMismatch
        If the matrices do not all share one square shape.
    """
    terms = list(terms)
    if not terms:
        raise ValueError("at least one cohort term is required")
    d = np.asarray(terms[0][0]).shape[0]
    total = np.zeros((d, d))
    for proj, mask in terms:
        proj = np.asarray(proj, dtype=float)
        mask = np.asarray(mask, dtype=float)
        if mask.ndim == 1:
            mask = np.diag(mask)
        if proj.shape != (d, d) or mask.shape != (d, d):
            raise DimensionMismatch(f"expected {d}x{d} matrices, got {proj.shape} and {mask.shape}")
        total += mask - proj
    total = 0.5 * (total + total.T)
    evals, evecs = np.linalg.eigh(total)
    labels = tuple(range(len(terms))) if cohorts is None else tuple(int(c) for c in cohorts)
    return Apm(total, evals, evecs, labels)


def null_basis(
    apm: Apm,
    r: int,
    gap_floor: Optional[float] = None,
    check_null: bool = True,
) -> FactorBasis:
    """
    Eigenvectors of the ``r`` smallest eigenvalues of the APM.

    Warns with :class:`IdentificationWarning` when the ``(r+1)``-th
    eigenvalue is below ``gap_floor`` (weak identification) and, if
    ``check_null``, when the ``r``-th eigenvalue exceeds it (the null
    space is smaller than ``r``). The default floor is ``1e-6`` times
    the largest eigenvalue.
    """
    d = apm.matrix.shape[0]
    if r < 1 or r >= d:
        raise BadRank(f"rank {r} must satisfy 1 <= r < T = {d}")
    spectrum = apm.spectrum
    if gap_floor is None:
        gap_floor = GAP_FLOOR_REL * max(float(spectrum[-1]), 0.0)
    gap = float(spectrum[r])
    residual = float(spectrum[r - 1])
    weak = gap <= gap_floor
    if weak:
        warnings.warn(
            f"weak identification: eigenvalue {r + 1} of the APM is {gap:.3e} "
            f"(floor {gap_floor:.3e}); the null space is larger than r={r}",
            IdentificationWarning,
            stacklevel=2,
        )
    if check_null and residual > gap_floor:
        warnings.warn(
            f"eigenvalue {r} of the APM is {residual:.3e} above the floor {gap_floor:.3e}; "
            f"the null space may be smaller than r={r}",
            IdentificationWarning,
            stacklevel=2,
        )
    basis = fix_signs(apm.eigenvectors[:, :r])
    return FactorBasis(basis, gap, residual, weak)
