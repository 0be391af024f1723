"""Periodic monotone rearrangement, pseudo-inverses, and pushforwards.

The rearrangement of a staircase of positions Y_k (carrying the convention
Y(k+M) = Y(k) + 1) keeps the multiset of fractional parts and reorders
them monotonically.  Sorting the residues fixes the output only up to an
integer index shift: the windows

    X(j)_k = S_{k+j},   S_{i+M} = S_i + 1,  S_0..S_{M-1} sorted residues,

all qualify, and their one-period sums differ by exactly 1 per unit of j.
The anchor policy picks the phase:

mean-closest   j minimizing |mean(xi_sharp) - mean(xi_hat)|; ties take the
               smaller mean.  Grid-independent (the identity part cancels
               from the difference of means), idempotent, equivariant
               under adding constants, and it pins the period mean to
               within 1/(2M).  The default.
l2-input       j minimizing sum_k (S_{k+j} - Y_k)^2; a diagnostic policy.
zero-phase     j = 0: the window starts at the smallest residue >= 0.

Maps built here carry the exact window (residues + integer lifts), so
re-rearranging is bitwise idempotent and residue multisets are conserved
exactly, not just to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigurationError,
    LagrangianState,
    MonotoneMap,
    PeriodicProfile,
    cell_centers,
    identity_grid,
)
from .kernels import (
    ANCHOR_CODES,
    residues_of,
    sort_window,
    sort_window_presorted,
)

__all__ = [
    "SortedWindow",
    "CellMeasure",
    "sorted_window",
    "sort_periodic",
    "pseudo_inverse",
    "pushforward_histogram",
    "pushforward_flux",
    "residue_multiset_equal",
]


@dataclass(frozen=True)
class SortedWindow:
    """One period of the bi-infinite sorted sequence plus the chosen phase."""

    S: np.ndarray
    phase: int

    def __post_init__(self):
        if np.any(np.diff(self.S) < 0) or self.S[-1] > self.S[0] + 1.0:
            raise ConfigurationError("sorted window must be non-decreasing with span <= 1")


def _positions_of(xhat) -> np.ndarray:
    """Interpret the input as one period of X-values."""
    if isinstance(xhat, MonotoneMap):
        return xhat.window_positions()
    if isinstance(xhat, PeriodicProfile):
        return xhat.values
    return np.asarray(xhat, dtype=float)


def _anchor_code(anchor: str) -> int:
    try:
        return ANCHOR_CODES[anchor]
    except KeyError:
        raise ConfigurationError(f"unknown anchor policy {anchor!r}") from None


def sorted_window(xhat, anchor: str = "mean-closest") -> SortedWindow:
    """Canonical sorted residues of the input plus the anchored phase."""
    Y = _positions_of(xhat)
    _, w, lifts, phase = sort_window(Y, identity_grid(Y.size), _anchor_code(anchor))
    s = np.sort(residues_of(Y))
    return SortedWindow(S=s, phase=phase)


def sort_periodic(xhat, anchor: str = "mean-closest", force_numpy: bool = False) -> MonotoneMap:
    """Monotone rearrangement of a staircase of positions.

    Args:
        xhat: positions, as a PeriodicProfile (values read as X, not xi),
            a plain array, or a MonotoneMap (whose exact window residues
            are then reused bitwise).
        anchor: phase policy, see the module docstring.
        force_numpy: route around the compiled kernel (benchmarks/tests).

    Returns a MonotoneMap carrying the exact window.  The residue multiset
    of the output equals that of the input exactly.
    """
    code = _anchor_code(anchor)
    grid = None
    if isinstance(xhat, MonotoneMap) and xhat.has_exact_window:
        Y = xhat.window_positions()
        grid = identity_grid(Y.size)
        xi, w, lifts, phase = sort_window_presorted(Y, xhat.window_residues(), grid, code)
    else:
        Y = _positions_of(xhat)
        grid = identity_grid(Y.size)
        xi, w, lifts, phase = sort_window(Y, grid, code, force_numpy=force_numpy)
    return MonotoneMap(xi, window_residues=w, window_lifts=lifts, phase=phase)


def pseudo_inverse(X: MonotoneMap, J: int) -> np.ndarray:
    """Right-continuous generalized inverse u of the staircase X.

    Evaluated at the J cell centers x_j = (j+1/2)/J, with the periodic
    extension u(x+1) = u(x)+1.  u(x) = inf{a : X(a) > x} where X is the
    left-labeled staircase; right continuity matches the half-open cells
    of the pushforward histogram.
    """
    if int(J) != J or J < 1:
        raise ConfigurationError("J must be a positive integer")
    J = int(J)
    Xw = X.window_positions()
    M = Xw.size
    xq = cell_centers(J)
    # shift each query into [X_0, X_0 + 1) where the window lives
    n = np.ceil(Xw[0] - xq)
    y = xq + n
    count = np.searchsorted(Xw, y, side="right")
    return count / M - n


def _residues_for_histogram(X) -> np.ndarray:
    if isinstance(X, MonotoneMap):
        return X.window_residues()
    return residues_of(_positions_of(X))


@dataclass(frozen=True)
class CellMeasure:
    """A measure on the J uniform x-cells of the circle.

    Density-type measures (signed=False) must be nonnegative with total
    mass 1; flux-type measures carry signed weights.
    """

    J: int
    mass: np.ndarray
    signed: bool = False

    def __post_init__(self):
        if self.mass.shape != (self.J,):
            raise ConfigurationError("mass vector must have length J")
        if not self.signed:
            if np.any(self.mass < 0):
                raise ConfigurationError("density mass must be nonnegative")
            total = float(np.sum(self.mass))
            if abs(total - 1.0) > 1e-12:
                raise ConfigurationError(f"density mass must sum to 1, got {total!r}")


def _cells_of(residues: np.ndarray, J: int) -> np.ndarray:
    # a residue just below 1 can land on J after scaling; clamp to the
    # last half-open cell
    c = np.floor(residues * J).astype(np.int64)
    return np.minimum(c, J - 1)


def pushforward_histogram(X, J: int) -> CellMeasure:
    """Pushforward of the uniform label measure under X, as cell masses.

    mass[j] = (1/M) #{k : X_k mod 1 in [j/J, (j+1)/J)}.
    """
    r = _residues_for_histogram(X)
    c = _cells_of(r, int(J))
    counts = np.bincount(c, minlength=int(J))
    return CellMeasure(J=int(J), mass=counts / r.size)


def pushforward_flux(state: LagrangianState, lam: float, J: int) -> CellMeasure:
    """Flux measure: parcels deposit weight lam*xi_k + Z_k instead of 1/M."""
    r = _residues_for_histogram(state.X)
    c = _cells_of(r, int(J))
    weights = lam * state.X.xi.values + state.Z.values
    mass = np.bincount(c, weights=weights, minlength=int(J)) / r.size
    return CellMeasure(J=int(J), mass=mass, signed=True)


def residue_multiset_equal(A, B, tol: float = 1e-12) -> bool:
    """Whether two inputs carry the same residues mod 1, as multisets.

    Sorted residue lists are compared elementwise.  MonotoneMap inputs
    contribute their exact window residues.
    """
    ra = np.sort(_residues_for_histogram(A))
    rb = np.sort(_residues_for_histogram(B))
    if ra.size != rb.size:
        return False
    return bool(np.max(np.abs(ra - rb)) <= tol)
