"""Hot step kernels: predictor arithmetic and the sort-to-window pass.

Two implementations of the sorting pass exist: this module's numpy version
and a compiled twin in ``_speedups`` (built from ``_speedups.pyx``).  The
compiled one is used automatically when the extension imported cleanly and
the window is small (scalar std::sort beats numpy's vectorized introsort
below about a thousand parcels and loses past it; see _EXT_CUTOFF and
benchmarks/bench_step.py).  Set SORTFLOW_PURE_PYTHON=1 to force the numpy
path everywhere.

=============================================================================
 Parity rules (numpy vs compiled)
=============================================================================

The two paths are kept bitwise interchangeable:

* identical expression order everywhere a float is produced:
  residue = y - floor(y), xi = (w - grid) + lift, etc.;
* the grid is always built by division k/M, never k * (1/M);
* the extension compiles with plain -O3 (no fast-math); there are no
  multiply-adds in the kernel, so FMA contraction cannot reorder anything;
* residues are clamped (a residue that rounds up to 1.0 becomes 0.0) and
  -0.0 is normalized to +0.0 before sorting, so both sort the same keys;
* both sort values only.  A stable sort would be indistinguishable here:
  equal keys are identical doubles and no provenance is carried.

The single remaining difference is summation order (numpy sums pairwise,
the C loop sums left to right).  That can move the anchor's real-valued
target by an ulp, which changes the selected integer phase only when the
target sits exactly on a half-integer tie; the tie rule itself (strictly
greater than 0.5 rounds up) is shared.

The predictor is three vector operations and stays in numpy for both
paths; fusing it buys nothing measurable.

NaN policy: residues are scanned before sorting (feeding NaN to a
comparison sort is undefined behaviour in the C++ path) and a sentinel
phase comes back; the wrapper here raises NumericalAbortError.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .core import NumericalAbortError

__all__ = [
    "ANCHOR_CODES",
    "HAVE_SPEEDUPS",
    "using_compiled",
    "residues_of",
    "sort_window",
    "predictor_arrays",
    "step_arrays",
]

# anchor policies; "l2-input" always runs in numpy (it is a diagnostic
# policy, never on the hot path)
ANCHOR_CODES = {"mean-closest": 0, "zero-phase": 1, "l2-input": 2}

_PHASE_NAN = np.iinfo(np.int64).min
_PHASE_OVER = _PHASE_NAN + 1

if os.environ.get("SORTFLOW_PURE_PYTHON"):
    _speedups = None
else:
    try:
        from . import _speedups  # type: ignore[attr-defined]
    except ImportError:
        _speedups = None

HAVE_SPEEDUPS = _speedups is not None

# Largest window the compiled sort handles faster than numpy.  numpy's
# introsort is vectorized and overtakes the scalar std::sort once the
# array stops fitting comfortably in L1; measured crossover sits near
# 1024 doubles (ratios: 1.9x for the extension at M=256, parity at 1024,
# 0.35x at 16384).  Within one run M is fixed, so the chosen path is too.
_EXT_CUTOFF = 1024


def using_compiled(m: int | None = None) -> bool:
    """True when step/sort calls route through the compiled extension.

    With ``m`` given, answers for a window of that many parcels; without
    it, reports only whether the extension is available at all.
    """
    if not HAVE_SPEEDUPS:
        return False
    return m is None or m <= _EXT_CUTOFF


def residues_of(Y: np.ndarray) -> np.ndarray:
    """Fractional parts y - floor(y), in [0, 1), with two repairs.

    A tiny negative y can round up to a residue of exactly 1.0: clamp it
    to 0.0.  Adding 0.0 afterwards turns any -0.0 into +0.0 so both sort
    paths see identical keys.  NaN passes through for the caller to scan.
    """
    Y = np.asarray(Y, dtype=float)
    r = Y - np.floor(Y)
    r[r >= 1.0] = 0.0
    return r + 0.0


# window indices j..j+M-1 must fit in int64, and a double cast to a C
# integer is undefined outside that range; a mean drift past 2^62 cells
# only happens when the state has exploded (finite but astronomically
# large), so treat it as a numerical abort rather than an overflow
_PHASE_CAP = float(2**62)
_PHASE_BLOWUP_MSG = "rearrangement phase out of indexable range: state has blown up"


def _mean_phase(d: float) -> int:
    """Nearest integer to d; exact half-ties round down (smaller mean)."""
    if not abs(d) <= _PHASE_CAP:
        raise NumericalAbortError(_PHASE_BLOWUP_MSG)
    j = math.floor(d)
    if d - j > 0.5:
        j += 1
    return int(j)


def _window_from_sorted(s: np.ndarray, grid: np.ndarray, j: int):
    M = s.size
    idx = np.arange(M, dtype=np.int64) + j
    lifts, rem = np.divmod(idx, M)
    w = s[rem]
    xi = (w - grid) + lifts
    return xi, w, lifts


def _l2_phase(Y: np.ndarray, s: np.ndarray, grid: np.ndarray, j0: int) -> int:
    """Scan integer phases near the mean-rule phase for the best l2 fit."""
    M = s.size
    spread = float(np.max(Y) - np.min(Y))
    if not spread * M <= 2**22:
        # the mean phase can stay small while the spread explodes; abort
        # instead of scanning millions of candidate windows
        raise NumericalAbortError(_PHASE_BLOWUP_MSG)
    width = int(math.ceil(M * spread)) + 2
    best_j, best_obj = j0 - width, math.inf
    # scanning upward means ties keep the smaller phase
    for j in range(j0 - width, j0 + width + 1):
        _, w, lifts = _window_from_sorted(s, grid, j)
        obj = float(np.sum(((w + lifts) - Y) ** 2))
        if obj < best_obj:
            best_j, best_obj = j, obj
    return best_j


def sort_window_numpy(Y: np.ndarray, grid: np.ndarray, anchor_code: int):
    """Residues -> sort -> phase -> window, entirely in numpy.

    Returns (xi, w, lifts, phase) where w holds the window residues
    (bitwise copies of input residues), lifts the integer offsets, and
    xi = (w - grid) + lifts.
    """
    r = residues_of(Y)
    if np.isnan(r).any():
        raise NumericalAbortError("non-finite positions entered the rearrangement")
    s = np.sort(r)
    return _finish_window(Y, s, grid, anchor_code)


def _finish_window(Y, s, grid, anchor_code):
    if anchor_code == 1:
        j = 0
    else:
        d = float(np.sum(Y)) - float(np.sum(s))
        j = _mean_phase(d)
        if anchor_code == 2:
            j = _l2_phase(Y, s, grid, j)
    xi, w, lifts = _window_from_sorted(s, grid, j)
    return xi, w, lifts, j


def sort_window_presorted(Y: np.ndarray, r: np.ndarray, grid: np.ndarray, anchor_code: int):
    """Like sort_window_numpy but with residues supplied by the caller.

    Used when the input is already a rearranged map carrying exact window
    residues: reusing them keeps repeated rearrangement bitwise idempotent.
    """
    if np.isnan(r).any():
        raise NumericalAbortError("non-finite positions entered the rearrangement")
    s = np.sort(r)
    return _finish_window(Y, s, grid, anchor_code)


def sort_window(Y: np.ndarray, grid: np.ndarray, anchor_code: int, force_numpy: bool = False):
    """Dispatch the sorting pass to the compiled kernel when it pays off."""
    if (HAVE_SPEEDUPS and not force_numpy and anchor_code != 2
            and Y.shape[0] <= _EXT_CUTOFF):
        xi, w, lifts, j = _speedups.sort_window_c(Y, grid, anchor_code)
        if j == _PHASE_NAN:
            raise NumericalAbortError("non-finite positions entered the rearrangement")
        if j == _PHASE_OVER:
            raise NumericalAbortError(_PHASE_BLOWUP_MSG)
        return xi, w, lifts, int(j)
    return sort_window_numpy(Y, grid, anchor_code)


def predictor_arrays(xi, Z, noise, h, lam, amp, fxi):
    """One predictor update on raw arrays.

    fxi must hold F(xi) - lam^2 * xi, evaluated by the caller (forcing
    callables stay out of the kernel).
    """
    xihat = (1.0 + h * lam) * xi + h * Z + amp * noise
    Znew = (1.0 - lam * h) * Z + h * fxi
    return xihat, Znew


def step_arrays(xi, Z, noise, grid, h, lam, amp, fxi, anchor_code, force_numpy=False):
    """Predictor + rearrangement on raw arrays.

    Returns (xi_out, Z_out, w, lifts, phase).
    """
    xihat, Znew = predictor_arrays(xi, Z, noise, h, lam, amp, fxi)
    Y = grid + xihat
    xi_out, w, lifts, j = sort_window(Y, grid, anchor_code, force_numpy=force_numpy)
    return xi_out, Znew, w, lifts, j
