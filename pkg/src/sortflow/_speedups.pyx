# cython: language_level=3
# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of kernels.sort_window_numpy.

Kept bitwise interchangeable with the numpy path; the parity rules live in
kernels.py.  Residues are scanned for NaN before std::sort (NaN keys are
undefined behaviour there), and the phase double is range-checked before
the integer cast (out-of-range casts are undefined behaviour too); sentinel
phases report both aborts.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, floor, isnan
from libcpp.algorithm cimport sort as cpp_sort

cnp.import_array()

PHASE_NAN = np.iinfo(np.int64).min
PHASE_OVER = PHASE_NAN + 1

# must match kernels._PHASE_CAP (2^62)
cdef double PHASE_CAP = 4611686018427387904.0


def sort_window_c(const double[::1] Y, const double[::1] grid, int anchor_code):
    """Residues -> sort -> phase -> window; returns (xi, w, lifts, phase)."""
    cdef Py_ssize_t M = Y.shape[0]
    xi_arr = np.empty(M, dtype=np.float64)
    w_arr = np.empty(M, dtype=np.float64)
    l_arr = np.empty(M, dtype=np.int64)
    s_arr = np.empty(M, dtype=np.float64)
    cdef double[::1] xi = xi_arr
    cdef double[::1] w = w_arr
    cdef cnp.int64_t[::1] lifts = l_arr
    cdef double[::1] s = s_arr
    cdef Py_ssize_t k
    cdef long long Mll = <long long>M
    cdef double y, r, d, dfloor
    cdef double sumY = 0.0
    cdef double sumS = 0.0
    cdef long long j, i, q, rm
    cdef bint bad = 0

    for k in range(M):
        y = Y[k]
        r = y - floor(y)
        if isnan(r):
            bad = 1
            break
        if r >= 1.0:
            r = 0.0
        s[k] = r + 0.0
        sumY += y
    if bad:
        return xi_arr, w_arr, l_arr, PHASE_NAN

    cpp_sort(&s[0], &s[0] + M)

    if anchor_code == 1:
        j = 0
    else:
        for k in range(M):
            sumS += s[k]
        d = sumY - sumS
        if not fabs(d) <= PHASE_CAP:
            return xi_arr, w_arr, l_arr, PHASE_OVER
        dfloor = floor(d)
        j = <long long>dfloor
        if d - dfloor > 0.5:
            j += 1

    for k in range(M):
        i = <long long>k + j
        q = i / Mll
        rm = i - q * Mll
        if rm < 0:
            rm += Mll
            q -= 1
        w[k] = s[rm]
        lifts[k] = q
        xi[k] = (s[rm] - grid[k]) + q

    return xi_arr, w_arr, l_arr, j
