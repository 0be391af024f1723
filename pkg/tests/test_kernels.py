"""Step kernels: residues, phase rule, predictor arithmetic, compiled parity."""

import math

import numpy as np
import pytest

from sortflow.core import NumericalAbortError, c_star, identity_grid
from sortflow.kernels import (
    HAVE_SPEEDUPS,
    predictor_arrays,
    residues_of,
    sort_window,
    sort_window_numpy,
    sort_window_presorted,
    step_arrays,
)

compiled = pytest.mark.skipif(not HAVE_SPEEDUPS, reason="extension not built")


# ---------------------------------------------------------------------------
# residues
# ---------------------------------------------------------------------------


def test_residues_basic():
    r = residues_of(np.array([1.25, -0.25, 3.0, 0.0]))
    assert np.array_equal(r, [0.25, 0.75, 0.0, 0.0])


def test_residue_of_tiny_negative_clamped():
    # -1e-18 - floor(-1e-18) rounds to exactly 1.0; must clamp into [0, 1)
    r = residues_of(np.array([-1e-18]))
    assert r[0] == 0.0


def test_residue_negative_zero_normalized():
    r = residues_of(np.array([-0.0]))
    assert r[0] == 0.0 and not np.signbit(r[0])


# ---------------------------------------------------------------------------
# predictor
# ---------------------------------------------------------------------------


def test_predictor_hand_values():
    # h=0.1, lam=1, eps=0 (amp 0), xi=0.2, Z=-0.1, F=None:
    # xihat = 1.1*0.2 + 0.1*(-0.1) = 0.21, Znew = 0.9*(-0.1) + 0.1*(-0.2) = -0.11
    xi = np.array([0.2])
    Z = np.array([-0.1])
    fxi = 0.0 - 1.0 * xi  # F(xi) - lam^2 xi with F = 0
    xihat, Znew = predictor_arrays(xi, Z, np.zeros(1), 0.1, 1.0, 0.0, fxi)
    assert xihat[0] == pytest.approx(0.21, abs=1e-15)
    assert Znew[0] == pytest.approx(-0.11, abs=1e-15)


def test_predictor_rest_state_gives_pure_noise():
    noise = np.array([-1.0, -1.0, 1.0, 1.0])
    xihat, Znew = predictor_arrays(
        np.zeros(4), np.zeros(4), noise, 0.1, 0.0, 0.25, np.zeros(4)
    )
    assert np.array_equal(xihat, 0.25 * noise)
    assert np.array_equal(Znew, np.zeros(4))


def test_predictor_amplification_identity():
    # ||(xihat - noise term, Znew)||_inf <= (1 + c* h) ||(xi, Z)||_inf exactly
    rng = np.random.default_rng(7)
    h, lam, ell = 1e-2, 1.0, 0.5
    for _ in range(50):
        M = int(rng.integers(2, 65))
        xi = rng.normal(scale=0.2, size=M)
        Z = rng.normal(scale=0.2, size=M)
        noise = rng.normal(size=M)
        fxi = ell * xi - lam * lam * xi  # a Lipschitz-ell forcing
        xihat, Znew = predictor_arrays(xi, Z, noise, h, lam, 0.05, fxi)
        drift = xihat - 0.05 * noise
        before = max(np.max(np.abs(xi)), np.max(np.abs(Z)))
        after = max(np.max(np.abs(drift)), np.max(np.abs(Znew)))
        assert after <= (1.0 + c_star(lam, ell) * h) * before * (1.0 + 1e-14)


# ---------------------------------------------------------------------------
# sorting pass
# ---------------------------------------------------------------------------


def test_sort_window_outputs_consistent():
    Y = np.array([0.9, 0.1, 0.45, 0.3])
    grid = identity_grid(4)
    xi, w, lifts, phase = sort_window_numpy(Y, grid, 0)
    assert np.array_equal(np.sort(residues_of(Y)), np.sort(w))
    assert np.array_equal(xi, (w - grid) + lifts)
    pos = w + lifts
    assert np.all(np.diff(pos) >= 0.0)


def test_sort_window_nan_aborts():
    Y = np.array([0.1, np.nan, 0.3, 0.4])
    grid = identity_grid(4)
    with pytest.raises(NumericalAbortError):
        sort_window_numpy(Y, grid, 0)
    with pytest.raises(NumericalAbortError):
        sort_window(Y, grid, 0)


def test_sort_window_blown_up_state_aborts():
    # finite but astronomically displaced parcels: the mean phase cannot
    # be indexed (and casting it is UB in the compiled twin); both paths
    # must raise the typed abort, not OverflowError
    Y = np.full(4, 1e20)
    grid = identity_grid(4)
    for f in (sort_window_numpy, sort_window):
        with pytest.raises(NumericalAbortError, match="blown up"):
            f(Y, grid, 0)
    # zero-phase anchoring never forms the mean, so it still succeeds
    xi, w, lifts, phase = sort_window(Y, grid, 1)
    assert phase == 0 and np.all(np.isfinite(xi))
    # huge spread with a small mean would make the l2 scan unbounded
    with pytest.raises(NumericalAbortError, match="blown up"):
        sort_window(np.array([-1e30, 1e30]), identity_grid(2), 2)


def test_phase_cap_boundary_is_indexable():
    # just inside the cap the window math must still work in int64
    Y = np.full(2, 1.0e18)
    xi, w, lifts, phase = sort_window_numpy(Y, identity_grid(2), 0)
    assert phase == 2_000_000_000_000_000_000
    assert np.array_equal(w + lifts, np.sort(Y - np.floor(Y)) + lifts)


def test_presorted_path_is_bitwise_idempotent():
    rng = np.random.default_rng(3)
    Y = rng.normal(size=16)
    grid = identity_grid(16)
    xi1, w1, l1, p1 = sort_window(Y, grid, 0)
    xi2, w2, l2, p2 = sort_window_presorted(w1 + l1, w1, grid, 0)
    assert np.array_equal(xi1, xi2)
    assert np.array_equal(w1, w2)
    assert np.array_equal(l1, l2)
    assert p1 == p2


def test_step_arrays_dyadic_fixed_point():
    # eps=1/2, h=2^-12, M=64: amplitude exactly one cell; rest state is
    # restored bit-for-bit by the sort
    M = 64
    h, eps = 2.0**-12, 0.5
    amp = math.sqrt(2.0 * eps * h)
    assert amp == 1.0 / M
    noise = np.where((2 * 32 * np.arange(M)) // M % 2 == 0, -1.0, 1.0)
    grid = identity_grid(M)
    xi, Z = np.zeros(M), np.zeros(M)
    for _ in range(8):
        xi, Z, w, lifts, phase = step_arrays(
            xi, Z, noise, grid, h, 0.0, amp, np.zeros(M), 0
        )
        assert np.array_equal(xi, np.zeros(M))
        assert np.array_equal(Z, np.zeros(M))


# ---------------------------------------------------------------------------
# compiled twin
# ---------------------------------------------------------------------------


@compiled
def test_compiled_matches_numpy_bitwise():
    rng = np.random.default_rng(42)
    for _ in range(300):
        M = int(rng.integers(2, 129))
        scale = rng.choice([0.3, 1.0, 4.0])
        Y = identity_grid(M) + rng.normal(scale=scale, size=M)
        grid = identity_grid(M)
        for code in (0, 1):
            xn, wn, ln, pn = sort_window_numpy(Y, grid, code)
            xc, wc, lc, pc = sort_window(Y, grid, code)
            assert pn == pc
            assert xn.tobytes() == xc.tobytes()
            assert wn.tobytes() == wc.tobytes()
            assert np.array_equal(ln, lc)


@compiled
def test_compiled_nan_abort():
    Y = np.array([0.1, np.nan])
    with pytest.raises(NumericalAbortError):
        sort_window(Y, identity_grid(2), 0)


@compiled
def test_force_numpy_flag_routes_around_extension():
    Y = np.array([0.6, 0.2, 0.9])
    grid = identity_grid(3)
    a = sort_window(Y, grid, 0)
    b = sort_window(Y, grid, 0, force_numpy=True)
    assert a[3] == b[3]
    assert np.array_equal(a[0], b[0])


@compiled
def test_dispatch_prefers_numpy_for_large_windows():
    from sortflow.kernels import _EXT_CUTOFF, using_compiled

    assert using_compiled()
    assert using_compiled(_EXT_CUTOFF)
    assert not using_compiled(_EXT_CUTOFF + 1)


@compiled
def test_compiled_parity_holds_above_cutoff():
    # the dispatch stops using the extension past the cutoff for speed,
    # not correctness; the kernels must still agree bitwise there
    from sortflow import _speedups
    from sortflow.kernels import _EXT_CUTOFF

    rng = np.random.default_rng(5)
    M = _EXT_CUTOFF + 476
    grid = identity_grid(M)
    Y = grid + rng.normal(scale=0.7, size=M)
    xn, wn, ln, pn = sort_window_numpy(Y, grid, 0)
    xc, wc, lc, pc = _speedups.sort_window_c(Y, grid, 0)
    assert pn == int(pc)
    assert xn.tobytes() == np.asarray(xc).tobytes()
    assert wn.tobytes() == np.asarray(wc).tobytes()
    assert np.array_equal(ln, np.asarray(lc))
