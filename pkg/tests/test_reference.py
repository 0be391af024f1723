"""Reference solvers: spectral heat target, IMEX pseudo-inverse solver, PDE residual."""

import math

import numpy as np
import pytest

from sortflow.core import (
    ConfigurationError,
    ForcingSpec,
    InvalidInitialDataError,
    LagrangianState,
    MonotoneMap,
    NumericalAbortError,
    PeriodicProfile,
    cell_centers,
    lq_norm,
)
from sortflow.reference import (
    HeatTarget,
    heat_exact,
    material_residual,
    solve_coupled_parabolic,
)

# agreement constant between the two independent oracles, fitted once on a
# J x h grid (worst observed ratio 5.1e-4) and frozen with a wide margin
TWO_ORACLE_C = 0.01


# ---------------------------------------------------------------------------
# spectral heat target
# ---------------------------------------------------------------------------


def test_heat_exact_reproduces_initial_density():
    J = 64
    x = cell_centers(J)
    got = heat_exact([0.25], 0.0, 0.05, J)
    assert np.allclose(got, 1.0 + 0.5 * np.cos(2 * np.pi * x), atol=1e-14)


def test_heat_exact_frozen_decay():
    # single cosine, amplitude 0.5, eps=0.05, t=1: amplitude decays by
    # exp(-4 pi^2 * 0.05) = exp(-1.9739208802178716)
    J = 256
    x = cell_centers(J)
    got = heat_exact([0.25], 1.0, 0.05, J)
    amp = 0.5 * math.exp(-4.0 * math.pi**2 * 0.05)
    assert amp == pytest.approx(0.0694556, abs=1e-7)
    assert np.allclose(got, 1.0 + amp * np.cos(2 * np.pi * x), atol=1e-15)


def test_heat_exact_multimode_decay_rates():
    # mode m decays like exp(-4 pi^2 m^2 eps t): check mode 2 against mode 1
    t, eps = 0.2, 0.03
    J = 128
    x = cell_centers(J)
    got = heat_exact([0.1, 0.05j], t, eps, J)
    d1 = math.exp(-4.0 * math.pi**2 * eps * t)
    d2 = math.exp(-16.0 * math.pi**2 * eps * t)
    want = 1.0 + 0.2 * d1 * np.cos(2 * np.pi * x) - 0.1 * d2 * np.sin(4 * np.pi * x)
    assert np.allclose(got, want, atol=1e-15)


def test_heat_exact_rejects_bad_grids():
    with pytest.raises(ConfigurationError, match="J=1"):
        heat_exact([0.1], 0.0, 0.05, 1)
    with pytest.raises(ConfigurationError, match="Nyquist"):
        heat_exact([0.1, 0.05], 0.0, 0.05, 4)
    heat_exact([0.1, 0.05], 0.0, 0.05, 6)  # K=2 at the limit: fine


def test_heat_target_rejects_nonpositive_density():
    with pytest.raises(InvalidInitialDataError):
        HeatTarget.from_cosine(1.05, 0.05)
    with pytest.raises(InvalidInitialDataError):
        HeatTarget(epsilon=0.05, modes=[0.45, 0.45])  # combined modes dip below 0


def test_heat_target_validation():
    with pytest.raises(ConfigurationError):
        HeatTarget(epsilon=0.05, modes=[])
    with pytest.raises(ConfigurationError):
        HeatTarget(epsilon=-0.1, modes=[0.1])
    with pytest.raises(ConfigurationError):
        HeatTarget(epsilon=0.05, modes=[complex("nan")])


def test_heat_target_inverse_roundtrip():
    target = HeatTarget.from_cosine(0.5, 0.05)
    a = cell_centers(37)
    for t in (0.0, 0.1, 1.0):
        X = target.inverse(t, a)
        assert np.max(np.abs(target.u(t, X) - a)) <= 1e-12


def test_heat_target_cell_averages():
    target = HeatTarget.from_cosine(0.4, 0.02)
    t, J = 0.15, 32
    avg = target.cell_averages(t, J)
    assert float(np.mean(avg)) == pytest.approx(1.0, abs=1e-14)
    # closed form for the cosine: J/(2 pi) * A e^{-4 pi^2 eps t} * [sin]^{face}
    faces = np.arange(J + 1) / J
    decay = 0.4 * math.exp(-4.0 * math.pi**2 * 0.02 * t)
    want = 1.0 + decay * J / (2.0 * math.pi) * np.diff(np.sin(2 * np.pi * faces))
    assert np.allclose(avg, want, atol=1e-14)


def test_heat_target_flat_profile_is_exact_zero():
    target = HeatTarget(epsilon=0.05, modes=[0.0])
    assert np.array_equal(target.xi(0.3, 24), np.zeros(24))
    assert np.array_equal(target.cell_averages(0.1, 8), np.ones(8))


# ---------------------------------------------------------------------------
# coupled parabolic solver
# ---------------------------------------------------------------------------


def test_parabolic_T0_returns_initial_data():
    J = 16
    x = cell_centers(J)
    sol = solve_coupled_parabolic(lambda y: y, lambda y: 0.5, 0.05, 1.0, None, 0.0, J, 1e-3)
    assert np.array_equal(sol.times, [0.0])
    assert np.array_equal(sol.u[0], x)
    assert np.array_equal(sol.Z[0], np.full(J, 0.5))


def test_parabolic_rejects_nonmonotone_u0():
    J = 8
    u0 = cell_centers(J).copy()
    u0[3], u0[4] = u0[4], u0[3]
    with pytest.raises(InvalidInitialDataError, match="cell 3"):
        solve_coupled_parabolic(u0, np.zeros(J), 0.05, 0.0, None, 0.1, J, 1e-3)


def test_parabolic_rejects_cfl_at_start():
    # |b| = 10, dx = 1/64, h = 2e-3: courant = 1.28 > 0.5
    J = 64
    with pytest.raises(ConfigurationError, match="CFL"):
        solve_coupled_parabolic(lambda y: y, lambda y: 10.0, 0.05, 0.0, None, 1.0, J, 2e-3)


def test_parabolic_aborts_midrun_when_z_outruns_step():
    # the forcing pumps Z until the advective CFL trips mid-integration
    J = 64
    x = cell_centers(J)
    with pytest.raises(NumericalAbortError) as err:
        solve_coupled_parabolic(
            x + 0.05 * np.sin(2 * np.pi * x), np.zeros(J),
            0.05, 1.0, ForcingSpec.poisson(0.02), 2.0, J, 2e-3,
        )
    assert err.value.step is not None and 0 < err.value.step < 1000
    assert "CFL" in str(err.value)


def test_parabolic_validation():
    with pytest.raises(ConfigurationError, match="J=2"):
        solve_coupled_parabolic(lambda y: y, lambda y: 0.0, 0.05, 0.0, None, 0.1, 2, 1e-3)
    with pytest.raises(ConfigurationError, match="h_ref"):
        solve_coupled_parabolic(lambda y: y, lambda y: 0.0, 0.05, 0.0, None, 0.1, 8, 0.0)
    with pytest.raises(ConfigurationError, match="lambda"):
        solve_coupled_parabolic(lambda y: y, lambda y: 0.0, 0.05, -1.0, None, 0.1, 8, 1e-3)
    with pytest.raises(ConfigurationError, match="u0 has"):
        solve_coupled_parabolic(np.zeros(7), np.zeros(8), 0.05, 0.0, None, 0.1, 8, 1e-3)
    with pytest.raises(InvalidInitialDataError, match="non-finite"):
        solve_coupled_parabolic(lambda y: y, lambda y: float("nan"), 0.05, 0.0, None, 0.1, 8, 1e-3)


def test_parabolic_agrees_with_heat_target():
    # decoupled case: the IMEX solver must track the exact spectral solution
    # within 2 (dx + h) C for the frozen constant
    target = HeatTarget.from_cosine(0.3, 0.05)
    T = 0.1
    for J, h in ((64, 4e-4), (128, 4e-4), (256, 1e-4)):
        x = cell_centers(J)
        sol = solve_coupled_parabolic(target.u(0.0, x), np.zeros(J), 0.05, 0.0, None, T, J, h)
        err = lq_norm(sol.u_at(T) - target.u(T, x), 1)
        assert err <= 2.0 * (1.0 / J + h) * TWO_ORACLE_C


def test_parabolic_self_convergence_full_system():
    # coupled run (lam=1, poisson forcing): successive grid pairs must
    # contract by at least 1.8x in L1, measured through the periodic
    # piecewise-linear restriction of the finer solution
    us = {}
    for J in (512, 1024, 2048):
        x = cell_centers(J)
        sol = solve_coupled_parabolic(
            x + 0.05 * np.sin(2 * np.pi * x), np.zeros(J),
            0.05, 1.0, ForcingSpec.poisson(1.0), 0.5, J, 1e-4,
        )
        us[J] = (x, sol.u_at(0.5))

    def restrict(fine, coarse_x):
        xf, uf = fine
        xe = np.concatenate((xf - 1.0, xf, xf + 1.0))
        ue = np.concatenate((uf - 1.0, uf, uf + 1.0))
        return np.interp(coarse_x, xe, ue)

    d1 = float(np.mean(np.abs(us[512][1] - restrict(us[1024], us[512][0]))))
    d2 = float(np.mean(np.abs(us[1024][1] - restrict(us[2048], us[1024][0]))))
    assert d1 / d2 >= 1.8


def test_reference_solution_accessors():
    J = 32
    sol = solve_coupled_parabolic(
        lambda y: y, lambda y: 0.1, 0.05, 1.0, None, 0.1, J, 1e-3, save_stride=20,
    )
    assert sol.dx == 1.0 / J
    assert np.array_equal(sol.x, cell_centers(J))
    assert sol.T == pytest.approx(0.1)
    assert np.array_equal(sol.u_at(0.0), sol.u[0])
    mid = sol.u_at(0.5 * (sol.times[0] + sol.times[1]))
    assert np.allclose(mid, 0.5 * (sol.u[0] + sol.u[1]), atol=1e-15)
    with pytest.raises(ConfigurationError, match="outside"):
        sol.u_at(0.2)
    with pytest.raises(ConfigurationError, match="outside"):
        sol.Z_at(-0.01)


def test_reference_solution_material_state():
    J = 16
    sol = solve_coupled_parabolic(lambda y: y, lambda y: 0.25, 0.0, 0.0, None, 0.0, J, 1e-3)
    st = sol.material_state(0.0)
    assert isinstance(st, LagrangianState)
    assert st.M == J
    assert np.max(np.abs(st.X.xi.values)) <= 1e-14  # identity transports to identity
    assert np.array_equal(st.Z.values, np.full(J, 0.25))


def test_reference_solution_shape_validation():
    from sortflow.reference import ReferenceSolution

    with pytest.raises(ConfigurationError, match="shapes"):
        ReferenceSolution(
            epsilon=0.05, lam=0.0, J=4, h=1e-3,
            times=np.array([0.0, 1.0]), u=np.zeros((2, 3)), Z=np.zeros((2, 3)),
            cfl_used=0.0,
        )
    with pytest.raises(ConfigurationError, match="increasing"):
        ReferenceSolution(
            epsilon=0.05, lam=0.0, J=4, h=1e-3,
            times=np.array([0.0, 0.0]),
            u=np.tile(cell_centers(4), (2, 1)), Z=np.zeros((2, 4)),
            cfl_used=0.0,
        )


# ---------------------------------------------------------------------------
# material residual
# ---------------------------------------------------------------------------


def _flat_state(t, M, Z=0.0):
    return LagrangianState(
        t=t, X=MonotoneMap(np.zeros(M)), Z=PeriodicProfile(np.full(M, float(Z)))
    )


def test_residual_rest_state_is_zero():
    states = [_flat_state(t, 16) for t in (0.0, 0.01, 0.02)]
    r = material_residual(states, 0.05, 1.0, ForcingSpec.poisson(2.0))
    assert r == {"xi_l1": 0.0, "xi_linf": 0.0, "z_l1": 0.0, "z_linf": 0.0}


def test_residual_detects_planted_defect():
    # Z drifting at rate delta with lam=0 and F=0 leaves exactly that rate
    delta, dt, M = 3.7e-3, 1e-3, 32
    states = [
        _flat_state(0.0, M, -delta * dt),
        _flat_state(dt, M, 0.0),
        _flat_state(2 * dt, M, delta * dt),
    ]
    r = material_residual(states, 0.05, 0.0)
    assert abs(r["z_linf"] - delta) <= 1e-8
    assert abs(r["z_l1"] - delta) <= 1e-8
    assert r["xi_l1"] == 0.0


def test_residual_refines_at_second_order():
    # exact heat solution sampled on (M, dt) and (2M, dt/2): the centered
    # residual must contract by at least 3x (measured factor is ~4)
    target = HeatTarget.from_cosine(0.3, 0.05)
    vals = {}
    for M, dt in ((128, 1e-3), (256, 5e-4)):
        states = [
            LagrangianState(
                t=t, X=MonotoneMap(target.xi(t, M)), Z=PeriodicProfile(np.zeros(M))
            )
            for t in (0.3 - dt, 0.3, 0.3 + dt)
        ]
        vals[M] = material_residual(states, 0.05, 0.0)["xi_l1"]
    assert vals[128] / vals[256] >= 3.0


def test_residual_validation():
    s = [_flat_state(t, 8) for t in (0.0, 0.01, 0.02)]
    with pytest.raises(ConfigurationError, match="3 consecutive"):
        material_residual(s[:2], 0.05, 0.0)
    bad_spacing = [s[0], s[1], _flat_state(0.05, 8)]
    with pytest.raises(ConfigurationError, match="equally spaced"):
        material_residual(bad_spacing, 0.05, 0.0)
    mixed = [s[0], _flat_state(0.01, 16), s[2]]
    with pytest.raises(ConfigurationError, match="different grids"):
        material_residual(mixed, 0.05, 0.0)
