"""Analysis harness: order fits, reference comparisons, structural probes."""

import math

import numpy as np
import pytest

from sortflow.analysis import (
    ConvergenceReport,
    compare_to_reference,
    estimate_order,
    fixed_point_check,
    lipschitz_probe,
    run_heat_ladder,
    stability_probe,
    supnorm_probe,
    weak_consistency_residual,
)
from sortflow.core import (
    ConfigurationError,
    LagrangianState,
    MonotoneMap,
    NoiseSpec,
    PeriodicProfile,
    SchemeConfig,
    sample_initial_data,
)
from sortflow.reference import HeatTarget, solve_coupled_parabolic
from sortflow.scheme import Trajectory, run


def _cfg(**kw):
    base = dict(h=1e-3, epsilon=0.05, lam=0.0, M=100, noise=NoiseSpec.binary(50),
                T=0.02, save_stride=1)
    base.update(kw)
    return SchemeConfig(**base)


def _sine_init(M, amp=0.05, lam=0.0, zamp=0.0):
    return sample_initial_data(
        lambda a: amp * np.sin(2 * np.pi * a), M, lam=lam,
        Z0=(lambda a: zamp * np.cos(2 * np.pi * a)) if zamp else None,
    )


# ---------------------------------------------------------------------------
# order estimation
# ---------------------------------------------------------------------------


def test_estimate_order_halving():
    assert estimate_order([0.4, 0.2], [0.1, 0.05]) == pytest.approx(1.0, abs=1e-12)
    assert estimate_order([0.4, 0.4], [0.1, 0.05]) == pytest.approx(0.0, abs=1e-12)


def test_estimate_order_mixed_ratios():
    # error /3 per level while h /4: slope = ln 3 / ln 4
    got = estimate_order([0.9, 0.3, 0.1], [1e-2, 2.5e-3, 6.25e-4])
    assert got == pytest.approx(math.log(3) / math.log(4), abs=1e-12)
    assert got == pytest.approx(0.7924812503605781, abs=1e-12)


def test_estimate_order_recovers_power_law():
    hs = np.geomspace(1e-1, 1e-3, 7)
    errs = 3.7 * hs**0.41
    assert estimate_order(errs, hs) == pytest.approx(0.41, abs=1e-12)


def test_estimate_order_drops_nonpositive_with_warning():
    with pytest.warns(RuntimeWarning, match="non-positive"):
        got = estimate_order([0.4, 0.0, 0.1], [0.1, 0.05, 0.025])
    assert got == pytest.approx(1.0, abs=1e-12)


def test_estimate_order_errors():
    with pytest.raises(ConfigurationError, match="equal length"):
        estimate_order([0.1], [0.1, 0.05])
    with pytest.raises(ConfigurationError, match="at least 2"):
        estimate_order([0.1], [0.1])
    with pytest.raises(ConfigurationError, match="positive"):
        estimate_order([0.1, 0.05], [0.1, 0.0])
    with pytest.warns(RuntimeWarning):
        with pytest.raises(ConfigurationError, match="fewer than 2"):
            estimate_order([0.1, 0.0], [0.1, 0.05])


def test_convergence_report_validation():
    ok = dict(J=25, errors={}, orders={}, seconds=(0.1, 0.1))
    ConvergenceReport(hs=(4e-3, 1e-3), rs=(4e-2, 1e-2), Ms=(50, 200), **ok)
    with pytest.raises(ConfigurationError, match="equal length"):
        ConvergenceReport(hs=(4e-3, 1e-3), rs=(4e-2,), Ms=(50, 200), **ok)
    with pytest.raises(ConfigurationError, match="decreasing"):
        ConvergenceReport(hs=(1e-3, 4e-3), rs=(1e-2, 4e-2), Ms=(200, 50), **ok)
    with pytest.raises(ConfigurationError, match="proportional"):
        ConvergenceReport(hs=(4e-3, 1e-3), rs=(4e-2, 2e-2), Ms=(50, 100), **ok)
    with pytest.raises(ConfigurationError, match="integer"):
        ConvergenceReport(hs=(3e-3, 7.5e-4), rs=(3e-2, 7.5e-3), Ms=(66, 266), **ok)


# ---------------------------------------------------------------------------
# reference comparison
# ---------------------------------------------------------------------------


def test_compare_rest_against_flat_heat_target():
    # dyadic amplitude sqrt(2 * 0.5 * 2^-12) = 2^-6 is bitwise one cell at
    # M=64, so the rest state survives the run and only the comb offset remains
    T = 16 * 2.0**-12
    cfg = _cfg(epsilon=0.5, h=2.0**-12, M=64, noise=NoiseSpec.binary(32), T=T)
    traj = run(cfg)
    target = HeatTarget(epsilon=0.5, modes=[0.0])
    errs = compare_to_reference(traj, target, T, norms=("l1", "linf"))
    assert errs["rho_l1"] == 0.0 and errs["rho_linf"] == 0.0
    assert errs["xi_l1"] == 0.0 and errs["z_l1"] == 0.0
    assert errs["u_l1"] == pytest.approx(1.0 / 64, abs=1e-15)
    assert errs["u_l1"] <= 0.5 / 64 + 0.5 / 32  # quantization budget at J=32


def test_compare_trajectory_to_itself():
    traj = run(_cfg(), _sine_init(100))
    errs = compare_to_reference(traj, traj, 0.01)
    assert errs == {"rho_l1": 0.0, "u_l1": 0.0, "xi_l1": 0.0, "z_l1": 0.0}


def test_compare_against_reference_solution():
    # frozen dynamics on both sides: only labeling quantization shows up
    traj = run(_cfg(epsilon=0.0, M=64, noise=NoiseSpec.binary(32), T=0.01))
    sol = solve_coupled_parabolic(lambda y: y, lambda y: 0.0, 0.0, 0.0, None,
                                  0.01, 64, 1e-3)
    errs = compare_to_reference(traj, sol, 0.01)
    assert "rho_l1" not in errs
    assert errs["u_l1"] == pytest.approx(0.5 / 64, abs=1e-15)
    assert errs["xi_l1"] == pytest.approx(0.5 / 64, abs=1e-15)
    assert errs["z_l1"] == 0.0


def test_compare_validation():
    traj = run(_cfg())
    target = HeatTarget(epsilon=0.05, modes=[0.0])
    with pytest.raises(ConfigurationError, match="unknown norm"):
        compare_to_reference(traj, target, 0.01, norms=("l3",))
    with pytest.raises(ConfigurationError, match="outside"):
        compare_to_reference(traj, target, 0.05)
    with pytest.raises(ConfigurationError, match="unsupported reference"):
        compare_to_reference(traj, object(), 0.01)


# ---------------------------------------------------------------------------
# heat ladder
# ---------------------------------------------------------------------------


def test_heat_ladder_workers_do_not_change_errors():
    kw = dict(hs=(4e-3, 1e-3), T=0.04)
    seq = run_heat_ladder(**kw, workers=1)
    par = run_heat_ladder(**kw, workers=2)
    assert seq.errors == par.errors
    assert seq.orders == par.orders
    assert seq.Ms == par.Ms == (50, 200)
    assert seq.J == 25
    assert set(seq.errors) == {"rho_l1", "u_l1", "xi_l1", "z_l1"}
    assert all(len(v) == 2 for v in seq.errors.values())


def test_heat_ladder_returns_trajectories_on_request():
    report, trajs = run_heat_ladder(hs=(4e-3, 1e-3), T=0.04, return_trajectories=True)
    assert len(trajs) == 2
    assert all(isinstance(t, Trajectory) for t in trajs)
    assert [t.config.M for t in trajs] == list(report.Ms)
    assert trajs[0].times[-1] == pytest.approx(0.04)


def test_heat_ladder_needs_two_levels():
    with pytest.raises(ConfigurationError, match="2 levels"):
        run_heat_ladder(hs=(1e-3,))


# ---------------------------------------------------------------------------
# structural probes
# ---------------------------------------------------------------------------


def test_stability_probe_degenerate_pair():
    cfg = _cfg()
    init = _sine_init(100)
    got = stability_probe(cfg, init, init)
    assert got == {"ratio": 0.0, "degenerate": True, "per_epsilon": {}}


def test_stability_probe_symmetric_and_tabulated():
    cfg = _cfg(lam=1.0)
    a = _sine_init(100, lam=1.0, zamp=0.05)
    b = sample_initial_data(lambda x: np.zeros_like(x), 100)
    ab = stability_probe(cfg, a, b, epsilons=(0.01, 0.05))
    ba = stability_probe(cfg, b, a, epsilons=(0.01, 0.05))
    assert ab["ratio"] == ba["ratio"]
    assert ab["per_epsilon"] == ba["per_epsilon"]
    assert set(ab["per_epsilon"]) == {0.01, 0.05}
    assert ab["ratio"] == ab["per_epsilon"][0.05]  # headline at cfg.epsilon
    assert not ab["degenerate"]


def test_stability_probe_frozen_transport_is_nonexpansive():
    # eps = 0 kills the noise; with lam = 0, F = 0 and identical Z the pair
    # distance can only be rearranged, never grown
    cfg = _cfg(epsilon=0.0, lam=0.0)
    a = _sine_init(100, amp=0.03, zamp=0.2)
    b = _sine_init(100, amp=0.0, zamp=0.2)
    got = stability_probe(cfg, a, b)
    assert got["ratio"] <= 1.0 + 1e-10


def test_supnorm_probe_rest_and_decay():
    rest = run(_cfg(epsilon=0.5, h=2.0**-12, M=64, noise=NoiseSpec.binary(32),
                    T=8 * 2.0**-12))
    got = supnorm_probe(rest)
    assert got["max_ratio"] == 0.0
    assert np.all(got["factors"] == 1.0)

    cfg = _cfg(lam=1.0, epsilon=0.0, T=0.05)
    traj = run(cfg, _sine_init(100, lam=1.0, zamp=0.05))
    got = supnorm_probe(traj)
    assert got["c_star"] == 2.0
    assert got["envelope"][0] == got["norms"][0]
    assert got["max_ratio"] <= 1.0 + 1e-12
    assert np.all(got["norms"] <= got["envelope"] * (1.0 + 1e-12))


def test_supnorm_probe_needs_every_step():
    with pytest.raises(ConfigurationError, match="save_stride=1"):
        supnorm_probe(run(_cfg(save_stride=4)))


def test_lipschitz_probe_rest_and_sine():
    rest = run(_cfg(epsilon=0.5, h=2.0**-12, M=64, noise=NoiseSpec.binary(32),
                    T=8 * 2.0**-12))
    got = lipschitz_probe(rest, omegas=(0.01, 0.1))
    assert got["lip0"] == 0.0
    assert got["satisfied"]
    assert np.all(got["modulus"] == 0.0)

    cfg = _cfg(lam=1.0, T=0.05)
    traj = run(cfg, _sine_init(100, amp=0.1, lam=1.0, zamp=0.1))
    got = lipschitz_probe(traj, omegas=(1.0 / 50, 1.0 / 10))
    # steepest initial slope of 0.1 sin(2 pi a) is about 0.2 pi
    assert got["lip0"] == pytest.approx(0.2 * math.pi, rel=1e-3)
    assert got["c_star"] == 2.0
    assert got["satisfied"]
    assert got["modulus"].shape == (len(traj.states), 2)


def test_weak_consistency_rest_state():
    rest = run(_cfg(epsilon=0.5, h=2.0**-12, M=64, noise=NoiseSpec.binary(32),
                    T=8 * 2.0**-12))
    got = weak_consistency_residual(rest)
    assert set(got) == {"cos_1", "sin_1", "cos_2"}
    assert all(v <= 1e-10 for v in got.values())


def test_weak_consistency_transport_taylor_bound():
    # uniform drift c: the one-step residual is the Taylor remainder of
    # G(x + ch), bounded by c^2 h / 2 * sup|G''|
    c, h = 0.3, 1e-3
    cfg = _cfg(epsilon=0.0, h=h, T=0.01)
    init = LagrangianState(
        t=0.0, X=MonotoneMap(np.zeros(100)), Z=PeriodicProfile(np.full(100, c))
    )
    got = weak_consistency_residual(run(cfg, init))
    for (kind, m), key in ((("cos", 1), "cos_1"), (("sin", 1), "sin_1"), (("cos", 2), "cos_2")):
        bound = 0.5 * c * c * h * (2 * math.pi * m) ** 2
        assert got[key] <= bound * 1.01


def test_weak_consistency_validation():
    with pytest.raises(ConfigurationError, match="save_stride=1"):
        weak_consistency_residual(run(_cfg(save_stride=2)))
    with pytest.raises(ConfigurationError, match="at least one step"):
        weak_consistency_residual(run(_cfg(T=0.0)))
    with pytest.raises(ConfigurationError, match="unknown test function"):
        weak_consistency_residual(run(_cfg()), gset=(("tan", 1),))


# ---------------------------------------------------------------------------
# fixed-point alignment
# ---------------------------------------------------------------------------


def test_fixed_point_aligned_is_exact():
    got = fixed_point_check(0.5, 2.0**-12, 64, steps=8)
    assert got == {
        "exact": True,
        "max_drift": 0.0,
        "aligned": True,
        "amplitude_cells": 1.0,
        "steps": 8,
    }


def test_fixed_point_misaligned_drifts_below_one_cell():
    got = fixed_point_check(0.5, 2.0**-12, 96, steps=8)
    assert not got["exact"]
    assert not got["aligned"]
    assert got["amplitude_cells"] == pytest.approx(1.5)
    assert 0.0 < got["max_drift"] <= 1.0 / 96


def test_fixed_point_no_noise_is_exact():
    got = fixed_point_check(0.0, 1e-3, 50, steps=5)
    assert got["exact"] and got["aligned"]
    assert got["amplitude_cells"] == 0.0


def test_fixed_point_validation():
    with pytest.raises(ConfigurationError, match="M=63"):
        fixed_point_check(0.5, 2.0**-12, 63, steps=4)
    with pytest.raises(ConfigurationError, match="steps=0"):
        fixed_point_check(0.5, 2.0**-12, 64, steps=0)
