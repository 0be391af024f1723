"""Convergence studies and structural probes.

Everything in this module is read-only over trajectories: probes measure,
they never mutate.  The three families:

* convergence: compare_to_reference / estimate_order / run_heat_ladder,
  the refinement study against the spectral heat oracle;
* estimates: stability_probe (L^q contraction between paired runs),
  supnorm_probe and lipschitz_probe (growth envelopes with rate
  c* = max(lam+1, lam^2 + ell_F)), weak_consistency_residual (the
  distributional one-step residual against smooth test functions);
* fixed_point_check: bit-level verification that the rest state survives
  when the noise amplitude is an integer number of cells.

Error conventions: all norms are mean-normalized (lq_norm), so an L1
density error is directly the integral of |drho| over the torus.
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core import (
    ConfigurationError,
    LagrangianState,
    MonotoneMap,
    NoiseSpec,
    PeriodicProfile,
    SchemeConfig,
    c_star,
    cell_centers,
    lq_norm,
    modulus_of_continuity,
    pair_norm,
)
from .reference import HeatTarget, ReferenceSolution
from .scheme import Trajectory, reconstruct_eulerian, run

__all__ = [
    "ConvergenceReport",
    "compare_to_reference",
    "estimate_order",
    "run_heat_ladder",
    "stability_probe",
    "supnorm_probe",
    "lipschitz_probe",
    "weak_consistency_residual",
    "fixed_point_check",
]

_NORM_Q = {"l1": 1, "l2": 2, "linf": math.inf}


# ---------------------------------------------------------------------------
# Error records
# ---------------------------------------------------------------------------


def _staircase_at(state: LagrangianState, a: np.ndarray):
    """Sample the staircase position and Z at labels a in [0, 1)."""
    k = np.minimum((a * state.M).astype(np.int64), state.M - 1)
    pos = state.X.window_positions()
    return pos[k], state.Z.values[k]


def _check_norms(norms) -> dict:
    qs = {}
    for name in norms:
        if name not in _NORM_Q:
            raise ConfigurationError(f"unknown norm {name!r} (use l1, l2, linf)")
        qs[name] = _NORM_Q[name]
    if not qs:
        raise ConfigurationError("at least one norm is required")
    return qs


def compare_to_reference(traj: Trajectory, ref, t: float, norms=("l1",), J: Optional[int] = None) -> dict:
    """Errors of a trajectory against a reference at time t.

    ref may be a HeatTarget (exact solution), a ReferenceSolution
    (finite-difference oracle), or another Trajectory.  Densities and
    pseudo-inverses are compared on a shared x-grid of J cells, material
    profiles (xi, Z) on a shared a-grid.  Read-out interpolates saved
    states linearly in time; t outside either time range is rejected.

    Returns a flat dict keyed like "rho_l1", "u_linf".
    """
    qs = _check_norms(norms)
    state = traj.state_at(t)
    lam = traj.config.lam
    out = {}

    if isinstance(ref, HeatTarget):
        if t < 0.0:
            raise ConfigurationError(f"t={t:g} precedes the reference range")
        Jc = int(J) if J is not None else max(2, state.M // 2)
        field = reconstruct_eulerian(state, lam, Jc)
        d_rho = field.rho - ref.cell_averages(t, Jc)
        d_u = field.u - ref.u(t, field.x)
        d_xi = state.X.xi.values - ref.xi(t, state.M)
        d_z = state.Z.values
    elif isinstance(ref, ReferenceSolution):
        u_ref = ref.u_at(t)
        from .rearrange import pseudo_inverse

        d_u = pseudo_inverse(state.X, ref.J) - u_ref
        a = ref.a
        pos_s, z_s = _staircase_at(state, a)
        ref_state = ref.material_state(t)
        d_xi = (pos_s - a) - ref_state.X.xi.values
        d_z = z_s - ref_state.Z.values
        d_rho = None
    elif isinstance(ref, Trajectory):
        other = ref.state_at(t)
        Jc = int(J) if J is not None else max(2, min(state.M, other.M) // 2)
        fa = reconstruct_eulerian(state, lam, Jc)
        fb = reconstruct_eulerian(other, ref.config.lam, Jc)
        d_rho = fa.rho - fb.rho
        d_u = fa.u - fb.u
        a = cell_centers(min(state.M, other.M))
        pa, za = _staircase_at(state, a)
        pb, zb = _staircase_at(other, a)
        d_xi = pa - pb
        d_z = za - zb
    else:
        raise ConfigurationError(
            f"unsupported reference type {type(ref).__name__}"
        )

    for name, q in qs.items():
        if d_rho is not None:
            out[f"rho_{name}"] = lq_norm(d_rho, q)
        out[f"u_{name}"] = lq_norm(d_u, q)
        out[f"xi_{name}"] = lq_norm(d_xi, q)
        out[f"z_{name}"] = lq_norm(d_z, q)
    return out


def estimate_order(errors: Sequence[float], hs: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(h).

    Levels with zero or negative error carry no information on a log
    scale; they are dropped with a warning.
    """
    errors = np.asarray(errors, dtype=float)
    hs = np.asarray(hs, dtype=float)
    if errors.size != hs.size:
        raise ConfigurationError("errors and hs must have equal length")
    if errors.size < 2:
        raise ConfigurationError("need at least 2 levels to estimate an order")
    if np.any(hs <= 0.0):
        raise ConfigurationError("step sizes must be positive")
    keep = errors > 0.0
    if not np.all(keep):
        warnings.warn(
            f"excluding {int(np.sum(~keep))} level(s) with non-positive error",
            RuntimeWarning,
            stacklevel=2,
        )
    if int(np.sum(keep)) < 2:
        raise ConfigurationError("fewer than 2 levels with positive error")
    slope = np.polyfit(np.log(hs[keep]), np.log(errors[keep]), 1)[0]
    return float(slope)


# ---------------------------------------------------------------------------
# Heat-equation refinement ladder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    """One refinement study: per-level parameters, errors, orders, timings."""

    hs: tuple
    rs: tuple
    Ms: tuple
    J: int
    errors: dict
    orders: dict
    seconds: tuple

    def __post_init__(self):
        hs = tuple(float(h) for h in self.hs)
        rs = tuple(float(r) for r in self.rs)
        if len(hs) != len(rs) or len(hs) != len(self.Ms):
            raise ConfigurationError("ladder columns must have equal length")
        if any(h2 >= h1 for h1, h2 in zip(hs, hs[1:])):
            raise ConfigurationError("ladder must be strictly decreasing in h")
        cs = [r / h for r, h in zip(rs, hs)]
        if any(abs(c - cs[0]) > 1e-9 * cs[0] for c in cs):
            raise ConfigurationError("ladder must keep r proportional to h")
        for r in rs:
            if abs(1.0 / r - round(1.0 / r)) > 1e-9:
                raise ConfigurationError(f"1/r must be an integer, got r={r!r}")
        object.__setattr__(self, "hs", hs)
        object.__setattr__(self, "rs", rs)
        object.__setattr__(self, "Ms", tuple(int(m) for m in self.Ms))


def _heat_level(target: HeatTarget, h: float, ratio: float, T: float,
                J: int, anchor: str, save_stride: int):
    r = ratio * h
    inv = 1.0 / r
    if abs(inv - round(inv)) > 1e-9:
        raise ConfigurationError(f"1/r = {inv!r} is not an integer at h={h!r}")
    L = int(round(inv))
    M = 2 * L
    cfg = SchemeConfig(
        h=h,
        epsilon=target.epsilon,
        lam=0.0,
        M=M,
        noise=NoiseSpec.binary(L),
        anchor=anchor,
        T=T,
        save_stride=save_stride,
    )
    a = cell_centers(M)
    init = LagrangianState(
        t=0.0,
        X=MonotoneMap(target.inverse(0.0, a) - a),
        Z=PeriodicProfile(np.zeros(M)),
    )
    t0 = time.perf_counter()
    traj = run(cfg, init)
    seconds = time.perf_counter() - t0
    errs = compare_to_reference(traj, target, T, norms=("l1",), J=J)
    return cfg, traj, errs, seconds


def run_heat_ladder(
    hs: Sequence[float] = (4e-3, 1e-3, 2.5e-4),
    ratio: float = 10.0,
    epsilon: float = 0.05,
    amplitude: float = 0.5,
    T: float = 0.1,
    J: Optional[int] = None,
    anchor: str = "mean-closest",
    save_stride: int = 1,
    workers: Optional[int] = None,
    return_trajectories: bool = False,
):
    """Refinement study of the decoupled case against the exact heat solution.

    Each level runs the scheme at (h_i, r_i = ratio*h_i, M_i = 2/r_i) from
    the material sample of rho0 = 1 + amplitude cos(2 pi x) and measures L1
    errors at time T on a common x-grid (default: half the coarsest M, so
    every level is compared on the same cells).  Levels are independent and
    can run on a small thread pool; the report is identical either way.
    """
    hs = tuple(float(h) for h in hs)
    if len(hs) < 2:
        raise ConfigurationError("a ladder needs at least 2 levels")
    target = HeatTarget.from_cosine(amplitude, epsilon)
    Ms = [2 * int(round(1.0 / (ratio * h))) for h in hs]
    Jc = int(J) if J is not None else max(2, min(Ms) // 2)

    jobs = [(target, h, ratio, T, Jc, anchor, save_stride) for h in hs]
    if workers is not None and workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            results = list(pool.map(lambda args: _heat_level(*args), jobs))
    else:
        results = [_heat_level(*args) for args in jobs]

    errors = {}
    for key in ("rho_l1", "u_l1", "xi_l1", "z_l1"):
        errors[key] = tuple(res[2][key] for res in results)
    orders = {
        key: estimate_order(vals, hs)
        for key, vals in errors.items()
        if all(v > 0.0 for v in vals)
    }
    report = ConvergenceReport(
        hs=hs,
        rs=tuple(ratio * h for h in hs),
        Ms=tuple(res[0].M for res in results),
        J=Jc,
        errors=errors,
        orders=orders,
        seconds=tuple(res[3] for res in results),
    )
    if return_trajectories:
        return report, [res[1] for res in results]
    return report


# ---------------------------------------------------------------------------
# Structural probes
# ---------------------------------------------------------------------------


def _require_every_step(traj: Trajectory, who: str) -> None:
    if traj.steps != list(range(len(traj.states))):
        raise ConfigurationError(f"{who} needs a trajectory saved every step (save_stride=1)")


def stability_probe(cfg: SchemeConfig, init_a: LagrangianState,
                    init_b: LagrangianState, q=1,
                    epsilons: Optional[Sequence[float]] = None) -> dict:
    """Worst-case growth of ||(xi_a - xi_b, Z_a - Z_b)||_q over saved times.

    Runs the paired initial data under the same configuration (same noise,
    same anchor) and reports sup_t ||D(t)||_q / ||D(0)||_q.  With an
    epsilons list the sweep is repeated per viscosity and tabulated, the
    headline ratio staying the one at cfg.epsilon.  Identical inputs return
    ratio 0 with a degenerate flag.
    """
    same_xi = np.array_equal(init_a.X.xi.values, init_b.X.xi.values)
    if same_xi and np.array_equal(init_a.Z.values, init_b.Z.values):
        return {"ratio": 0.0, "degenerate": True, "per_epsilon": {}}

    def ratio_for(eps: float) -> float:
        cfg_e = replace(cfg, epsilon=float(eps))
        ta = run(cfg_e, init_a)
        tb = run(cfg_e, init_b)
        d0 = pair_norm(
            init_a.X.xi.values - init_b.X.xi.values,
            init_a.Z.values - init_b.Z.values,
            q,
        )
        worst = 0.0
        for sa, sb in zip(ta.states, tb.states):
            d = pair_norm(
                sa.X.xi.values - sb.X.xi.values,
                sa.Z.values - sb.Z.values,
                q,
            )
            worst = max(worst, d / d0)
        return worst

    table = {}
    for eps in epsilons if epsilons is not None else (cfg.epsilon,):
        table[float(eps)] = ratio_for(float(eps))
    headline = table.get(cfg.epsilon, ratio_for(cfg.epsilon))
    return {"ratio": headline, "degenerate": False, "per_epsilon": table}


def supnorm_probe(traj: Trajectory, cfg: Optional[SchemeConfig] = None) -> dict:
    """Per-step sup norms of (xi, Z) against the envelope norm0 * e^(c* t)."""
    cfg = cfg if cfg is not None else traj.config
    _require_every_step(traj, "supnorm_probe")
    norms = np.array(
        [pair_norm(s.X.xi.values, s.Z.values, math.inf) for s in traj.states]
    )
    times = traj.times
    factors = np.empty(max(0, norms.size - 1))
    for i in range(factors.size):
        if norms[i] == 0.0:
            factors[i] = 1.0 if norms[i + 1] == 0.0 else math.inf
        else:
            factors[i] = norms[i + 1] / norms[i]
    cs = c_star(cfg.lam, cfg.forcing.lipschitz)
    envelope = norms[0] * np.exp(cs * times)
    if norms[0] == 0.0:
        max_ratio = 0.0 if np.all(norms == 0.0) else math.inf
    else:
        max_ratio = float(np.max(norms / envelope))
    return {
        "times": times,
        "norms": norms,
        "factors": factors,
        "envelope": envelope,
        "c_star": cs,
        "max_ratio": max_ratio,
    }


def lipschitz_probe(traj: Trajectory, omegas: Sequence[float],
                    r: Optional[float] = None) -> dict:
    """Measured moduli of continuity of xi against (|omega|+r)*Lip0*e^(c* t).

    Lip0 is the discrete Lipschitz constant of the initial pair (xi_0, Z_0):
    max over cells of the periodic slope |v_{k+1}-v_k|*M, maximized over the
    two profiles.
    """
    cfg = traj.config
    rr = float(r) if r is not None else cfg.r
    omegas = tuple(float(w) for w in omegas)
    xi0 = traj.states[0].X.xi.values
    z0 = traj.states[0].Z.values
    M = xi0.size

    def lip(v: np.ndarray) -> float:
        return float(np.max(np.abs(np.roll(v, -1) - v))) * M

    lip0 = max(lip(xi0), lip(z0))
    cs = c_star(cfg.lam, cfg.forcing.lipschitz)
    times = traj.times
    modulus = np.empty((times.size, len(omegas)))
    for i, s in enumerate(traj.states):
        for j, w in enumerate(omegas):
            modulus[i, j] = modulus_of_continuity(s.X.xi, w)
    envelope = np.outer(np.exp(cs * times), [(abs(w) + rr) * lip0 for w in omegas])
    return {
        "times": times,
        "omegas": omegas,
        "modulus": modulus,
        "envelope": envelope,
        "lip0": lip0,
        "c_star": cs,
        "satisfied": bool(np.all(modulus <= envelope)),
    }


_DEFAULT_TEST_FUNCTIONS = (("cos", 1), ("sin", 1), ("cos", 2))


def weak_consistency_residual(traj: Trajectory, cfg: Optional[SchemeConfig] = None,
                              gset=_DEFAULT_TEST_FUNCTIONS) -> dict:
    """One-step distributional residual against trigonometric test functions.

    For G(x) = cos/sin(2 pi m x), measures

        d_n = (mean G(X_{n+1}) - mean G(X_n)) / h
              - mean(G'(X_n) (lam xi_n + Z_n) + eps G''(X_n))

    and reports max_n |d_n| per test function (keys like "cos_1").  The
    corrector conserves the residue multiset, so the sort drops out of
    mean G(X) exactly for periodic G; what remains is the predictor's
    Taylor remainder.
    """
    cfg = cfg if cfg is not None else traj.config
    _require_every_step(traj, "weak_consistency_residual")
    if len(traj.states) < 2:
        raise ConfigurationError("need at least one step")
    pos = np.stack([s.X.window_positions() for s in traj.states])
    vel = np.stack(
        [cfg.lam * s.X.xi.values + s.Z.values for s in traj.states[:-1]]
    )
    out = {}
    for kind, m in gset:
        w = 2.0 * math.pi * m
        theta = w * pos
        if kind == "cos":
            G = np.cos(theta)
            G1 = -w * np.sin(theta)
            G2 = -w * w * np.cos(theta)
        elif kind == "sin":
            G = np.sin(theta)
            G1 = w * np.cos(theta)
            G2 = -w * w * np.sin(theta)
        else:
            raise ConfigurationError(f"unknown test function kind {kind!r}")
        lhs = (G[1:].mean(axis=1) - G[:-1].mean(axis=1)) / cfg.h
        rhs = (G1[:-1] * vel + cfg.epsilon * G2[:-1]).mean(axis=1)
        out[f"{kind}_{m}"] = float(np.max(np.abs(lhs - rhs)))
    return out


def fixed_point_check(epsilon: float, h: float, M: int, steps: int) -> dict:
    """Does the rest state survive the noise bit-exactly?

    Runs `steps` steps from rest with binary noise at the economy choice
    L = M/2, no forcing, lam = 0.  Reports whether every xi_n is bitwise
    zero, the largest excursion otherwise, and whether the noise amplitude
    sqrt(2 eps h) is an integer number of grid cells (the alignment that
    makes exactness possible).
    """
    M = int(M)
    steps = int(steps)
    if steps < 1:
        raise ConfigurationError(f"steps={steps} must be >= 1")
    if M % 2 != 0:
        raise ConfigurationError(f"M={M} must be even for the economy choice L=M/2")
    cfg = SchemeConfig(
        h=h,
        epsilon=epsilon,
        lam=0.0,
        M=M,
        noise=NoiseSpec.binary(M // 2),
        T=steps * h,
        save_stride=1,
    )
    traj = run(cfg)
    drift = max(lq_norm(s.X.xi.values, math.inf) for s in traj.states)
    amp_cells = cfg.amplitude * M
    return {
        "exact": drift == 0.0,
        "max_drift": float(drift),
        "aligned": abs(amp_cells - round(amp_cells)) <= 1e-12,
        "amplitude_cells": float(amp_cells),
        "steps": cfg.steps,
    }
