"""The transport-collapse time stepper.

One step advances (X, Z) by

    predictor   xi_hat_k = (1 + h*lam) xi_k + h Z_k + sqrt(2 eps h) N_k
                Z'_k     = (1 - lam*h) Z_k + h (F(xi_k) - lam^2 xi_k)
    corrector   X' = monotone rearrangement of (identity grid + xi_hat)

with N the configured noise pattern.  The corrector keeps the residue
multiset of the predicted positions, so all pushforward observables pass
through the sort unchanged; the noise is mixed into the profile purely by
reordering.

When the noise amplitude sqrt(2 eps h) is an integer number of grid cells
and F = 0, the rest state is an exact fixed point: the predictor shifts
every residue onto another grid point and the sort restores the identity.
For dyadic parameter choices the whole loop is bit-exact.

Z never feeds back into itself except through the linear decay factor, so
it is determined by the xi history via a discrete convolution; see
z_closed_form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    ConfigurationError,
    EulerianField,
    LagrangianState,
    MonotoneMap,
    NumericalAbortError,
    PeriodicProfile,
    SchemeConfig,
    cell_centers,
    identity_grid,
    noise_row,
)
from .kernels import ANCHOR_CODES, predictor_arrays, step_arrays
from .rearrange import pseudo_inverse, sort_periodic

__all__ = [
    "LagrangianState",
    "Trajectory",
    "predictor",
    "corrector",
    "step",
    "run",
    "reconstruct_eulerian",
    "z_closed_form",
    "theta_entropy",
    "aligned_cell_count",
]


@dataclass(frozen=True)
class Trajectory:
    """Saved states of one run: every save_stride-th step plus the final one."""

    config: SchemeConfig
    states: list = field(default_factory=list)
    steps: list = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def final(self) -> LagrangianState:
        return self.states[-1]

    def state_at(self, t: float) -> LagrangianState:
        """Linear-in-time interpolation between saved states (read-out only).

        Interpolating two monotone staircases keeps monotonicity, so the
        result is a valid state; it is never written back.
        """
        times = self.times
        if not times[0] - 1e-12 <= t <= times[-1] + 1e-12:
            raise ConfigurationError(
                f"t={t:g} outside the saved range [{times[0]:g}, {times[-1]:g}]"
            )
        i = int(np.searchsorted(times, t, side="right")) - 1
        i = max(0, min(i, len(times) - 2)) if len(times) > 1 else 0
        s0 = self.states[i]
        if len(times) == 1 or t <= times[i] or i + 1 >= len(times):
            return s0
        s1 = self.states[i + 1]
        th = (t - times[i]) / (times[i + 1] - times[i])
        xi = (1.0 - th) * s0.X.xi.values + th * s1.X.xi.values
        Z = (1.0 - th) * s0.Z.values + th * s1.Z.values
        return LagrangianState(t=t, X=MonotoneMap(xi), Z=PeriodicProfile(Z))


def _forcing_term(cfg: SchemeConfig, xi: np.ndarray) -> np.ndarray:
    # F(xi) - lam^2 xi, evaluated outside the kernels
    return cfg.forcing.apply(xi) - (cfg.lam * cfg.lam) * xi


def predictor(state: LagrangianState, cfg: SchemeConfig, n: int):
    """Noisy linear update; returns (xi_hat, Z_next) as profiles."""
    xi = state.X.xi.values
    Z = state.Z.values
    noise = noise_row(cfg.noise, cfg.M, n)
    xihat, Znew = predictor_arrays(
        xi, Z, noise, cfg.h, cfg.lam, cfg.amplitude, _forcing_term(cfg, xi)
    )
    return PeriodicProfile(xihat), PeriodicProfile(Znew)


def corrector(xihat: PeriodicProfile, anchor: str = "mean-closest") -> MonotoneMap:
    """Rearrange the predicted positions identity + xi_hat."""
    values = xihat.values if isinstance(xihat, PeriodicProfile) else np.asarray(xihat, float)
    Y = identity_grid(values.size) + values
    return sort_periodic(Y, anchor=anchor)


def step(state: LagrangianState, cfg: SchemeConfig, n: int = 0) -> LagrangianState:
    """One predictor + corrector step; equals corrector(predictor(...)) bitwise."""
    if state.M != cfg.M:
        raise ConfigurationError(f"state has M={state.M}, config has M={cfg.M}")
    xi = state.X.xi.values
    Z = state.Z.values
    noise = noise_row(cfg.noise, cfg.M, n)
    xi_out, Z_out, w, lifts, phase = step_arrays(
        xi,
        Z,
        noise,
        identity_grid(cfg.M),
        cfg.h,
        cfg.lam,
        cfg.amplitude,
        _forcing_term(cfg, xi),
        ANCHOR_CODES[cfg.anchor],
    )
    return LagrangianState(
        t=state.t + cfg.h,
        X=MonotoneMap(xi_out, window_residues=w, window_lifts=lifts, phase=phase),
        Z=PeriodicProfile(Z_out),
    )


def run(cfg: SchemeConfig, init: Optional[LagrangianState] = None) -> Trajectory:
    """Advance ceil(T/h) steps from init (default: the rest state).

    Deterministic noise makes the whole trajectory a pure function of the
    configuration.  Non-finite values abort with a NumericalAbortError
    carrying the step index and the last good state.
    """
    if init is None:
        init = LagrangianState(
            t=0.0,
            X=MonotoneMap(np.zeros(cfg.M)),
            Z=PeriodicProfile(np.zeros(cfg.M)),
        )
    if init.M != cfg.M:
        raise ConfigurationError(f"initial state has M={init.M}, config has M={cfg.M}")

    states = [init]
    saved_steps = [0]
    N = cfg.steps
    if N == 0:
        return Trajectory(config=cfg, states=states, steps=saved_steps)

    grid = identity_grid(cfg.M)
    amp = cfg.amplitude
    anchor = ANCHOR_CODES[cfg.anchor]
    const_noise = noise_row(cfg.noise, cfg.M, 0) if cfg.noise.deterministic else None
    xi = init.X.xi.values.copy()
    Z = init.Z.values.copy()
    window = (None, None, None)

    for n in range(N):
        noise = const_noise if const_noise is not None else noise_row(cfg.noise, cfg.M, n)
        try:
            xi_new, Z_new, w, lifts, phase = step_arrays(
                xi, Z, noise, grid, cfg.h, cfg.lam, amp, _forcing_term(cfg, xi), anchor
            )
        except NumericalAbortError as err:
            raise NumericalAbortError(
                str(err), step=n, snapshot=_snapshot(n * cfg.h, xi, Z, window)
            ) from None
        if not np.all(np.isfinite(Z_new)):
            raise NumericalAbortError(
                "Z left the finite range", step=n, snapshot=_snapshot(n * cfg.h, xi, Z, window)
            )
        xi, Z = xi_new, Z_new
        window = (w, lifts, phase)
        if (n + 1) % cfg.save_stride == 0 or n + 1 == N:
            states.append(_snapshot((n + 1) * cfg.h, xi, Z, window))
            saved_steps.append(n + 1)
    return Trajectory(config=cfg, states=states, steps=saved_steps)


def _snapshot(t, xi, Z, window) -> LagrangianState:
    w, lifts, phase = window
    return LagrangianState(
        t=t,
        X=MonotoneMap(xi, window_residues=w, window_lifts=lifts, phase=phase),
        Z=PeriodicProfile(Z),
    )


def reconstruct_eulerian(state: LagrangianState, lam: float, J: int) -> EulerianField:
    """Density, velocity, and pseudo-inverse on J uniform x-cells.

    rho is the pushforward histogram scaled to a density; the velocity in
    an x-cell is the plain average of V_k = Z_k + lam*xi_k over the
    parcels the cell contains (all parcels weigh 1/M), zero where the
    cell is empty.
    """
    J = int(J)
    if J < 1:
        raise ConfigurationError(f"J={J} must be a positive cell count")
    r = state.X.window_residues()
    c = np.minimum(np.floor(r * J).astype(np.int64), J - 1)
    counts = np.bincount(c, minlength=J)
    V = state.Z.values + lam * state.X.xi.values
    sums = np.bincount(c, weights=V, minlength=J)
    empty = counts == 0
    v = np.divide(sums, counts, out=np.zeros(J, dtype=float), where=~empty)
    return EulerianField(
        J=J,
        x=cell_centers(J),
        rho=counts * (J / state.M),
        v=v,
        u=pseudo_inverse(state.X, J),
        empty=empty,
    )


def z_closed_form(traj: Trajectory, upto: Optional[int] = None) -> PeriodicProfile:
    """Z_n reconstructed from the xi history alone.

    Z_n = (1 - lam h)^n Z_0 + h sum_{m<n} (1 - lam h)^{n-1-m} (F(xi_m) - lam^2 xi_m):
    the slaved variable is an exponential discrete convolution of the
    forcing history.  Requires a trajectory recorded every step.
    """
    cfg = traj.config
    if cfg.save_stride != 1 or traj.steps != list(range(len(traj.states))):
        raise ConfigurationError("z_closed_form needs save_stride=1 (every step recorded)")
    n = len(traj.states) - 1 if upto is None else int(upto)
    if not 0 <= n < len(traj.states):
        raise ConfigurationError(f"step {n} not recorded")
    factor = 1.0 - cfg.lam * cfg.h
    Z = traj.states[0].Z.values * factor**n
    for m in range(n):
        xi_m = traj.states[m].X.xi.values
        Z = Z + cfg.h * factor ** (n - 1 - m) * _forcing_term(cfg, xi_m)
    return PeriodicProfile(Z)


_THETAS = ("neg-log", "tau-log-tau")


def theta_entropy(state_or_map, theta: str = "neg-log") -> float:
    """Discrete entropy Theta_M = (1/M) sum theta(M * gap_k) of the map.

    Gaps are consecutive position differences with the periodic +1 lift.
    Any negative gap (non-monotone input) returns +inf.  For "neg-log"
    (theta(tau) = -log tau) a flat gap also returns +inf; for
    "tau-log-tau" (theta(tau) = tau(log tau - 1)) flat cells contribute
    theta(0) = 0 by continuity.
    """
    if theta not in _THETAS:
        raise ConfigurationError(f"unknown entropy flavor {theta!r}")
    X = state_or_map.X if isinstance(state_or_map, LagrangianState) else state_or_map
    pos = X.window_positions()
    gaps = np.empty(pos.size)
    gaps[:-1] = np.diff(pos)
    gaps[-1] = pos[0] + 1.0 - pos[-1]
    if np.any(gaps < 0.0):
        return math.inf
    tau = pos.size * gaps
    if theta == "neg-log":
        if np.any(tau == 0.0):
            return math.inf
        return float(np.mean(-np.log(tau)))
    vals = np.zeros_like(tau)
    nz = tau > 0.0
    vals[nz] = tau[nz] * (np.log(tau[nz]) - 1.0)
    return float(np.mean(vals))


def aligned_cell_count(epsilon: float, h: float, M_target: int) -> int:
    """Nearest M to M_target with sqrt(2 eps h) * M an integer cell count.

    Generic parameters put the noise amplitude between grid cells,
    leaving the rest state only an O(1/M) approximate fixed point; this
    helper picks the closest compliant resolution instead.
    """
    amp = math.sqrt(2.0 * epsilon * h)
    if amp == 0.0:
        return max(2, int(M_target))
    m = max(1, round(amp * M_target))
    return max(2, round(m / amp))
