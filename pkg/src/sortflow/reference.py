"""Independent reference solvers for cross-validation.

Two oracles, deliberately built on different discretizations than the
particle scheme they check:

* ``HeatTarget`` / ``heat_exact``: the decoupled case (lam = 0, Z = 0,
  no forcing) reduces to the linear heat equation for the density, so
  the exact solution is a finite Fourier sum with mode m decaying like
  exp(-4 pi^2 m^2 eps t).  Everything downstream (cell averages, the
  integrated coordinate u, the material profile xi) is evaluated from
  the closed form, not from any grid.

* ``solve_coupled_parabolic``: the full system rewritten for the
  pseudo-inverse u(t, x), which satisfies a scalar advection-diffusion
  equation with drift b = Z(u) + lam (x - u), coupled to Z carried on
  the material grid.  Discretized IMEX: first-order upwind advection
  (explicit, CFL-guarded), implicit diffusion through a cyclic
  tridiagonal solve, explicit Euler for Z.  Monotone and first-order;
  robustness matters more here than order, since the scheme under test
  is O(sqrt(h)).

``material_residual`` closes the loop: it evaluates the material-form
equations by centered finite differences on any three consecutive time
levels, so either solver's output (or the particle scheme's, once
smoothed) can be checked directly against the PDE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .core import (
    ConfigurationError,
    EulerianField,
    ForcingSpec,
    InvalidInitialDataError,
    LagrangianState,
    MonotoneMap,
    NumericalAbortError,
    PeriodicProfile,
    cell_centers,
    lq_norm,
)

__all__ = [
    "EulerianField",
    "HeatTarget",
    "ReferenceSolution",
    "heat_exact",
    "solve_coupled_parabolic",
    "material_residual",
]

_TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# Spectral heat oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HeatTarget:
    """Exact heat-equation solution 1 + sum_m 2 Re(c_m e^{2 pi i m x}) e^{-4 pi^2 m^2 eps t}.

    ``modes[m-1]`` is the complex Fourier coefficient of mode m >= 1 of the
    initial density (mode 0 is fixed to 1); reality is enforced by using
    the conjugate pair, so a pure cosine A cos(2 pi m x) is modes[m-1] = A/2.

    The integrated coordinate u(t, x) = integral_0^x rho is available in
    closed form, which gives exact cell averages (averaging rho over a cell
    is differencing u) and, via Newton on u, the exact material profile.
    """

    epsilon: float
    modes: np.ndarray

    def __post_init__(self):
        modes = np.asarray(self.modes, dtype=complex).reshape(-1).copy()
        if modes.size == 0:
            raise ConfigurationError("at least one Fourier mode is required")
        if not np.all(np.isfinite(modes.view(float))):
            raise ConfigurationError("Fourier modes must be finite")
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0.0):
            raise ConfigurationError(f"epsilon={self.epsilon} must be finite and >= 0")
        modes.setflags(write=False)
        object.__setattr__(self, "modes", modes)
        # positivity of the initial density, probed on a grid well past Nyquist
        n = max(256, 16 * modes.size)
        if np.min(self.density(0.0, np.arange(n) / n)) <= 0.0:
            raise InvalidInitialDataError("initial density is not positive")

    @classmethod
    def from_cosine(cls, amplitude: float, epsilon: float, mode: int = 1) -> "HeatTarget":
        """Target for rho0 = 1 + amplitude * cos(2 pi mode x)."""
        modes = np.zeros(int(mode), dtype=complex)
        modes[int(mode) - 1] = 0.5 * amplitude
        return cls(epsilon=epsilon, modes=modes)

    @property
    def K(self) -> int:
        return int(self.modes.size)

    def _decayed(self, t: float) -> np.ndarray:
        m = np.arange(1, self.K + 1, dtype=float)
        return self.modes * np.exp(-4.0 * math.pi**2 * m * m * self.epsilon * t)

    def density(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        c = self._decayed(t)
        m = np.arange(1, self.K + 1, dtype=float)
        phases = np.exp(1j * _TWO_PI * np.multiply.outer(x, m))
        return 1.0 + 2.0 * np.real(phases @ c)

    def u(self, t: float, x) -> np.ndarray:
        """Integrated density: u(t, x) = x + sum_m 2 Re(c_m (e^{2 pi i m x} - 1) / (2 pi i m))."""
        x = np.asarray(x, dtype=float)
        c = self._decayed(t)
        m = np.arange(1, self.K + 1, dtype=float)
        phases = np.exp(1j * _TWO_PI * np.multiply.outer(x, m)) - 1.0
        return x + 2.0 * np.real(phases @ (c / (1j * _TWO_PI * m)))

    def cell_averages(self, t: float, J: int) -> np.ndarray:
        """Exact density averages over the J uniform cells: difference u at the faces."""
        J = int(J)
        faces = np.arange(J + 1) / J
        uf = self.u(t, faces)
        return J * np.diff(uf)

    def inverse(self, t: float, a) -> np.ndarray:
        """Solve u(t, X) = a by Newton (u' = rho is bounded away from 0)."""
        a = np.asarray(a, dtype=float)
        X = a.copy()
        for _ in range(60):
            res = self.u(t, X) - a
            if np.max(np.abs(res)) <= 1e-14:
                return X
            X = X - res / self.density(t, X)
        raise NumericalAbortError("Newton inversion of the heat target did not converge")

    def xi(self, t: float, M: int) -> np.ndarray:
        """Material profile sampled at cell centers: xi_k = X(a_k) - a_k."""
        a = cell_centers(int(M))
        return self.inverse(t, a) - a


def heat_exact(modes, t: float, epsilon: float, J: int) -> np.ndarray:
    """Pointwise exact heat density at the J cell centers.

    ``modes`` are the complex Fourier coefficients of modes 1..K of the
    initial density (see HeatTarget).  K must stay below the Nyquist mode
    of the requested grid.
    """
    J = int(J)
    if J < 2:
        raise ConfigurationError(f"J={J} must be at least 2")
    target = HeatTarget(epsilon=epsilon, modes=np.asarray(modes, dtype=complex))
    if target.K > J // 2 - 1:
        raise ConfigurationError(
            f"K={target.K} modes exceed the Nyquist limit J/2-1={J // 2 - 1} for J={J}"
        )
    return target.density(t, cell_centers(J))


# ---------------------------------------------------------------------------
# Coupled parabolic IMEX solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReferenceSolution:
    """Saved (u, Z) levels of one coupled-parabolic run.

    u lives on the x-grid (cell centers, strictly increasing in the lifted
    sense at every saved time), Z on the material a-grid of the same size.
    cfl_used is the largest advective Courant number h*max|b|/dx seen.
    """

    epsilon: float
    lam: float
    J: int
    h: float
    times: np.ndarray
    u: np.ndarray
    Z: np.ndarray
    cfl_used: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).copy()
        u = np.asarray(self.u, dtype=float).copy()
        Z = np.asarray(self.Z, dtype=float).copy()
        if u.shape != (times.size, self.J) or Z.shape != u.shape:
            raise ConfigurationError("times/u/Z shapes are inconsistent")
        if np.any(np.diff(times) <= 0.0):
            raise ConfigurationError("saved times must be strictly increasing")
        seam = u[:, 0] + 1.0 - u[:, -1]
        if np.any(np.diff(u, axis=1) <= 0.0) or np.any(seam <= 0.0):
            raise ConfigurationError("a saved u-field is not strictly increasing")
        for arr in (times, u, Z):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "Z", Z)

    @property
    def dx(self) -> float:
        return 1.0 / self.J

    @property
    def x(self) -> np.ndarray:
        return cell_centers(self.J)

    @property
    def a(self) -> np.ndarray:
        return cell_centers(self.J)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def _row_at(self, field: np.ndarray, t: float) -> np.ndarray:
        times = self.times
        if not times[0] - 1e-12 <= t <= times[-1] + 1e-12:
            raise ConfigurationError(
                f"t={t:g} outside the saved range [{times[0]:g}, {times[-1]:g}]"
            )
        i = int(np.searchsorted(times, t, side="right")) - 1
        i = max(0, min(i, times.size - 1))
        if i == times.size - 1 or t <= times[i]:
            return field[i].copy()
        th = (t - times[i]) / (times[i + 1] - times[i])
        return (1.0 - th) * field[i] + th * field[i + 1]

    def u_at(self, t: float) -> np.ndarray:
        return self._row_at(self.u, t)

    def Z_at(self, t: float) -> np.ndarray:
        return self._row_at(self.Z, t)

    def material_state(self, t: float) -> LagrangianState:
        """Map the saved fields at time t to a Lagrangian state on M = J cells.

        X(a) is the piecewise-linear inverse of u sampled at the a-grid
        centers; Z is already material.  The result feeds material_residual.
        """
        u = self.u_at(t)
        X = _invert_u(u, self.x, self.a)
        return LagrangianState(
            t=float(t),
            X=MonotoneMap(X - cell_centers(self.J)),
            Z=PeriodicProfile(self.Z_at(t)),
        )


def _invert_u(u: np.ndarray, x: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Piecewise-linear monotone inverse of the lifted u, evaluated at targets in [0,1)."""
    u_ext = np.concatenate((u - 1.0, u, u + 1.0))
    x_ext = np.concatenate((x - 1.0, x, x + 1.0))
    return np.interp(targets, u_ext, x_ext)


def _sample_on(values_or_func, grid: np.ndarray, what: str) -> np.ndarray:
    if callable(values_or_func):
        out = np.asarray([float(values_or_func(float(g))) for g in grid])
    else:
        out = np.asarray(values_or_func, dtype=float).reshape(-1).copy()
        if out.size != grid.size:
            raise ConfigurationError(
                f"{what} has {out.size} samples, expected {grid.size}"
            )
    if not np.all(np.isfinite(out)):
        raise InvalidInitialDataError(f"{what} contains non-finite values")
    return out


def solve_coupled_parabolic(
    u0: Union[Callable[[float], float], np.ndarray],
    Z0: Union[Callable[[float], float], np.ndarray],
    epsilon: float,
    lam: float,
    forcing: Optional[ForcingSpec],
    T: float,
    J: int,
    h_ref: float,
    save_stride: Optional[int] = None,
) -> ReferenceSolution:
    """IMEX integration of the pseudo-inverse system on J cells up to time T.

    Per step, in order: invert u for the material profile xi, step Z
    explicitly, form the drift b = Z(u) + lam (x - u), advect u - x by
    first-order upwind (explicit), diffuse implicitly through a cyclic
    tridiagonal solve.  The advective CFL h_ref <= 0.5 dx / max|b| is
    required at start (configuration error) and re-checked every step
    (numerical abort, since a growing Z can outrun any fixed step).
    Monotonicity of u is asserted after every step.

    u0 is given at the x-cell centers (callable or length-J array) and must
    be strictly increasing with unit periodic lift; Z0 likewise on the
    a-grid.  save_stride defaults to about 64 saved frames.
    """
    J = int(J)
    if J < 3:
        raise ConfigurationError(f"J={J} must be at least 3")
    if not (math.isfinite(h_ref) and h_ref > 0.0):
        raise ConfigurationError(f"h_ref={h_ref} must be positive and finite")
    if not (math.isfinite(T) and T >= 0.0):
        raise ConfigurationError(f"T={T} must be finite and >= 0")
    if not (math.isfinite(epsilon) and epsilon >= 0.0):
        raise ConfigurationError(f"epsilon={epsilon} must be finite and >= 0")
    if not (math.isfinite(lam) and lam >= 0.0):
        raise ConfigurationError(f"lambda={lam} must be finite and >= 0")
    if forcing is None:
        forcing = ForcingSpec.none()

    x = cell_centers(J)
    a = cell_centers(J)
    dx = 1.0 / J
    u = _sample_on(u0, x, "u0")
    Z = _sample_on(Z0, a, "Z0")
    gaps = np.diff(u)
    seam = u[0] + 1.0 - u[-1]
    if np.any(gaps <= 0.0) or seam <= 0.0:
        k = int(np.argmin(np.concatenate((gaps, [seam]))))
        raise InvalidInitialDataError(f"u0 is not strictly increasing at cell {k}")

    N = 0 if T == 0.0 else math.ceil((T / h_ref) * (1.0 - 1e-12))
    if save_stride is None:
        save_stride = max(1, N // 64)
    save_stride = int(save_stride)
    if save_stride < 1:
        raise ConfigurationError(f"save_stride={save_stride} must be >= 1")

    # constant-coefficient implicit diffusion matrix, factored once:
    # cyclic C = T + alpha w w^T with w = e_0 + e_{J-1}, alpha = -mu,
    # T tridiagonal SPD (diagonal bumped to 1+3mu at the two ends)
    mu = epsilon * h_ref * J * J
    if epsilon > 0.0:
        ab = np.zeros((2, J))
        ab[1, :] = 1.0 + 2.0 * mu
        ab[1, 0] = ab[1, -1] = 1.0 + 3.0 * mu
        ab[0, 1:] = -mu
        cb = cholesky_banded(ab)
        w = np.zeros(J)
        w[0] = w[-1] = 1.0
        q = cho_solve_banded((cb, False), w)
        alpha = -mu
        denom = 1.0 + alpha * (q[0] + q[-1])

        def diffuse(rhs: np.ndarray) -> np.ndarray:
            y = cho_solve_banded((cb, False), rhs)
            return y - (alpha * (y[0] + y[-1]) / denom) * q

    else:

        def diffuse(rhs: np.ndarray) -> np.ndarray:
            return rhs

    a_ext = np.concatenate((a - 1.0, a, a + 1.0))
    times = [0.0]
    u_saved = [u.copy()]
    Z_saved = [Z.copy()]
    cfl_used = 0.0

    for n in range(N):
        X_a = _invert_u(u, x, a)
        xi_a = X_a - a
        b = np.interp(np.mod(u, 1.0), a_ext, np.tile(Z, 3)) + lam * (x - u)
        courant = h_ref * float(np.max(np.abs(b))) / dx
        if courant > 0.5:
            msg = (
                f"advective CFL violated: h_ref*max|b|/dx = {courant:.3g} > 0.5 "
                f"(need h_ref <= {0.5 * dx / float(np.max(np.abs(b))):.3g})"
            )
            if n == 0:
                raise ConfigurationError(msg)
            raise NumericalAbortError(msg, step=n)
        cfl_used = max(cfl_used, courant)

        Z = Z + h_ref * (-lam * Z - lam * lam * xi_a + forcing.apply(xi_a))

        zeta = u - x
        back = (zeta - np.roll(zeta, 1)) * J
        fwd = (np.roll(zeta, -1) - zeta) * J
        grad = np.where(b > 0.0, back, fwd)
        zeta = diffuse(zeta - h_ref * b * (1.0 + grad))
        u = x + zeta

        gaps = np.diff(u)
        seam = u[0] + 1.0 - u[-1]
        if np.any(gaps <= 0.0) or seam <= 0.0:
            raise NumericalAbortError("reference u lost strict monotonicity", step=n)
        if not np.all(np.isfinite(u)) or not np.all(np.isfinite(Z)):
            raise NumericalAbortError("reference solution left the finite range", step=n)

        if (n + 1) % save_stride == 0 or n + 1 == N:
            times.append((n + 1) * h_ref)
            u_saved.append(u.copy())
            Z_saved.append(Z.copy())

    return ReferenceSolution(
        epsilon=epsilon,
        lam=lam,
        J=J,
        h=h_ref,
        times=np.asarray(times),
        u=np.asarray(u_saved),
        Z=np.asarray(Z_saved),
        cfl_used=cfl_used,
    )


# ---------------------------------------------------------------------------
# PDE residual in material form
# ---------------------------------------------------------------------------


def material_residual(
    states: Sequence[LagrangianState],
    epsilon: float,
    lam: float,
    forcing: Optional[ForcingSpec] = None,
) -> dict:
    """Centered-difference residuals of the material system on three time levels.

    For states at t - dt, t, t + dt (uniform spacing), evaluates

        R_xi = d_t xi + d_a(eps / d_a X) - Z - lam xi
        R_Z  = d_t Z + lam Z + lam^2 xi - F(xi)

    at the middle level, with the viscous flux eps / d_a X on the cell
    faces of the middle staircase (periodic lift across the seam).
    Returns mean-normalized L1 and sup norms of both residuals.
    """
    if len(states) != 3:
        raise ConfigurationError(f"need exactly 3 consecutive states, got {len(states)}")
    s0, s1, s2 = states
    if not (s0.M == s1.M == s2.M):
        raise ConfigurationError("states live on different grids")
    dt1 = s1.t - s0.t
    dt2 = s2.t - s1.t
    if dt1 <= 0.0 or dt2 <= 0.0 or abs(dt2 - dt1) > 1e-9 * max(dt1, dt2):
        raise ConfigurationError("states must be equally spaced in time")
    if forcing is None:
        forcing = ForcingSpec.none()
    dt = 0.5 * (dt1 + dt2)
    M = s1.M

    xi0, xi1, xi2 = (s.X.xi.values for s in states)
    Z0, Z1, Z2 = (s.Z.values for s in states)
    pos = s1.X.window_positions()
    gap = np.empty(M)
    gap[:-1] = np.diff(pos)
    gap[-1] = pos[0] + 1.0 - pos[-1]
    if np.any(gap <= 0.0):
        raise InvalidInitialDataError("middle state has a collapsed cell")
    # face flux eps/(d_a X) between k and k+1; divergence back at cell k
    flux = epsilon / (gap * M)
    div = (flux - np.roll(flux, 1)) * M

    R_xi = (xi2 - xi0) / (2.0 * dt) + div - Z1 - lam * xi1
    R_Z = (Z2 - Z0) / (2.0 * dt) + lam * Z1 + lam * lam * xi1 - forcing.apply(xi1)
    return {
        "xi_l1": lq_norm(R_xi, 1),
        "xi_linf": lq_norm(R_xi, math.inf),
        "z_l1": lq_norm(R_Z, 1),
        "z_linf": lq_norm(R_Z, math.inf),
    }
