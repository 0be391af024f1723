"""Shared primitives: profiles, monotone maps, noise, forcing, configuration.

Everything downstream (rearrangement, time stepping, reference solvers,
analysis) works with the handful of value types defined here.

=============================================================================
 Geometry conventions
=============================================================================

The spatial domain is the unit circle.  A profile with M cells assigns one
value to each label interval [k/M, (k+1)/M).  The staircase map carried by
the scheme is

    X(k) = k/M + xi[k mod M],      X(k + M) = X(k) + 1,

i.e. cell values are attached to the *left* endpoints k/M, and the map
extends bi-infinitely with period-1 lifts.  Smooth initial data, by
contrast, is sampled at cell centers a_k = (k + 1/2)/M, which represents a
C^2 function to second order in 1/M.  Both conventions are load-bearing:
tests pin them.

All types are immutable after construction and safe to share across
threads; the functions in this module are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "SortflowError",
    "ConfigurationError",
    "InvalidInitialDataError",
    "NumericalAbortError",
    "PeriodicProfile",
    "MonotoneMap",
    "NoiseSpec",
    "ForcingSpec",
    "SchemeConfig",
    "LagrangianState",
    "EulerianField",
    "identity_grid",
    "cell_centers",
    "noise_value",
    "noise_row",
    "lq_norm",
    "pair_norm",
    "modulus_of_continuity",
    "sample_initial_data",
    "c_star",
]


# =============================================================================
# Errors
# =============================================================================


class SortflowError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(SortflowError):
    """A parameter combination violates a documented constraint."""


class InvalidInitialDataError(ConfigurationError):
    """Initial data whose sampled staircase map is not strictly increasing."""


class NumericalAbortError(SortflowError):
    """A run left the finite/monotone regime and was stopped.

    Carries the step index and, when available, a snapshot of the last
    good state so the failure can be inspected.
    """

    def __init__(self, message: str, step: int | None = None, snapshot=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
        self.snapshot = snapshot


# =============================================================================
# Grids
# =============================================================================


def identity_grid(M: int) -> np.ndarray:
    """Left cell endpoints k/M, k = 0..M-1.

    Computed by division (not by multiplying with a precomputed 1/M) so the
    values are correctly rounded; the fixed-point tests rely on dyadic
    grids being exact.
    """
    return np.arange(M, dtype=float) / M


def cell_centers(M: int) -> np.ndarray:
    """Cell centers a_k = (k + 1/2)/M used for sampling smooth data."""
    return (np.arange(M, dtype=float) + 0.5) / M


# =============================================================================
# Profiles and monotone maps
# =============================================================================


class PeriodicProfile:
    """M real values on the uniform cells of the unit circle.

    values[k] is the constant on [k/M, (k+1)/M).  Indexing wraps, so
    ``p[k + M] == p[k]`` for any integer (or integer array) k.
    """

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.array(values, dtype=float, copy=True)
        if arr.ndim != 1:
            raise ConfigurationError("profile values must be one-dimensional")
        if arr.size < 2:
            raise ConfigurationError("profile needs M >= 2 cells")
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError("profile values must be finite")
        arr.flags.writeable = False
        self.values = arr

    @property
    def M(self) -> int:
        return self.values.size

    def __len__(self) -> int:
        return self.values.size

    def __getitem__(self, k):
        return self.values[np.asarray(k) % self.M]

    def mean(self) -> float:
        return float(np.mean(self.values))

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"PeriodicProfile(M={self.M}, values={self.values!r})"


class MonotoneMap:
    """Staircase map X = identity + xi, non-decreasing, with X(k+M) = X(k)+1.

    The public accessor follows the left-endpoint convention

        X(k) = k/M + xi[k mod M] + floor(k/M),

    and construction fails unless one period of X is non-decreasing and the
    periodic seam satisfies X(0) + 1 >= X(M-1).

    Maps produced by the rearrangement additionally carry the *exact window*
    (residues w_k in [0,1) and integer lifts l_k with X_k = w_k + l_k) so
    that residue multisets and repeated rearrangement are preserved bitwise
    rather than merely to rounding.  ``positions()`` always evaluates the
    public formula; ``window_residues()``/``window_positions()`` prefer the
    exact storage when present.
    """

    __slots__ = ("xi", "phase", "_w", "_l")

    def __init__(self, xi, *, window_residues=None, window_lifts=None, phase=None):
        self.xi = xi if isinstance(xi, PeriodicProfile) else PeriodicProfile(xi)
        self.phase = phase
        if (window_residues is None) != (window_lifts is None):
            raise ConfigurationError("window residues and lifts come as a pair")
        if window_residues is not None:
            w = np.array(window_residues, dtype=float, copy=True)
            l = np.array(window_lifts, dtype=np.int64, copy=True)
            if w.shape != (self.M,) or l.shape != (self.M,):
                raise ConfigurationError("window arrays must have length M")
            w.flags.writeable = False
            l.flags.writeable = False
            self._w = w
            self._l = l
        else:
            self._w = None
            self._l = None
        pos = self.window_positions()
        if np.any(np.diff(pos) < 0.0):
            k = int(np.argmax(np.diff(pos) < 0.0))
            raise ConfigurationError(f"map not non-decreasing at cell {k}")
        if pos[0] + 1.0 < pos[-1]:
            raise ConfigurationError("map violates the periodic seam X(0)+1 >= X(M-1)")

    @property
    def M(self) -> int:
        return self.xi.M

    @property
    def has_exact_window(self) -> bool:
        return self._w is not None

    def positions(self) -> np.ndarray:
        """One period of X by the public formula k/M + xi[k]."""
        return identity_grid(self.M) + self.xi.values

    def window_positions(self) -> np.ndarray:
        """One period of X, from the exact window when available."""
        if self._w is not None:
            return self._w + self._l
        return self.positions()

    def window_residues(self) -> np.ndarray:
        """Fractional parts X_k mod 1, bitwise-exact for rearranged maps."""
        if self._w is not None:
            return self._w.copy()
        from .kernels import residues_of  # local import to avoid a cycle

        return residues_of(self.positions())

    def window_lifts(self) -> np.ndarray:
        if self._l is not None:
            return self._l.copy()
        pos = self.positions()
        return np.floor(pos).astype(np.int64)

    def value(self, k):
        """X(k) for any integer or integer array k (bi-infinite extension)."""
        k = np.asarray(k, dtype=np.int64)
        lift, rem = np.divmod(k, self.M)
        out = self.positions()[rem] + lift
        return float(out) if out.ndim == 0 else out

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"MonotoneMap(M={self.M}, phase={self.phase})"


# =============================================================================
# Noise
# =============================================================================

_NOISE_VARIANTS = ("binary", "samples", "stochastic")


@dataclass(frozen=True)
class NoiseSpec:
    """Mean-zero, unit-variance noise pattern N(a/r) with r = 1/L.

    variant "binary":      N = -1 on the first half of each noise period,
                           +1 on the second half.
    variant "samples":     an explicit staircase of S values per noise
                           period (validated to mean 0, variance 1).
    variant "stochastic":  fresh Gaussian draws per step from a
                           counter-based generator keyed by (seed, step),
                           so runs are reproducible and order-independent.
    """

    variant: str
    L: int
    samples: Optional[tuple] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.variant not in _NOISE_VARIANTS:
            raise ConfigurationError(f"unknown noise variant {self.variant!r}")
        if int(self.L) != self.L or self.L < 1:
            raise ConfigurationError("noise frequency L must be a positive integer")
        object.__setattr__(self, "L", int(self.L))
        if self.variant == "samples":
            if not self.samples:
                raise ConfigurationError("samples noise needs a value list")
            vals = np.asarray(self.samples, dtype=float)
            if not np.all(np.isfinite(vals)):
                raise ConfigurationError("noise samples must be finite")
            mean = float(np.mean(vals))
            var = float(np.mean(vals**2) - mean**2)
            if abs(mean) > 1e-12 or abs(var - 1.0) > 1e-12:
                raise ConfigurationError(
                    f"noise samples need mean 0 and variance 1, got {mean:g}, {var:g}"
                )
            object.__setattr__(self, "samples", tuple(float(v) for v in vals))
        if self.variant == "stochastic":
            if self.seed is None or int(self.seed) < 0:
                raise ConfigurationError("stochastic noise needs a seed >= 0")
            object.__setattr__(self, "seed", int(self.seed))

    @property
    def deterministic(self) -> bool:
        return self.variant != "stochastic"

    @staticmethod
    def binary(L: int) -> "NoiseSpec":
        return NoiseSpec("binary", L)

    @staticmethod
    def from_samples(L: int, values: Sequence[float]) -> "NoiseSpec":
        return NoiseSpec("samples", L, samples=tuple(values))

    @staticmethod
    def stochastic(L: int, seed: int) -> "NoiseSpec":
        return NoiseSpec("stochastic", L, seed=seed)


def _require_binary_alignment(spec: NoiseSpec, M: int) -> None:
    if M % (2 * spec.L) != 0:
        raise ConfigurationError(
            f"M={M} must be a multiple of 2L={2 * spec.L} for binary noise"
        )


def noise_row(spec: NoiseSpec, M: int, step: int = 0) -> np.ndarray:
    """All M noise values for one step.

    Deterministic variants evaluate N(a_k/r) at cell centers with pure
    integer arithmetic, so the +-1 pattern carries no rounding; they do not
    depend on the step index.
    """
    k = np.arange(M, dtype=np.int64)
    if spec.variant == "binary":
        _require_binary_alignment(spec, M)
        # floor(2 L k / M) mod 2 == 0 on the first half of each noise period
        half = (2 * spec.L * k) // M % 2
        return np.where(half == 0, -1.0, 1.0)
    if spec.variant == "samples":
        S = len(spec.samples)
        idx = (S * spec.L * (2 * k + 1)) // (2 * M) % S
        return np.asarray(spec.samples, dtype=float)[idx]
    gen = np.random.Generator(np.random.Philox(key=[spec.seed, step]))
    return gen.standard_normal(M)


def noise_value(spec: NoiseSpec, k: int, M: int, step: int = 0) -> float:
    """Single noise value for cell k at the given step."""
    if not 0 <= k < M:
        raise ConfigurationError(f"cell index {k} outside [0, {M})")
    if spec.variant == "binary":
        _require_binary_alignment(spec, M)
        return -1.0 if (2 * spec.L * k) // M % 2 == 0 else 1.0
    if spec.variant == "samples":
        S = len(spec.samples)
        return spec.samples[(S * spec.L * (2 * k + 1)) // (2 * M) % S]
    return float(noise_row(spec, M, step)[k])


# =============================================================================
# Forcing
# =============================================================================

_FORCING_VARIANTS = ("none", "poisson", "tabulated")


@dataclass(frozen=True)
class ForcingSpec:
    """Forcing term F acting on xi, with F(0) = 0 and a Lipschitz bound.

    "none"       F = 0.
    "poisson"    F(y) = y / beta, the self-consistent potential force.
    "tabulated"  an arbitrary callable; the declared Lipschitz constant is
                 validated against finite-difference slopes on a sample.
    """

    variant: str
    beta: Optional[float] = None
    func: Optional[Callable] = None
    lipschitz: float = 0.0

    def __post_init__(self):
        if self.variant not in _FORCING_VARIANTS:
            raise ConfigurationError(f"unknown forcing variant {self.variant!r}")
        if self.variant == "poisson":
            if self.beta is None or self.beta == 0.0 or not math.isfinite(self.beta):
                raise ConfigurationError("poisson forcing needs a nonzero beta")
            object.__setattr__(self, "lipschitz", 1.0 / abs(self.beta))
        elif self.variant == "tabulated":
            if self.func is None:
                raise ConfigurationError("tabulated forcing needs a callable")
            if self.lipschitz < 0 or not math.isfinite(self.lipschitz):
                raise ConfigurationError("tabulated forcing needs a finite Lipschitz bound")
            y0 = float(np.asarray(self.func(np.zeros(1)))[0])
            if abs(y0) > 1e-12:
                raise ConfigurationError(f"forcing must satisfy F(0)=0, got {y0:g}")
            y = np.linspace(-2.0, 2.0, 401)
            fy = np.asarray(self.func(y), dtype=float)
            slopes = np.abs(np.diff(fy) / np.diff(y))
            worst = float(np.max(slopes))
            if worst > self.lipschitz * (1.0 + 1e-9) + 1e-12:
                raise ConfigurationError(
                    f"declared Lipschitz constant {self.lipschitz:g} below "
                    f"observed slope {worst:g}"
                )
        else:
            object.__setattr__(self, "lipschitz", 0.0)

    def apply(self, y: np.ndarray) -> np.ndarray:
        """Evaluate F elementwise."""
        if self.variant == "none":
            return np.zeros_like(y)
        if self.variant == "poisson":
            return y / self.beta
        return np.asarray(self.func(y), dtype=float)

    @staticmethod
    def none() -> "ForcingSpec":
        return ForcingSpec("none")

    @staticmethod
    def poisson(beta: float) -> "ForcingSpec":
        return ForcingSpec("poisson", beta=beta)

    @staticmethod
    def tabulated(func: Callable, lipschitz: float) -> "ForcingSpec":
        return ForcingSpec("tabulated", func=func, lipschitz=lipschitz)


# =============================================================================
# Configuration and states
# =============================================================================


@dataclass(frozen=True)
class SchemeConfig:
    """Everything one run of the scheme needs.

    h            time step
    epsilon      viscosity / noise level, >= 0 (amplitude is sqrt(2 eps h))
    lam          pressure scale, >= 0, with lam*h < 1
    M            label cells (multiple of 2L for binary noise)
    noise        NoiseSpec (carries L = 1/r)
    forcing      ForcingSpec
    anchor       phase policy for the rearrangement
    T            time horizon
    save_stride  record every this-many steps (the final state is always kept)
    """

    h: float
    epsilon: float
    lam: float
    M: int
    noise: NoiseSpec
    forcing: ForcingSpec = field(default_factory=ForcingSpec.none)
    anchor: str = "mean-closest"
    T: float = 0.0
    save_stride: int = 1

    def __post_init__(self):
        from .kernels import ANCHOR_CODES  # local import to avoid a cycle

        if not (self.h > 0 and math.isfinite(self.h)):
            raise ConfigurationError("h must be positive and finite")
        if self.epsilon < 0 or not math.isfinite(self.epsilon):
            raise ConfigurationError("epsilon must be >= 0")
        if self.lam < 0 or not math.isfinite(self.lam):
            raise ConfigurationError("lambda must be >= 0")
        if self.lam * self.h >= 1.0:
            raise ConfigurationError(
                f"lambda*h = {self.lam * self.h:g} must stay below 1"
            )
        if int(self.M) != self.M or self.M < 2:
            raise ConfigurationError("M must be an integer >= 2")
        object.__setattr__(self, "M", int(self.M))
        if self.noise.variant == "binary":
            _require_binary_alignment(self.noise, self.M)
        if self.anchor not in ANCHOR_CODES:
            raise ConfigurationError(f"unknown anchor policy {self.anchor!r}")
        if self.T < 0 or not math.isfinite(self.T):
            raise ConfigurationError("T must be >= 0")
        if int(self.save_stride) != self.save_stride or self.save_stride < 1:
            raise ConfigurationError("save_stride must be a positive integer")
        object.__setattr__(self, "save_stride", int(self.save_stride))

    @property
    def L(self) -> int:
        return self.noise.L

    @property
    def r(self) -> float:
        return 1.0 / self.noise.L

    @property
    def amplitude(self) -> float:
        """Noise amplitude sqrt(2 epsilon h)."""
        return math.sqrt(2.0 * self.epsilon * self.h)

    @property
    def steps(self) -> int:
        """ceil(T/h), with a relative guard against '0.1/2.5e-4' artifacts."""
        if self.T == 0.0:
            return 0
        return int(math.ceil((self.T / self.h) * (1.0 - 1e-12)))


@dataclass(frozen=True)
class LagrangianState:
    """One snapshot (t, X, Z) of the scheme."""

    t: float
    X: MonotoneMap
    Z: PeriodicProfile

    def __post_init__(self):
        if self.X.M != self.Z.M:
            raise ConfigurationError(
                f"X and Z disagree on M: {self.X.M} vs {self.Z.M}"
            )

    @property
    def M(self) -> int:
        return self.X.M

    @property
    def xi(self) -> PeriodicProfile:
        return self.X.xi


@dataclass(frozen=True)
class EulerianField:
    """Density, velocity, and pseudo-inverse on a uniform x-grid.

    empty[j] flags x-cells containing no parcel; v is 0 there by
    convention (no mass, no momentum).
    """

    J: int
    x: np.ndarray
    rho: np.ndarray
    v: np.ndarray
    u: np.ndarray
    empty: np.ndarray

    def __post_init__(self):
        if np.any(self.rho < 0):
            raise ConfigurationError("density must be nonnegative")
        total = float(np.mean(self.rho))
        if abs(total - 1.0) > 1e-10:
            raise ConfigurationError(f"density must integrate to 1, got {total!r}")
        du = np.diff(self.u)
        if np.any(du < -1e-14) or self.u[0] + 1.0 < self.u[-1] - 1e-14:
            raise ConfigurationError("pseudo-inverse must be non-decreasing")


# =============================================================================
# Norms and moduli
# =============================================================================


def _values_of(p) -> np.ndarray:
    return p.values if isinstance(p, PeriodicProfile) else np.asarray(p, dtype=float)


def lq_norm(p, q) -> float:
    """Normalized l^q norm: (sum |v_k|^q / M)^(1/q); max |v_k| for q = inf."""
    v = _values_of(p)
    if q in ("inf", np.inf, math.inf):
        return float(np.max(np.abs(v)))
    q = float(q)
    if q == 1.0:
        return float(np.mean(np.abs(v)))
    if q == 2.0:
        return float(math.sqrt(np.mean(v * v)))
    return float(np.mean(np.abs(v) ** q) ** (1.0 / q))


def pair_norm(a, b, q) -> float:
    """Norm of a state pair (xi, Z): max of the two for q = inf, sum otherwise."""
    if q in ("inf", np.inf, math.inf):
        return max(lq_norm(a, q), lq_norm(b, q))
    return lq_norm(a, q) + lq_norm(b, q)


def modulus_of_continuity(p, omega: float) -> float:
    """sup_k |p[k + round(omega*M)] - p[k]| with periodic wrap.

    Profiles are piecewise constant, so the shift is rounded to whole
    cells; sub-cell shifts carry no information.
    """
    if not 0.0 <= omega <= 1.0:
        raise ConfigurationError("omega must lie in [0, 1]")
    v = _values_of(p)
    shift = int(round(omega * v.size)) % v.size
    if shift == 0:
        return 0.0
    return float(np.max(np.abs(np.roll(v, -shift) - v)))


def c_star(lam: float, ell_F: float = 0.0) -> float:
    """Per-step amplification rate max(lam + 1, lam^2 + ell_F).

    The predictor satisfies ||(xihat - noise, Z')||_inf <=
    (1 + c_star*h) ||(xi, Z)||_inf exactly, by the triangle inequality.
    """
    return max(lam + 1.0, lam * lam + ell_F)


# =============================================================================
# Initial data
# =============================================================================


def _sample(f, a: np.ndarray) -> np.ndarray:
    if f is None:
        return np.zeros_like(a)
    if callable(f):
        return np.broadcast_to(np.asarray(f(a), dtype=float), a.shape).copy()
    return np.full_like(a, float(f))


def sample_initial_data(xi0, M: int, lam: float = 0.0, Z0=None, V0=None) -> LagrangianState:
    """Sample smooth 1-periodic initial data onto an M-cell state at t = 0.

    Args:
        xi0: displacement, as a callable of the label a, a constant, or None.
        M: cell count.
        lam: pressure scale, used only to convert V0 into Z0 = V0 - lam*xi0.
        Z0: slaved profile (exclusive with V0).
        V0: velocity profile; stored as Z0 = V0 - lam*xi0.

    Sampling happens at cell centers a_k = (k+1/2)/M.  The sampled map
    k/M + xi0(a_k) must be strictly increasing, seam included; data
    violating that is rejected.
    """
    if Z0 is not None and V0 is not None:
        raise ConfigurationError("give Z0 or V0, not both")
    a = cell_centers(M)
    xi = _sample(xi0, a)
    if V0 is not None:
        z = _sample(V0, a) - lam * xi
    else:
        z = _sample(Z0, a)
    X0 = identity_grid(M) + xi
    gaps = np.diff(X0)
    if np.any(gaps <= 0.0) or X0[0] + 1.0 <= X0[-1]:
        bad = int(np.argmax(gaps <= 0.0)) if np.any(gaps <= 0.0) else M - 1
        raise InvalidInitialDataError(
            f"sampled map not strictly increasing near cell {bad}"
        )
    return LagrangianState(t=0.0, X=MonotoneMap(xi), Z=PeriodicProfile(z))
