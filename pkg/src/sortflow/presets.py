"""Named configurations and the small grammar for initial-data tokens.

A token is a short space-separated phrase in a config value:

    zero            rest
    const C         uniform translate (xi) or constant profile (Z)
    sin A [m]       A sin(2 pi m a)
    cos A [m]       A cos(2 pi m a)
    rho-cos A       material sample of the density 1 + A cos(2 pi x)
    u-sin A         material sample of the map with inverse u0 = x + A sin(2 pi x)

The first four are evaluated pointwise at cell centers; the last two
invert a smooth strictly-increasing u0 with Newton, so the sampled
staircase matches the named Eulerian datum rather than a displacement
formula.  rho-cos and u-sin describe maps, not profiles, and are
rejected for Z.
"""

from __future__ import annotations

import math

import numpy as np

from .core import (
    ConfigurationError,
    LagrangianState,
    MonotoneMap,
    PeriodicProfile,
    cell_centers,
)
from .reference import HeatTarget

__all__ = ["PRESETS", "HEAT_LADDER", "parse_init_token", "build_initial_state",
           "reference_initial_data"]

# h = 2^-12 written exactly; the fixed-point preset is bit-level sensitive
PRESETS = {
    "heat": {
        "h": "1e-3",
        "epsilon": "0.05",
        "lambda": "0",
        "L": "100",
        "M": "200",
        "noise": "binary",
        "forcing": "none",
        "anchor": "mean-closest",
        "T": "0.1",
        "save_stride": "1",
        "init_xi": "rho-cos 0.5",
        "init_Z": "zero",
    },
    "fixedpoint": {
        "h": "0.000244140625",
        "epsilon": "0.5",
        "lambda": "0",
        "L": "32",
        "M": "64",
        "noise": "binary",
        "forcing": "none",
        "anchor": "mean-closest",
        "T": "1",
        "save_stride": "1",
        "init_xi": "zero",
        "init_Z": "zero",
    },
    "nsp": {
        "h": "2.5e-4",
        "epsilon": "0.05",
        "lambda": "1",
        "L": "400",
        "M": "800",
        "noise": "binary",
        "forcing": "poisson",
        "beta": "1",
        "anchor": "mean-closest",
        "T": "0.5",
        "save_stride": "10",
        "init_xi": "u-sin 0.05",
        "init_Z": "zero",
    },
}

# the refinement ladder behind the heat preset and `converge`
HEAT_LADDER = {
    "hs": (4e-3, 1e-3, 2.5e-4),
    "ratio": 10.0,
    "epsilon": 0.05,
    "amplitude": 0.5,
    "T": 0.1,
}

_KINDS = ("zero", "const", "sin", "cos", "rho-cos", "u-sin")


def parse_init_token(token: str, key: str = "init") -> tuple:
    """Parse an initial-data phrase into (kind, amplitude, mode)."""
    parts = str(token).split()
    if not parts:
        raise ConfigurationError(f"{key}: empty initial-data token")
    kind = parts[0]
    if kind not in _KINDS:
        raise ConfigurationError(
            f"{key}: unknown initial-data kind {kind!r} (expected one of {', '.join(_KINDS)})"
        )
    if kind == "zero":
        if len(parts) != 1:
            raise ConfigurationError(f"{key}: 'zero' takes no arguments")
        return ("zero", 0.0, 0)
    if kind in ("const", "rho-cos", "u-sin"):
        if len(parts) != 2:
            raise ConfigurationError(f"{key}: {kind!r} takes exactly one number")
        try:
            return (kind, float(parts[1]), 0)
        except ValueError:
            raise ConfigurationError(f"{key}: bad number {parts[1]!r}") from None
    # sin / cos, optional integer mode
    if len(parts) not in (2, 3):
        raise ConfigurationError(f"{key}: {kind!r} takes an amplitude and optional mode")
    try:
        amp = float(parts[1])
    except ValueError:
        raise ConfigurationError(f"{key}: bad amplitude {parts[1]!r}") from None
    mode = 1
    if len(parts) == 3:
        try:
            mode = int(parts[2])
        except ValueError:
            raise ConfigurationError(f"{key}: bad mode {parts[2]!r}") from None
        if mode < 1:
            raise ConfigurationError(f"{key}: mode must be >= 1, got {mode}")
    return (kind, amp, mode)


def _wave(kind: str, amp: float, mode: int, a: np.ndarray) -> np.ndarray:
    theta = 2.0 * math.pi * mode * a
    return amp * (np.sin(theta) if kind == "sin" else np.cos(theta))


def _invert_u_sin(amp: float, targets: np.ndarray) -> np.ndarray:
    """Newton-solve u0(X) = a for u0(x) = x + amp sin(2 pi x)."""
    if abs(amp) * 2.0 * math.pi >= 1.0:
        raise ConfigurationError(
            f"u-sin amplitude {amp!r} makes u0 non-monotone (need |A| < 1/(2 pi))"
        )
    X = targets.copy()
    for _ in range(60):
        res = X + amp * np.sin(2.0 * math.pi * X) - targets
        if np.max(np.abs(res)) <= 1e-14:
            return X
        X = X - res / (1.0 + 2.0 * math.pi * amp * np.cos(2.0 * math.pi * X))
    raise ConfigurationError("u-sin inversion did not converge")


def _xi_values(token: tuple, M: int, epsilon: float) -> np.ndarray:
    kind, amp, mode = token
    a = cell_centers(M)
    if kind == "zero":
        return np.zeros(M)
    if kind == "const":
        return np.full(M, amp)
    if kind in ("sin", "cos"):
        return _wave(kind, amp, mode, a)
    if kind == "rho-cos":
        return HeatTarget.from_cosine(amp, epsilon).inverse(0.0, a) - a
    return _invert_u_sin(amp, a) - a  # u-sin


def _z_values(token: tuple, M: int, key: str) -> np.ndarray:
    kind, amp, mode = token
    if kind in ("rho-cos", "u-sin"):
        raise ConfigurationError(f"{key}: {kind!r} describes a map, not a Z profile")
    a = cell_centers(M)
    if kind == "zero":
        return np.zeros(M)
    if kind == "const":
        return np.full(M, amp)
    return _wave(kind, amp, mode, a)


def build_initial_state(M: int, epsilon: float, init_xi: str = "zero",
                        init_Z: str = "zero") -> LagrangianState:
    """Initial Lagrangian state on M cells from two tokens."""
    xi = _xi_values(parse_init_token(init_xi, "init_xi"), int(M), epsilon)
    z = _z_values(parse_init_token(init_Z, "init_Z"), int(M), "init_Z")
    return LagrangianState(t=0.0, X=MonotoneMap(xi), Z=PeriodicProfile(z))


def reference_initial_data(init_xi: str, init_Z: str, J: int):
    """The same named data as (u0, Z0) arrays for the parabolic solver.

    u0 is produced analytically where the token names an Eulerian object
    (u-sin, rho-cos, zero, const) and by dense monotone interpolation of
    the sampled map otherwise.
    """
    J = int(J)
    kind, amp, mode = parse_init_token(init_xi, "init_xi")
    x = cell_centers(J)
    if kind == "zero":
        u0 = x.copy()
    elif kind == "const":
        u0 = x - amp
    elif kind == "u-sin":
        u0 = x + amp * np.sin(2.0 * math.pi * x)
    elif kind == "rho-cos":
        u0 = x + (amp / (2.0 * math.pi)) * np.sin(2.0 * math.pi * x)
    else:
        # xi given as a wave: u is the inverse of X(a) = a + xi(a)
        n = 16 * J
        a_fine = np.arange(-n, 2 * n) / n
        X_fine = a_fine + _wave(kind, amp, mode, a_fine)
        if np.any(np.diff(X_fine) <= 0.0):
            raise ConfigurationError(
                f"init_xi: {kind} {amp:g} makes the map non-monotone"
            )
        u0 = np.interp(x, X_fine, a_fine)
    z0 = _z_values(parse_init_token(init_Z, "init_Z"), J, "init_Z")
    return u0, z0
