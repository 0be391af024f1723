"""Command-line front end.

Subcommands: run, reference, compare, converge, fixedpoint, probe.
Configuration comes from flat `key = value` files layered under named
presets and command-line flags (defaults < preset < file < flags);
unknown keys are hard errors, never warnings.  All numeric CSV output is
written with 17 significant digits and LF endings so a rerun with the
same deterministic configuration is byte-identical.

Exit codes: 0 success, 1 numerical abort, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .analysis import (
    compare_to_reference,
    fixed_point_check,
    lipschitz_probe,
    run_heat_ladder,
    stability_probe,
    supnorm_probe,
    weak_consistency_residual,
)
from .core import (
    ConfigurationError,
    ForcingSpec,
    LagrangianState,
    MonotoneMap,
    NoiseSpec,
    NumericalAbortError,
    PeriodicProfile,
    SchemeConfig,
    cell_centers,
)
from .presets import HEAT_LADDER, PRESETS, build_initial_state, parse_init_token, reference_initial_data
from .reference import HeatTarget, solve_coupled_parabolic
from .scheme import reconstruct_eulerian, run

# the closed set of config-file keys; anything else is rejected by name
_FLOAT_KEYS = ("h", "epsilon", "lambda", "T", "beta")
_INT_KEYS = ("L", "M", "save_stride", "seed")
_STR_KEYS = ("noise", "forcing", "anchor", "init_xi", "init_Z", "preset")
_ALL_KEYS = _FLOAT_KEYS + _INT_KEYS + _STR_KEYS

_DEFAULTS = {
    "h": "1e-3",
    "epsilon": "0.05",
    "lambda": "0",
    "M": "200",
    "noise": "binary",
    "forcing": "none",
    "beta": "1",
    "anchor": "mean-closest",
    "T": "0.1",
    "save_stride": "1",
    "seed": "0",
    "init_xi": "zero",
    "init_Z": "zero",
}


# ---------------------------------------------------------------------------
# Configuration plumbing
# ---------------------------------------------------------------------------


def read_config_file(path: str) -> dict:
    """Parse flat `key = value` lines; '#' and ';' start comments."""
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    out = {}
    with open(path, "r") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].split(";", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(
                    f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}"
                )
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _ALL_KEYS:
                raise ConfigurationError(f"{path}:{lineno}: unknown config key {key!r}")
            if not value:
                raise ConfigurationError(f"{path}:{lineno}: empty value for {key!r}")
            out[key] = value
    return out


def effective_config(args) -> dict:
    """Layer defaults, preset, file, and flags into one string map."""
    file_map = read_config_file(args.config) if getattr(args, "config", None) else {}
    preset_name = getattr(args, "preset", None) or file_map.get("preset")
    merged = dict(_DEFAULTS)
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigurationError(
                f"unknown preset {preset_name!r} (have {', '.join(sorted(PRESETS))})"
            )
        merged.update(PRESETS[preset_name])
        merged["preset"] = preset_name
    merged.update({k: v for k, v in file_map.items() if k != "preset"})
    for key in _ALL_KEYS:
        if key == "preset":
            continue
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = str(val)
    return merged


def _as_float(strmap: dict, key: str) -> float:
    try:
        return float(strmap[key])
    except ValueError:
        raise ConfigurationError(f"{key}: expected a number, got {strmap[key]!r}") from None


def _as_int(strmap: dict, key: str) -> int:
    try:
        return int(strmap[key])
    except ValueError:
        raise ConfigurationError(f"{key}: expected an integer, got {strmap[key]!r}") from None


def build_scheme_config(strmap: dict) -> SchemeConfig:
    """Typed SchemeConfig from the merged string map (constraints enforced there)."""
    M = _as_int(strmap, "M") if "M" in strmap else None
    L = _as_int(strmap, "L") if "L" in strmap else None
    if M is None and L is None:
        raise ConfigurationError("one of M or L is required")
    if L is None:
        L = M // 2  # economy choice
    if M is None:
        M = 2 * L

    noise_kind = strmap["noise"]
    if noise_kind == "binary":
        noise = NoiseSpec.binary(L)
    elif noise_kind == "stochastic":
        noise = NoiseSpec.stochastic(L, _as_int(strmap, "seed"))
    else:
        raise ConfigurationError(f"noise: unknown variant {noise_kind!r} (binary, stochastic)")

    forcing_kind = strmap["forcing"]
    if forcing_kind == "none":
        forcing = ForcingSpec.none()
    elif forcing_kind == "poisson":
        forcing = ForcingSpec.poisson(_as_float(strmap, "beta"))
    else:
        raise ConfigurationError(f"forcing: unknown variant {forcing_kind!r} (none, poisson)")

    return SchemeConfig(
        h=_as_float(strmap, "h"),
        epsilon=_as_float(strmap, "epsilon"),
        lam=_as_float(strmap, "lambda"),
        M=M,
        noise=noise,
        forcing=forcing,
        anchor=strmap["anchor"],
        T=_as_float(strmap, "T"),
        save_stride=_as_int(strmap, "save_stride"),
    )


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def emit_csv(path: str, header, rows) -> None:
    """CSV with the exact header given, 17-significant-digit floats, LF endings."""
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def write_manifest(outdir: str, command: str, strmap: dict, files, timings: dict,
                   cfg: SchemeConfig | None = None, extra: dict | None = None) -> str:
    manifest = {
        "command": command,
        "config": dict(sorted(strmap.items())),
        "files": sorted(set(files) | {"manifest.json"}),
        "timings": timings,
        "versions": {
            "numpy": np.__version__,
            "python": sys.version.split()[0],
            "sortflow": __version__,
        },
    }
    try:
        import scipy

        manifest["versions"]["scipy"] = scipy.__version__
    except ImportError:  # pragma: no cover - scipy is a hard dependency
        pass
    if cfg is not None:
        amp_cells = cfg.amplitude * cfg.M
        manifest["derived"] = {
            "aligned": bool(abs(amp_cells - round(amp_cells)) <= 1e-12),
            "amplitude": cfg.amplitude,
            "amplitude_cells": amp_cells,
            "delta": 1.0 / cfg.M,
            "r": cfg.r,
            "steps": cfg.steps,
        }
    if extra:
        manifest.update(extra)
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w", newline="") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    return path


def _outdir(args) -> str:
    out = getattr(args, "out", None) or "."
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    strmap = effective_config(args)
    cfg = build_scheme_config(strmap)
    init = build_initial_state(cfg.M, cfg.epsilon, strmap["init_xi"], strmap["init_Z"])
    out = _outdir(args)
    J = int(args.J) if args.J is not None else max(2, cfg.M // 2)

    t0 = time.perf_counter()
    traj = run(cfg, init)
    t_run = time.perf_counter() - t0

    a = cell_centers(cfg.M)

    def state_rows():
        for n, s in zip(traj.steps, traj.states):
            xi = s.X.xi.values
            z = s.Z.values
            for k in range(cfg.M):
                yield (n, s.t, k, a[k], xi[k], z[k])

    def field_rows():
        for n, s in zip(traj.steps, traj.states):
            f = reconstruct_eulerian(s, cfg.lam, J)
            for j in range(J):
                yield (n, s.t, j, f.x[j], f.rho[j], f.v[j], f.u[j])

    emit_csv(os.path.join(out, "states.csv"), ("n", "t", "k", "a_k", "xi", "Z"), state_rows())
    emit_csv(os.path.join(out, "fields.csv"), ("n", "t", "j", "x_j", "rho", "v", "u"), field_rows())
    write_manifest(
        out, "run", strmap, ["states.csv", "fields.csv"],
        {"run_seconds": t_run, "total_seconds": time.perf_counter() - t0},
        cfg=cfg, extra={"J": J},
    )
    print(f"run: {cfg.steps} steps at M={cfg.M}, saved {len(traj.states)} states -> {out}")
    return 0


def cmd_reference(args) -> int:
    strmap = effective_config(args)
    J = int(args.J) if args.J is not None else _as_int(strmap, "M")
    h_ref = float(args.h_ref) if args.h_ref is not None else _as_float(strmap, "h")
    forcing_kind = strmap["forcing"]
    if forcing_kind == "none":
        forcing = ForcingSpec.none()
    elif forcing_kind == "poisson":
        forcing = ForcingSpec.poisson(_as_float(strmap, "beta"))
    else:
        raise ConfigurationError(f"forcing: unknown variant {forcing_kind!r} (none, poisson)")
    u0, z0 = reference_initial_data(strmap["init_xi"], strmap["init_Z"], J)
    out = _outdir(args)

    t0 = time.perf_counter()
    sol = solve_coupled_parabolic(
        u0, z0, _as_float(strmap, "epsilon"), _as_float(strmap, "lambda"),
        forcing, _as_float(strmap, "T"), J, h_ref,
    )
    t_solve = time.perf_counter() - t0

    x = sol.x

    def rows():
        for i, t in enumerate(sol.times):
            for j in range(J):
                yield (t, j, x[j], sol.u[i, j], sol.Z[i, j])

    emit_csv(os.path.join(out, "reference.csv"), ("t", "j", "x_j", "u", "Z"), rows())
    write_manifest(
        out, "reference", strmap, ["reference.csv"],
        {"solve_seconds": t_solve},
        extra={"J": J, "h_ref": h_ref, "cfl_used": sol.cfl_used},
    )
    print(f"reference: {len(sol.times)} frames at J={J} -> {out}")
    return 0


def _auto_heat_target(cfg: SchemeConfig, strmap: dict):
    """Exact-solution reference when the run is a decoupled heat case."""
    if cfg.lam != 0.0 or cfg.forcing.variant != "none":
        return None
    if parse_init_token(strmap["init_Z"], "init_Z")[0] != "zero":
        return None
    kind, amp, _ = parse_init_token(strmap["init_xi"], "init_xi")
    if kind == "zero":
        return HeatTarget(epsilon=cfg.epsilon, modes=np.zeros(1, dtype=complex))
    if kind == "rho-cos":
        return HeatTarget.from_cosine(amp, cfg.epsilon)
    return None


def cmd_compare(args) -> int:
    strmap = effective_config(args)
    cfg = build_scheme_config(strmap)
    init = build_initial_state(cfg.M, cfg.epsilon, strmap["init_xi"], strmap["init_Z"])
    out = _outdir(args)

    t0 = time.perf_counter()
    traj = run(cfg, init)
    target = _auto_heat_target(cfg, strmap) if args.against in ("auto", "heat") else None
    if args.against == "heat" and target is None:
        raise ConfigurationError(
            "compare --against heat needs lambda=0, forcing=none, init_Z=zero, "
            "and init_xi of kind zero or rho-cos"
        )
    extra = {}
    if target is None:
        J = int(args.J) if args.J is not None else 2 * cfg.M
        h_ref = float(args.h_ref) if args.h_ref is not None else cfg.h / 4.0
        u0, z0 = reference_initial_data(strmap["init_xi"], strmap["init_Z"], J)
        target = solve_coupled_parabolic(
            u0, z0, cfg.epsilon, cfg.lam, cfg.forcing, cfg.T, J, h_ref
        )
        extra = {"J": J, "h_ref": h_ref, "against": "finite-difference"}
    else:
        extra = {"against": "heat-exact"}
    errors = compare_to_reference(traj, target, cfg.T, norms=("l1", "l2", "linf"))

    rows = []
    for key in sorted(errors):
        field, norm = key.rsplit("_", 1)
        rows.append((field, norm, errors[key]))
    emit_csv(os.path.join(out, "compare.csv"), ("field", "norm", "error"), rows)
    write_manifest(
        out, "compare", strmap, ["compare.csv"],
        {"total_seconds": time.perf_counter() - t0}, cfg=cfg, extra=extra,
    )
    print(f"compare ({extra['against']}): u_l1 = {errors['u_l1']:.6g} -> {out}")
    return 0


def cmd_converge(args) -> int:
    strmap = effective_config(args)
    hs = HEAT_LADDER["hs"]
    if args.hs is not None:
        try:
            hs = tuple(float(tok) for tok in args.hs.split(","))
        except ValueError:
            raise ConfigurationError(f"--hs: expected comma-separated numbers, got {args.hs!r}") from None
    ratio = float(args.ratio) if args.ratio is not None else HEAT_LADDER["ratio"]
    kind, amp, _ = parse_init_token(strmap["init_xi"], "init_xi")
    amplitude = amp if kind == "rho-cos" else HEAT_LADDER["amplitude"]
    out = _outdir(args)

    t0 = time.perf_counter()
    report = run_heat_ladder(
        hs=hs,
        ratio=ratio,
        epsilon=_as_float(strmap, "epsilon"),
        amplitude=amplitude,
        T=_as_float(strmap, "T"),
        anchor=strmap["anchor"],
        workers=args.workers,
    )
    order = report.orders.get("rho_l1", float("nan"))

    rows = [
        (
            i,
            report.hs[i],
            report.rs[i],
            report.Ms[i],
            report.errors["rho_l1"][i],
            report.errors["u_l1"][i],
            report.errors["xi_l1"][i],
            order,
            report.seconds[i],
        )
        for i in range(len(report.hs))
    ]
    emit_csv(
        os.path.join(out, "ladder.csv"),
        ("level", "h", "r", "M", "err_rho_L1", "err_u_L1", "err_xi_L1", "order_est", "seconds"),
        rows,
    )
    write_manifest(
        out, "converge", strmap, ["ladder.csv"],
        {"total_seconds": time.perf_counter() - t0},
        extra={"orders": report.orders, "J": report.J},
    )
    print(f"converge: {len(report.hs)} levels, estimated L1 density order {order:.3f} -> {out}")
    return 0


def cmd_fixedpoint(args) -> int:
    strmap = effective_config(args)
    h = _as_float(strmap, "h")
    epsilon = _as_float(strmap, "epsilon")
    M = _as_int(strmap, "M")
    if args.steps is not None:
        steps = int(args.steps)
    else:
        T = _as_float(strmap, "T")
        steps = max(1, int(math.ceil((T / h) * (1.0 - 1e-12))))
    out = _outdir(args)

    t0 = time.perf_counter()
    result = fixed_point_check(epsilon, h, M, steps)
    cfg = SchemeConfig(
        h=h, epsilon=epsilon, lam=0.0, M=M,
        noise=NoiseSpec.binary(M // 2), T=steps * h, save_stride=1,
    )
    traj = run(cfg)

    def rows():
        for n, s in zip(traj.steps, traj.states):
            yield (
                n,
                s.t,
                float(np.max(np.abs(s.X.xi.values))),
                float(np.max(np.abs(s.Z.values))),
            )

    emit_csv(os.path.join(out, "fixedpoint.csv"), ("n", "t", "max_abs_xi", "max_abs_Z"), rows())
    write_manifest(
        out, "fixedpoint", strmap, ["fixedpoint.csv"],
        {"total_seconds": time.perf_counter() - t0}, cfg=cfg,
        extra={"result": {k: (float(v) if isinstance(v, float) else v) for k, v in result.items()}},
    )
    verdict = "exact" if result["exact"] else f"drift {result['max_drift']:.3e}"
    print(
        f"fixedpoint: {verdict} over {steps} steps "
        f"(amplitude {result['amplitude_cells']:.6g} cells, aligned={str(result['aligned']).lower()})"
    )
    return 0


_PROBE_OMEGAS = (1.0 / 64.0, 1.0 / 16.0, 1.0 / 4.0)
_PROBE_EPSILONS = (0.01, 0.05, 0.2)


def cmd_probe(args) -> int:
    strmap = effective_config(args)
    if args.kind in ("supnorm", "weak"):
        strmap["save_stride"] = "1"  # these probes need every step
    cfg = build_scheme_config(strmap)
    init = build_initial_state(cfg.M, cfg.epsilon, strmap["init_xi"], strmap["init_Z"])
    out = _outdir(args)
    t0 = time.perf_counter()

    if args.kind == "supnorm":
        traj = run(cfg, init)
        res = supnorm_probe(traj)
        rows = []
        for i, t in enumerate(res["times"]):
            factor = res["factors"][i - 1] if i > 0 else float("nan")
            rows.append((traj.steps[i], t, res["norms"][i], factor, res["envelope"][i]))
        header = ("n", "t", "norm_inf", "factor", "envelope")
        summary = f"max norm/envelope ratio {res['max_ratio']:.6g}"
    elif args.kind == "lipschitz":
        traj = run(cfg, init)
        res = lipschitz_probe(traj, _PROBE_OMEGAS)
        rows = []
        for i, t in enumerate(res["times"]):
            for j, w in enumerate(res["omegas"]):
                rows.append((traj.steps[i], t, w, res["modulus"][i, j], res["envelope"][i, j]))
        header = ("n", "t", "omega", "modulus", "envelope")
        summary = f"envelope satisfied: {str(res['satisfied']).lower()}"
    elif args.kind == "stability":
        a = cell_centers(cfg.M)
        xi_b = init.X.xi.values + 0.02 * np.sin(4.0 * math.pi * a)
        init_b = LagrangianState(t=0.0, X=MonotoneMap(xi_b), Z=PeriodicProfile(init.Z.values))
        res = stability_probe(cfg, init, init_b, q=1, epsilons=_PROBE_EPSILONS)
        rows = [(eps, ratio) for eps, ratio in sorted(res["per_epsilon"].items())]
        header = ("epsilon", "ratio")
        summary = f"ratio at epsilon={cfg.epsilon:g}: {res['ratio']:.6g}"
    elif args.kind == "weak":
        traj = run(cfg, init)
        res = weak_consistency_residual(traj)
        rows = [(g, res[g]) for g in sorted(res)]
        header = ("g", "max_residual")
        summary = "max residual " + f"{max(res.values()):.6g}"
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigurationError(f"unknown probe kind {args.kind!r}")

    emit_csv(os.path.join(out, "probe.csv"), header, rows)
    write_manifest(
        out, f"probe:{args.kind}", strmap, ["probe.csv"],
        {"total_seconds": time.perf_counter() - t0}, cfg=cfg,
    )
    print(f"probe {args.kind}: {summary} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--preset", help="named preset: " + ", ".join(sorted(PRESETS)))
    p.add_argument("--out", help="output directory (default .)")
    for key in _FLOAT_KEYS + _INT_KEYS:
        p.add_argument(f"--{key}", type=str, default=None, dest=key,
                       help=f"override config key {key}")
    p.add_argument("--noise", choices=("binary", "stochastic"), dest="noise")
    p.add_argument("--forcing", choices=("none", "poisson"), dest="forcing")
    p.add_argument("--anchor", choices=("mean-closest", "zero-phase", "l2-input"),
                   dest="anchor")
    p.add_argument("--init-xi", dest="init_xi", help="initial displacement token")
    p.add_argument("--init-Z", dest="init_Z", help="initial Z token")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sortflow",
        description="Sorting-based Lagrangian scheme for 1D isothermal viscous flow",
    )
    parser.add_argument("--version", action="version", version=f"sortflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="advance the scheme, emit states.csv and fields.csv")
    _add_config_flags(p)
    p.add_argument("--J", type=int, default=None, help="x-cells for fields.csv (default M/2)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("reference", help="run the finite-difference reference solver")
    _add_config_flags(p)
    p.add_argument("--J", type=int, default=None, help="reference grid cells (default M)")
    p.add_argument("--h-ref", dest="h_ref", type=float, default=None,
                   help="reference step (default h)")
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("compare", help="scheme vs reference errors at time T")
    _add_config_flags(p)
    p.add_argument("--against", choices=("auto", "heat", "fd"), default="auto",
                   help="reference: exact heat solution or finite differences")
    p.add_argument("--J", type=int, default=None, help="fd reference cells (default 2M)")
    p.add_argument("--h-ref", dest="h_ref", type=float, default=None,
                   help="fd reference step (default h/4)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("converge", help="refinement ladder against the exact heat solution")
    _add_config_flags(p)
    p.add_argument("--hs", help="comma-separated ladder steps (default "
                   + ",".join(f"{h:g}" for h in HEAT_LADDER["hs"]) + ")")
    p.add_argument("--ratio", type=float, default=None, help="r/h (default 10)")
    p.add_argument("--workers", type=int, default=None, help="parallel ladder levels")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("fixedpoint", help="check that the rest state survives the noise")
    _add_config_flags(p)
    p.add_argument("--steps", type=int, default=None, help="steps to run (default T/h)")
    p.set_defaults(func=cmd_fixedpoint)

    p = sub.add_parser("probe", help="structural estimates on one run")
    _add_config_flags(p)
    p.add_argument("--kind", choices=("supnorm", "lipschitz", "stability", "weak"),
                   required=True)
    p.set_defaults(func=cmd_probe)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalAbortError as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return 1
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
