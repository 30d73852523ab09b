"""Batch front-end: file-configured experiments with reproducible outputs.

Runs are described by an INI-style config (sections below), execute one
subcommand, and write a ``manifest.json`` with every resolved setting,
CSV/JSON result files, and a human-readable ``summary.txt`` into the
output directory.  Identical (config, seed) pairs produce byte-identical
result files.

Exit codes: 0 success, 2 config/validation error, 3 numerical failure.

Config layout (keys are validated; unknown keys are rejected by path)::

    [run]                          # subcommand, seed, out, threads
    [model]                        # kind, b, f, x_min, x_max, perturbation
    [grid]                         # n_x, K, L, T, n_t, max_step_ratio
    [geometry] / [stochastic] / [heat] / [ensemble] / [rhs] / [heatspace]

Subcommands: geometry-report, stochastic-check, heat-solve,
schauder-bench, picard-solve, heatspace-sample.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, NumericalError, PhiHeatError
from .fields import Field, Grid
from .geometry import PERIOD, PhiModel, Point, grigoryan_test, laplacian_coeffs, metric_eval
from .heatspace import REGIMES, hk_asymptotic_model, sample_regime_charts, volume_lift
from .holder import WeightedSpaceSpec
from .picard import PicardConfig, choose_constants, combined, estimate_lipschitz, picard_solve, verify_solution
from .schauder import (
    SQRT_T_VARIANT,
    T_ALPHA_HALF_VARIANT,
    EnsembleSpec,
    generate_ensemble,
    mapping_bound_check,
    time_weight_check,
)
from .solver import discretize, evolve, heat_convolve, mass_history

SUBCOMMANDS = (
    "geometry-report",
    "stochastic-check",
    "heat-solve",
    "schauder-bench",
    "picard-solve",
    "heatspace-sample",
)

# configparser lowercases keys, so the schema is all-lowercase.
_ALLOWED_KEYS = {
    "run": {"subcommand", "seed", "out", "threads"},
    "model": {"kind", "b", "f", "x_min", "x_max", "perturbation"},
    "grid": {"n_x", "k", "l", "t", "n_t", "max_step_ratio"},
    "geometry": {"n_points"},
    "stochastic": {"r_max", "n_radii", "n_samples"},
    "heat": {"bump_center", "bump_width", "horizon", "method"},
    "ensemble": {"n_functions", "roughness", "gamma", "alpha", "k", "variant", "norm_pairs", "refine"},
    "rhs": {"kind", "c", "q", "forcing_amplitude", "forcing_center", "forcing_width",
            "eta_trial", "opnorm", "tol", "max_iter", "lipschitz_pairs"},
    "heatspace": {"n_per_regime", "cutoff"},
}

_REQUIRED_SECTIONS = {
    "geometry-report": ("model",),
    "stochastic-check": ("model", "stochastic"),
    "heat-solve": ("model", "grid", "heat"),
    "schauder-bench": ("model", "grid", "ensemble"),
    "picard-solve": ("model", "grid", "rhs"),
    "heatspace-sample": ("model", "heatspace"),
}

_SEEDLESS = {"heat-solve"}


@dataclass
class RunConfig:
    """Validated, fully-resolved run description."""

    subcommand: str
    seed: int
    out_dir: Path
    threads: int
    sections: dict


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def parse_config(path: str | Path, out_override: str | None = None, threads_override: int | None = None) -> RunConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file {path} not found or unreadable")
    for section in parser.sections():
        if section not in _ALLOWED_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _ALLOWED_KEYS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
    if "run" not in parser or "subcommand" not in parser["run"]:
        raise ConfigError("missing required key run.subcommand")
    sub = parser["run"]["subcommand"].strip()
    if sub not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {sub!r}; choose from {', '.join(SUBCOMMANDS)}")
    for section in _REQUIRED_SECTIONS[sub]:
        if section not in parser:
            raise ConfigError(f"subcommand {sub} requires a [{section}] section")
    if "seed" in parser["run"]:
        seed = int(parser["run"]["seed"])
    elif sub in _SEEDLESS:
        seed = 0
    else:
        raise ConfigError(f"subcommand {sub} samples randomness: run.seed is mandatory")

    out = parser["run"].get("out", "phiheat-out")
    out = os.environ.get("PHIHEAT_OUT", out)
    if out_override:
        out = out_override
    threads = int(parser["run"].get("threads", "1"))
    if threads_override is not None:
        threads = threads_override

    sections = {s: dict(parser[s]) for s in parser.sections() if s != "run"}
    return RunConfig(subcommand=sub, seed=seed, out_dir=Path(out), threads=max(1, threads), sections=sections)


def _model_from(cfg: RunConfig) -> PhiModel:
    return PhiModel.from_config(cfg.sections["model"])


def _grid_from(cfg: RunConfig, model: PhiModel) -> Grid:
    g = cfg.sections["grid"]
    try:
        return Grid.build(
            model,
            n_x=int(g["n_x"]),
            K=int(g.get("k", "0")),
            L=int(g.get("l", "0")),
            T=float(g["t"]),
            n_t=int(g["n_t"]),
            max_step_ratio=float(g.get("max_step_ratio", "1.05")),
        )
    except KeyError as exc:
        raise ConfigError(f"grid section missing key {exc.args[0]!r}") from exc


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def _resolved_manifest(cfg: RunConfig, resolved: dict) -> str:
    return json.dumps(
        {
            "tool": "phi-heat",
            "version": __version__,
            "subcommand": cfg.subcommand,
            "seed": cfg.seed,
            "threads": cfg.threads,
            "out": str(cfg.out_dir),
            "resolved": resolved,
        },
        indent=2,
        sort_keys=True,
    )


# -- subcommand handlers -------------------------------------------------


def _run_geometry_report(cfg: RunConfig, out: Path) -> tuple[dict, list[str]]:
    model = _model_from(cfg)
    n_points = int(cfg.sections.get("geometry", {}).get("n_points", "50"))
    rng = np.random.default_rng(cfg.seed)
    xs = np.exp(rng.uniform(np.log(model.x_min), np.log(model.x_max), n_points))
    ys = rng.uniform(0, PERIOD, (n_points, model.b))
    zs = rng.uniform(0, PERIOD, (n_points, model.f))
    rows = ["x,sqrt_det,A_xx,B_x,min_eigenvalue"]
    for x, y, z in zip(xs, ys, zs):
        p = Point(x, y, z)
        met = metric_eval(model, p)
        co = laplacian_coeffs(model, p)
        mineig = float(np.min(np.linalg.eigvalsh(met.g)))
        rows.append(
            ",".join(_fmt(v) for v in (x, met.sqrt_det, co.A[0, 0], co.B[0], mineig))
        )
    _write(out / "metric_samples.csv", "\n".join(rows) + "\n")
    summary = [
        f"model: {model.kind} b={model.b} f={model.f} collar=[{model.x_min}, {model.x_max}]",
        f"sampled {n_points} collar points; metric positive definite at all of them",
    ]
    return {"geometry": {"n_points": n_points}, "model": model.to_config()}, summary


def _run_stochastic_check(cfg: RunConfig, out: Path) -> tuple[dict, list[str]]:
    model = _model_from(cfg)
    s = cfg.sections["stochastic"]
    r_max = float(s.get("r_max", "1000"))
    n_radii = int(s.get("n_radii", "200"))
    n_samples = int(s.get("n_samples", "8"))
    res = grigoryan_test(model, R_max=r_max, n_radii=n_radii, n_samples=n_samples, seed=cfg.seed)
    rows = ["R,volume,partial_integral"]
    for r, v, pi in zip(res.radii, res.volumes, res.partial_integrals):
        rows.append(f"{_fmt(r)},{_fmt(v)},{_fmt(pi)}")
    _write(out / "growth.csv", "\n".join(rows) + "\n")
    summary = [
        f"growth_exponent≈{res.growth_exponent:.1f}, verdict={res.verdict}",
        f"ladder to R={r_max:g} with {n_radii} radii; partial integral {res.partial_integrals[-1]:.3g}",
    ]
    resolved = {
        "model": model.to_config(),
        "stochastic": {"R_max": r_max, "n_radii": n_radii, "n_samples": n_samples},
    }
    return resolved, summary


def _run_heat_solve(cfg: RunConfig, out: Path) -> tuple[dict, list[str]]:
    model = _model_from(cfg)
    grid = _grid_from(cfg, model)
    h = cfg.sections["heat"]
    center = float(h.get("bump_center", "0.4"))
    width = float(h.get("bump_width", "0.08"))
    horizon = float(h["horizon"]) if "horizon" in h else grid.T
    method = h.get("method", "cn")
    u0 = np.zeros((grid.n_x, grid.n_modes), dtype=complex)
    m0 = grid.mode_index()[(0,) * (grid.b + grid.f)]
    u0[:, m0] = np.exp(-(((grid.x_nodes - center) / width) ** 2))
    op = discretize(model, grid)
    traj = evolve(op, u0, T=horizon, method=method)
    masses = mass_history(op, traj)
    drift = float(np.max(np.abs(masses - masses[0])) / abs(masses[0]))
    _write(out / "trajectory.csv", traj.to_csv())
    (out / "solution.bin").write_bytes(traj.to_binary())
    rows = ["t,mass,relative_drift"]
    for t, m in zip(traj.grid.t_nodes, masses):
        rows.append(f"{_fmt(t)},{_fmt(m)},{_fmt(abs(m - masses[0]) / abs(masses[0]))}")
    _write(out / "mass.csv", "\n".join(rows) + "\n")
    summary = [
        f"evolved Gaussian bump (center={center}, width={width}) to t={horizon:g} with {method}",
        f"max relative mass drift {drift:.3e}",
    ]
    resolved = {
        "model": model.to_config(),
        "grid": {"n_x": grid.n_x, "n_t": grid.n_t, "T": grid.T, "n_modes": grid.n_modes},
        "heat": {"bump_center": center, "bump_width": width, "horizon": horizon, "method": method},
    }
    return resolved, summary


def _run_schauder_bench(cfg: RunConfig, out: Path) -> tuple[dict, list[str]]:
    model = _model_from(cfg)
    grid = _grid_from(cfg, model)
    e = cfg.sections["ensemble"]
    spec = EnsembleSpec(
        n_functions=int(e.get("n_functions", "20")),
        roughness=float(e.get("roughness", "0.5")),
        seed=cfg.seed,
        gamma=float(e.get("gamma", "0")),
        k=int(e.get("k", "0")),
        alpha=float(e.get("alpha", "0.5")),
        norm_pairs=int(e.get("norm_pairs", "1000")),
    )
    variant = e.get("variant", "mapping")
    refine = e.get("refine", "false").lower() in ("1", "true", "yes")
    ens = generate_ensemble(spec, model, grid)
    op = discretize(model, grid)
    if variant == "mapping":
        in_spec = WeightedSpaceSpec(spec.k, spec.alpha, spec.gamma)
        out_spec = WeightedSpaceSpec(spec.k + 2, spec.alpha, spec.gamma)
        kwargs = {}
        if refine:
            fine_grid = grid.refined()
            kwargs = {
                "ensemble_fine": generate_ensemble(spec, model, fine_grid),
                "op_fine": discretize(model, fine_grid),
            }
        rep = mapping_bound_check(ens, in_spec, out_spec, op=op, threads=cfg.threads, **kwargs)
        summary = [f"mapping-bound max ratio {rep.max_ratio:.4g} over {len(rep.ratios)} members"]
        if rep.refinement_trend:
            summary.append(
                f"refinement trend: {rep.refinement_trend[0]:.4g} -> {rep.refinement_trend[1]:.4g}"
            )
    elif variant in ("sqrt-t", "t-alpha-half"):
        tag = SQRT_T_VARIANT if variant == "sqrt-t" else T_ALPHA_HALF_VARIANT
        rep = time_weight_check(ens, tag, op=op)
        summary = [f"time-weight variant {tag}: max ratio {rep.max_ratio:.4g}"]
        if rep.t_scaling_slope is not None:
            summary.append(f"median log-log slope {rep.t_scaling_slope:.3f}")
    else:
        raise ConfigError(f"unknown ensemble.variant {variant!r}")
    _write(out / "report.json", rep.to_json() + "\n")
    rows = ["member,ratio"]
    for i, r in enumerate(rep.ratios):
        rows.append(f"{i},{_fmt(r)}")
    _write(out / "ratios.csv", "\n".join(rows) + "\n")
    resolved = {
        "model": model.to_config(),
        "grid": {"n_x": grid.n_x, "n_t": grid.n_t, "T": grid.T, "n_modes": grid.n_modes},
        "ensemble": {
            "n_functions": spec.n_functions, "roughness": spec.roughness, "gamma": spec.gamma,
            "alpha": spec.alpha, "k": spec.k, "variant": variant, "norm_pairs": spec.norm_pairs,
            "refine": refine,
        },
    }
    return resolved, summary


def _run_picard_solve(cfg: RunConfig, out: Path) -> tuple[dict, list[str]]:
    model = _model_from(cfg)
    grid = _grid_from(cfg, model)
    r = cfg.sections["rhs"]
    c = float(r.get("c", "0.1"))
    q = float(r.get("q", "0.2"))
    amp = float(r.get("forcing_amplitude", "0.05"))
    fc = float(r.get("forcing_center", "0.4"))
    fw = float(r.get("forcing_width", "0.15"))
    eta_trial = float(r.get("eta_trial", "0.5"))
    tol = float(r.get("tol", "1e-6"))
    max_iter = int(r.get("max_iter", "40"))
    lip_pairs = int(r.get("lipschitz_pairs", "60"))

    ell = Field.zeros(grid, model)
    m0 = grid.mode_index()[(0,) * (grid.b + grid.f)]
    prof = np.exp(-(((grid.x_nodes - fc) / fw) ** 2))
    ell.values[:, m0, :] = amp * prof[:, None]
    rhs = combined(ell, c, q)

    if "opnorm" in r:
        opnorm = float(r["opnorm"])
    else:
        spec = EnsembleSpec(20, 0.5, seed=cfg.seed, norm_pairs=500)
        ens = generate_ensemble(spec, model, grid)
        opnorm = mapping_bound_check(
            ens, WeightedSpaceSpec(0, 0.5, 0.0), WeightedSpaceSpec(2, 0.5, 0.0), threads=cfg.threads
        ).max_ratio
    C_eta = estimate_lipschitz(
        rhs, model, grid, eta=eta_trial, n_pairs=lip_pairs, seed=cfg.seed, norm_pairs=500
    )
    eta_max, t_max = choose_constants(opnorm, C_eta)
    if grid.T > t_max:
        raise NumericalError(
            f"grid horizon {grid.T:g} exceeds the admissible T' = {t_max:.3g}; shorten the grid"
        )
    pc = PicardConfig(
        eta=min(eta_max, eta_trial), T_prime=grid.T, opnorm=opnorm,
        tol=tol, max_iter=max_iter, norm_seed=cfg.seed,
    )
    op = discretize(model, grid)
    res = picard_solve(rhs, pc, model, grid, op=op)
    report = verify_solution(res.solution, rhs, op)
    (out / "solution.bin").write_bytes(res.solution.to_binary())
    _write(out / "history.json", res.history_json() + "\n")
    summary = [
        f"picard fixed point: {len(res.diffs)} iterations, converged={res.converged}",
        f"fixed-point residual {res.residual:.3e}; strong residual {report.sup_residual:.3e}",
        f"constants: opnorm={opnorm:.4g} C_eta={C_eta:.4g} eta={pc.eta:.4g} T'={pc.T_prime:.4g}",
    ]
    if res.contraction_factors:
        summary.append(f"final contraction factor {res.contraction_factors[-1]:.3f}")
    resolved = {
        "model": model.to_config(),
        "grid": {"n_x": grid.n_x, "n_t": grid.n_t, "T": grid.T, "n_modes": grid.n_modes},
        "rhs": {
            "kind": "combined", "c": c, "q": q, "forcing_amplitude": amp,
            "forcing_center": fc, "forcing_width": fw, "eta_trial": eta_trial,
            "opnorm": opnorm, "C_eta": C_eta, "eta": pc.eta, "T_prime": pc.T_prime,
            "tol": tol, "max_iter": max_iter, "lipschitz_pairs": lip_pairs,
        },
    }
    return resolved, summary


def _run_heatspace_sample(cfg: RunConfig, out: Path) -> tuple[dict, list[str]]:
    model = _model_from(cfg)
    h = cfg.sections["heatspace"]
    n = int(h.get("n_per_regime", "1000"))
    cutoff = float(h.get("cutoff", "0.1"))
    rng = np.random.default_rng(cfg.seed)
    rows = ["regime,coord,index,value"]
    magnitude_rows = ["regime,index,magnitude,volume_density"]
    for regime in REGIMES:
        chart = sample_regime_charts(regime, n, rng, b=model.b, f=model.f, cutoff=cutoff)
        mags = hk_asymptotic_model(chart, model.m)
        if regime == "Interior":
            dens = np.full(n, np.nan)
        else:
            dens = volume_lift(chart, model)
        for key, val in chart.coords.items():
            arr = np.atleast_2d(np.asarray(val, dtype=float).T).T
            for i in range(min(n, arr.shape[0])):
                rows.append(f"{regime},{key},{i},{_fmt(float(np.ravel(arr[i])[0]))}")
        for i in range(n):
            d = dens[i] if np.ndim(dens) else dens
            mag = mags[i] if np.ndim(mags) else mags
            magnitude_rows.append(f"{regime},{i},{_fmt(float(mag))},{_fmt(float(d))}")
    _write(out / "charts.csv", "\n".join(rows) + "\n")
    _write(out / "magnitudes.csv", "\n".join(magnitude_rows) + "\n")
    summary = [f"sampled {n} chart points per regime at cutoff {cutoff}"]
    return {"model": model.to_config(), "heatspace": {"n_per_regime": n, "cutoff": cutoff}}, summary


_HANDLERS = {
    "geometry-report": _run_geometry_report,
    "stochastic-check": _run_stochastic_check,
    "heat-solve": _run_heat_solve,
    "schauder-bench": _run_schauder_bench,
    "picard-solve": _run_picard_solve,
    "heatspace-sample": _run_heatspace_sample,
}


def run(cfg: RunConfig) -> int:
    """Execute a validated run; writes artifacts and returns the exit code."""
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    resolved, summary = _HANDLERS[cfg.subcommand](cfg, cfg.out_dir)
    _write(cfg.out_dir / "manifest.json", _resolved_manifest(cfg, resolved) + "\n")
    _write(cfg.out_dir / "summary.txt", "\n".join(summary) + "\n")
    for line in summary:
        print(line)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="phi-heat",
        description="Batch experiments on model fibered-boundary heat equations.",
    )
    parser.add_argument("config", help="path to the INI run configuration")
    parser.add_argument("--out", help="output directory (overrides config and PHIHEAT_OUT)")
    parser.add_argument("--threads", type=int, help="cap for parallel sections")
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config, out_override=args.out, threads_override=args.threads)
        return run(cfg)
    except (ConfigError,) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except PhiHeatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
