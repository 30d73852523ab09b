"""Empirical mapping bounds for the heat convolution between Hölder spaces.

The convolution smooths by two frame derivatives; here that is probed by
applying it to ensembles of rough unit-norm fields and measuring sampled
norm ratios.  All reported operator norms are lower bounds: acceptance is
"bounded and stable under refinement", not convergence to a constant.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DomainError
from .fields import Field, Grid
from .geometry import PhiModel
from .holder import PairSampler, WeightedSpaceSpec, sup_norm_phi, weighted_holder_norm
from .solver import HeatOperator, discretize, heat_convolve

__all__ = [
    "EnsembleSpec",
    "Ensemble",
    "MappingReport",
    "generate_ensemble",
    "mapping_bound_check",
    "time_weight_check",
    "SQRT_T_VARIANT",
    "T_ALPHA_HALF_VARIANT",
]

SQRT_T_VARIANT = "SqrtT_kPlus1"
T_ALPHA_HALF_VARIANT = "TalphaHalf_C2"

_LEVELS = 5
_BUMPS_PER_LEVEL = 3
_TIME_HARMONICS = 6


@dataclass(frozen=True)
class EnsembleSpec:
    """Recipe for a reproducible ensemble of rough test fields."""

    n_functions: int
    roughness: float
    seed: int
    gamma: float = 0.0
    k: int = 0
    alpha: float = 0.5
    norm_pairs: int = 1200

    def __post_init__(self):
        if self.n_functions < 20:
            raise ConfigError("ensembles need at least 20 members")
        if not (0.0 < self.roughness < 1.0):
            raise ConfigError("roughness must lie in (0, 1)")
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError("alpha must lie in (0, 1)")

    def member_sampler(self, index: int) -> PairSampler:
        return PairSampler(self.norm_pairs, seed=self.seed * 100_003 + 7 * index + 1)


@dataclass
class Ensemble:
    """Generated members plus the spec that produced them."""

    spec: EnsembleSpec
    members: list
    model: PhiModel
    grid: Grid

    def __iter__(self):
        return iter(self.members)

    def __len__(self):
        return len(self.members)

    def stripped(self) -> "Ensemble":
        """The same members with the boundary weight removed (exactly)."""
        spec = replace(self.spec, gamma=0.0)
        return Ensemble(spec=spec, members=[m.stripped() for m in self.members], model=self.model, grid=self.grid)


def _draw_member_params(rng, spec: EnsembleSpec, b: int, f: int, K: int, L: int):
    """Grid-independent random parameters of one member."""
    params = []
    for level in range(_LEVELS):
        for _ in range(_BUMPS_PER_LEVEL):
            params.append(
                {
                    "amp": 2.0 ** (-level * spec.roughness) * rng.normal(),
                    "center": rng.uniform(0.15, 0.85),          # position in log-x units
                    "width": 0.35 * 2.0**-level,
                    "k": rng.integers(-min(K, 2**level), min(K, 2**level) + 1, b),
                    "l": rng.integers(-min(L, 2**level), min(L, 2**level) + 1, f),
                    "phase": rng.uniform(0.0, 2.0 * math.pi),
                    "t_amp": rng.normal(size=_TIME_HARMONICS),
                    "t_phase": rng.uniform(0.0, 2.0 * math.pi, _TIME_HARMONICS),
                }
            )
    return params


def _build_member(params, spec: EnsembleSpec, grid: Grid, model: PhiModel) -> Field:
    logx = np.log(grid.x_nodes)
    span = logx[-1] - logx[0]
    tt = grid.t_nodes / max(grid.T, 1e-300)
    idx = grid.mode_index()
    values = np.zeros((grid.n_x, grid.n_modes, grid.n_t), dtype=np.complex128)
    for p in params:
        profile = np.exp(-(((logx - (logx[0] + p["center"] * span)) / (p["width"] * span)) ** 2))
        tfac = np.zeros_like(tt)
        for h in range(_TIME_HARMONICS):
            tfac += 2.0 ** (-h * spec.roughness) * np.cos(2.0**h * math.pi * tt + p["t_phase"][h])
        tfac *= p["t_amp"][0] * 0.5 + 1.0
        mode = tuple(np.concatenate([p["k"], p["l"]]).tolist())
        block = p["amp"] * profile[:, None] * tfac[None, :]
        mplus = idx[mode]
        mminus = idx[tuple(-v for v in mode)]
        values[:, mplus, :] += 0.5 * np.exp(1j * p["phase"]) * block
        values[:, mminus, :] += 0.5 * np.exp(-1j * p["phase"]) * block
    return Field(values, grid, model, 0.0)


def generate_ensemble(spec: EnsembleSpec, model: PhiModel, grid: Grid) -> Ensemble:
    """Multiscale random fields of unit sampled Hölder norm, weighted.

    Parameters are drawn independently of the grid resolution, so the same
    seed reproduces the same functions on a refined grid.  Members are
    normalized by their sampled (k, alpha)-norm before the boundary weight
    is attached (the weight is an isometry, so members keep unit weighted
    norm); the weight is stored in factored form, hence ensembles at
    different weights differ exactly by the weight profile.
    """
    rng = np.random.default_rng(spec.seed)
    K = int(np.max(np.abs(grid.mode_k))) if grid.b else 0
    L = int(np.max(np.abs(grid.mode_l))) if grid.f else 0
    members = []
    for i in range(spec.n_functions):
        params = _draw_member_params(rng, spec, grid.b, grid.f, K, L)
        fld = _build_member(params, spec, grid, model)
        est = weighted_holder_norm(fld, WeightedSpaceSpec(spec.k, spec.alpha, 0.0), spec.member_sampler(i))
        if est.total > 0.0:
            fld = (1.0 / est.total) * fld
        fld.gamma = spec.gamma
        members.append(fld)
    return Ensemble(spec=spec, members=members, model=model, grid=grid)


@dataclass
class MappingReport:
    """Ratio statistics for one mapping-property check."""

    ratios: np.ndarray
    max_ratio: float
    refinement_trend: tuple | None = None
    t_scaling_slope: float | None = None
    slopes: np.ndarray | None = None
    split_space: np.ndarray | None = None
    split_time: np.ndarray | None = None
    split_sup: np.ndarray | None = None
    excluded: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            return v

        payload = {k: clean(v) for k, v in self.__dict__.items()}
        return json.dumps(payload, indent=2, sort_keys=True)


def _member_ratio(args):
    u, sampler, in_spec, out_spec, op, conjugation = args
    v = u.stripped()
    in_est = weighted_holder_norm(u, in_spec, sampler)
    if in_est.total == 0.0:
        return None
    conv = heat_convolve(op, v, gamma=conjugation)
    out_field = Field(conv.values, u.grid, u.model, out_spec.gamma)
    out_est = weighted_holder_norm(out_field, out_spec, sampler)
    return (
        out_est.total / in_est.total,
        out_est.seminorm_space / in_est.total,
        out_est.seminorm_time / in_est.total,
        out_est.sup_norm / in_est.total,
    )


def mapping_bound_check(
    ensemble: Ensemble,
    in_spec: WeightedSpaceSpec,
    out_spec: WeightedSpaceSpec,
    op: HeatOperator | None = None,
    ensemble_fine: "Ensemble | None" = None,
    op_fine: HeatOperator | None = None,
    threads: int = 1,
    conjugation: float | None = None,
) -> MappingReport:
    """Sampled operator-norm evidence for the two-derivative gain.

    Strips the weight off each member, applies the conjugated convolution
    x^(-gamma) o conv o x^gamma, measures the weighted output norm against
    the input norm, and reports the ratio distribution along with the
    split space-difference / time-difference / sup quotients.  Zero-norm
    members are excluded with a note.  A refined companion ensemble fills
    ``refinement_trend`` with (coarse, fine) max ratios.

    ``conjugation`` defaults to the weight of ``in_spec``; passing it
    explicitly lets the same conjugated operator be measured in 0-weight
    norms on stripped fields, which must reproduce the weighted ratios
    exactly (the weighted norms are isometric images).
    """
    if out_spec.gamma != in_spec.gamma:
        raise ConfigError("mapping check compares spaces at one weight")
    conj = in_spec.gamma if conjugation is None else float(conjugation)
    op = op if op is not None else discretize(ensemble.model, ensemble.grid)
    jobs = [
        (u, ensemble.spec.member_sampler(i), in_spec, out_spec, op, conj)
        for i, u in enumerate(ensemble.members)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_member_ratio, jobs))
    else:
        results = [_member_ratio(j) for j in jobs]
    excluded = [i for i, r in enumerate(results) if r is None]
    kept = [r for r in results if r is not None]
    if not kept:
        raise DomainError("every ensemble member has zero norm")
    arr = np.array(kept)
    report = MappingReport(
        ratios=arr[:, 0],
        max_ratio=float(arr[:, 0].max()),
        split_space=arr[:, 1],
        split_time=arr[:, 2],
        split_sup=arr[:, 3],
        excluded=excluded,
        meta={
            "n_x": ensemble.grid.n_x,
            "n_t": ensemble.grid.n_t,
            "n_modes": ensemble.grid.n_modes,
            "gamma": in_spec.gamma,
            "conjugation": conj,
            "k_in": in_spec.k,
            "k_out": out_spec.k,
            "alpha": in_spec.alpha,
        },
    )
    if ensemble_fine is not None:
        fine = mapping_bound_check(
            ensemble_fine, in_spec, out_spec, op=op_fine, threads=threads, conjugation=conj
        )
        report.refinement_trend = (report.max_ratio, fine.max_ratio)
    return report


def _time_ladder(grid: Grid, n_points: int = 8) -> np.ndarray:
    lo = 10.0 * grid.dt
    if lo >= grid.T:
        raise ConfigError("time grid too short for a scaling ladder")
    ts = np.geomspace(lo, grid.T, n_points)
    idx = sorted({int(round(t / grid.dt)) for t in ts})
    return np.array([i for i in idx if i >= 1])


def time_weight_check(
    ensemble: Ensemble,
    variant: str,
    op: HeatOperator | None = None,
) -> MappingReport:
    """Short-time weight gain of the convolution.

    ``SqrtT_kPlus1``: sup over a log ladder of t^(-1/2) times the
    (k+1, alpha)-norm of the convolution restricted to [0, t] must stay
    bounded.  ``TalphaHalf_C2``: log-log slope of the order-(k+2)
    derivative-sup norm on [0, t] against t; the short-time gain predicts
    slope at least alpha/2.
    """
    if variant not in (SQRT_T_VARIANT, T_ALPHA_HALF_VARIANT):
        raise ConfigError(f"unknown variant {variant!r}")
    op = op if op is not None else discretize(ensemble.model, ensemble.grid)
    spec = ensemble.spec
    ladder = _time_ladder(ensemble.grid)
    ratios = []
    slopes = []
    excluded = []
    for i, u in enumerate(ensemble.members):
        v = u.stripped()
        sampler = spec.member_sampler(i)
        in_est = weighted_holder_norm(u, WeightedSpaceSpec(spec.k, spec.alpha, spec.gamma), sampler)
        if in_est.total == 0.0:
            excluded.append(i)
            continue
        conv = heat_convolve(op, v, gamma=spec.gamma)
        if variant == SQRT_T_VARIANT:
            vals = []
            for n in ladder:
                t = ensemble.grid.t_nodes[n]
                cut = conv.time_restricted(n + 1)
                est = weighted_holder_norm(cut, WeightedSpaceSpec(spec.k + 1, spec.alpha, 0.0), sampler)
                vals.append(est.total / math.sqrt(t))
            ratios.append(max(vals) / in_est.total)
        else:
            norms = []
            for n in ladder:
                cut = conv.time_restricted(n + 1)
                norms.append(sup_norm_phi(cut, spec.k + 2))
            ts = ensemble.grid.t_nodes[ladder]
            slope = float(np.polyfit(np.log(ts), np.log(np.maximum(norms, 1e-300)), 1)[0])
            slopes.append(slope)
            ratios.append(norms[-1] / in_est.total)
    if not ratios:
        raise DomainError("every ensemble member has zero norm")
    report = MappingReport(
        ratios=np.array(ratios),
        max_ratio=float(np.max(ratios)),
        excluded=excluded,
        meta={"variant": variant, "ladder": ladder.tolist()},
    )
    if slopes:
        report.slopes = np.array(slopes)
        report.t_scaling_slope = float(np.median(slopes))
    return report
