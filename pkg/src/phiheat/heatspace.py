"""Blow-up atlas for the heat kernel's singular corners.

The base space is (p, q, t) with two collar copies and time.  Three
successive blow-ups resolve the kernel's singularities; the resulting
boundary hypersurfaces are named

    lf, rf  -- left/right side faces (one collar copy degenerates),
    tb      -- the t = 0 face away from the diagonal,
    ff      -- the corner face where both copies degenerate together,
    fd      -- the fibered diagonal face,
    td      -- the blown-up diagonal at t = 0.

Five projective chart patches cover the corners (the two fibered-diagonal
charts exchanging the collar copies are unified into one, reached from
either side as the chart variables grow):

    R1  (x, y, z, s~ = x~/x, y~, z~, tau)        near lf ^ ff ^ tb
    R2  (tau, s = x/x~, y, z, x~, y~, z~)        near rf ^ ff ^ tb
    R3  (tau, x, y, z, S', U', Z')               near fd ^ tb (ff at infinity)
    R5  (tau, x, y, z, S, U, Z)                  near fd ^ td (tb at infinity)

with tau = sqrt(t), S' = (x~-x)/x^2, U' = (y-y~)/x, Z' = z-z~ and the
once-more-rescaled S = S'/tau, U = U'/tau, Z = Z'/tau.  All chart algebra
broadcasts over numpy arrays; angles are treated as plain reals (charts
are local).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ChartDomainError, ConfigError, DomainError, SingularExpansionError
from .geometry import PhiModel, Point, metric_eval

FACES = ("lf", "rf", "tb", "ff", "fd", "td")

R1, R2, R3, R5, INTERIOR = "R1", "R2", "R3", "R5", "Interior"
REGIMES = (R1, R2, R3, R5, INTERIOR)

__all__ = [
    "FACES",
    "REGIMES",
    "HeatTriple",
    "ProjectiveChart",
    "IndexSet",
    "IndexFamily",
    "classify_regime",
    "lift",
    "blowdown",
    "phg_eval",
    "hk_asymptotic_model",
    "volume_lift",
    "sample_regime_charts",
    "r5_slice_integral",
]


@dataclass(frozen=True)
class HeatTriple:
    """A point of the base space: time t >= 0 and two collar points."""

    t: float | np.ndarray
    p: Point
    q: Point

    def __post_init__(self):
        if np.any(np.asarray(self.t) < 0.0):
            raise DomainError("time must be nonnegative")

    @property
    def tau(self):
        return np.sqrt(np.asarray(self.t, dtype=float))


@dataclass(frozen=True)
class ProjectiveChart:
    """Per-regime coordinates plus boundary-defining-function values.

    Faces reached "at infinity" in a chart carry the reciprocal proxy
    1 / (1 + r) of the diverging chart radius, so every stored bdf is
    nonnegative and vanishes exactly on its face.
    """

    regime: str
    coords: dict
    bdfs: dict


def _vec_norm(scalar, vec_y, vec_z):
    s2 = np.asarray(scalar, dtype=float) ** 2
    y2 = np.sum(np.asarray(vec_y, dtype=float) ** 2, axis=-1)
    z2 = np.sum(np.asarray(vec_z, dtype=float) ** 2, axis=-1)
    return np.sqrt(s2 + y2 + z2)


def lift(h: HeatTriple, regime: str) -> ProjectiveChart:
    """Chart coordinates of a base triple in the requested regime."""
    t = np.asarray(h.t, dtype=float)
    tau = np.sqrt(t)
    x, y, z = np.asarray(h.p.x, float), h.p.y, h.p.z
    xt, yt, zt = np.asarray(h.q.x, float), h.q.y, h.q.z

    if regime == INTERIOR:
        return ProjectiveChart(INTERIOR, {"t": t, "x": x, "y": y, "z": z, "x_t": xt, "y_t": yt, "z_t": zt}, {})
    if regime == R1:
        if np.any(x == 0.0):
            raise ChartDomainError("R1 needs x > 0")
        s_t = xt / x
        coords = {"x": x, "y": y, "z": z, "s_t": s_t, "y_t": yt, "z_t": zt, "tau": tau}
        return ProjectiveChart(R1, coords, {"ff": x, "lf": s_t, "tb": tau})
    if regime == R2:
        if np.any(xt == 0.0):
            raise ChartDomainError("R2 needs x~ > 0")
        s = x / xt
        coords = {"tau": tau, "s": s, "y": y, "z": z, "x_t": xt, "y_t": yt, "z_t": zt}
        return ProjectiveChart(R2, coords, {"ff": xt, "rf": s, "tb": tau})
    if regime == R3:
        if np.any(x == 0.0):
            raise ChartDomainError("R3 needs x > 0")
        Sp = (xt - x) / x**2
        Up = (y - yt) / x[..., None] if np.ndim(x) else (y - yt) / x
        Zp = z - zt
        r = _vec_norm(Sp, Up, Zp)
        coords = {"tau": tau, "x": x, "y": y, "z": z, "Sp": Sp, "Up": Up, "Zp": Zp}
        return ProjectiveChart(R3, coords, {"fd": x, "tb": tau, "ff": 1.0 / (1.0 + r)})
    if regime == R5:
        if np.any(x == 0.0) or np.any(tau == 0.0):
            raise ChartDomainError("R5 needs x > 0 and t > 0")
        S = (xt - x) / (tau * x**2)
        U = (y - yt) / (tau * x)[..., None] if np.ndim(x) else (y - yt) / (tau * x)
        Z = (z - zt) / tau[..., None] if np.ndim(tau) else (z - zt) / tau
        r = _vec_norm(S, U, Z)
        coords = {"tau": tau, "x": x, "y": y, "z": z, "S": S, "U": U, "Z": Z}
        return ProjectiveChart(R5, coords, {"fd": x, "td": tau, "tb": 1.0 / (1.0 + r)})
    raise ConfigError(f"unknown regime {regime!r}")


def blowdown(chart: ProjectiveChart) -> HeatTriple:
    """Invert a chart back to the base triple."""
    c = chart.coords
    if chart.regime == INTERIOR:
        return HeatTriple(c["t"], Point(c["x"], c["y"], c["z"]), Point(c["x_t"], c["y_t"], c["z_t"]))
    if chart.regime == R1:
        x = np.asarray(c["x"], float)
        xt = x * c["s_t"]
        if np.any(xt <= 0.0):
            raise ChartDomainError("R1 blowdown image leaves the open collar (s~ <= 0)")
        return HeatTriple(np.asarray(c["tau"], float) ** 2, Point(x, c["y"], c["z"]), Point(xt, c["y_t"], c["z_t"]))
    if chart.regime == R2:
        xt = np.asarray(c["x_t"], float)
        x = xt * c["s"]
        if np.any(x <= 0.0):
            raise ChartDomainError("R2 blowdown image leaves the open collar (s <= 0)")
        return HeatTriple(np.asarray(c["tau"], float) ** 2, Point(x, c["y"], c["z"]), Point(xt, c["y_t"], c["z_t"]))
    if chart.regime == R3:
        x = np.asarray(c["x"], float)
        xt = x + x**2 * c["Sp"]
        if np.any(xt <= 0.0):
            raise ChartDomainError("R3 blowdown image leaves the open collar")
        scale = x[..., None] if np.ndim(x) else x
        yt = c["y"] - scale * c["Up"]
        zt = c["z"] - c["Zp"]
        return HeatTriple(np.asarray(c["tau"], float) ** 2, Point(x, c["y"], c["z"]), Point(xt, yt, zt))
    if chart.regime == R5:
        x = np.asarray(c["x"], float)
        tau = np.asarray(c["tau"], float)
        xt = x + tau * x**2 * c["S"]
        if np.any(xt <= 0.0):
            raise ChartDomainError("R5 blowdown image leaves the open collar")
        sxy = (tau * x)[..., None] if np.ndim(x) else tau * x
        st = tau[..., None] if np.ndim(tau) else tau
        yt = c["y"] - sxy * c["U"]
        zt = c["z"] - st * c["Z"]
        return HeatTriple(tau**2, Point(x, c["y"], c["z"]), Point(xt, yt, zt))
    raise ConfigError(f"unknown regime {chart.regime!r}")


def classify_regime(h: HeatTriple, cutoff: float = 0.1) -> str | np.ndarray:
    """Most-blown-up chart whose bdf values all sit within the cutoff.

    Priority R5 > R3 > R1 > R2 > Interior (the more resolved chart also
    resolves the less blown-up ones); at-infinity chart radii must stay
    within 1/cutoff.  The fibered-diagonal side charts are unified, so the
    tag R3 covers both orientations.
    """
    t = np.asarray(h.t, dtype=float)
    tau = np.sqrt(t)
    x = np.asarray(h.p.x, float)
    xt = np.asarray(h.q.x, float)
    ball = 1.0 / cutoff

    with np.errstate(divide="ignore", invalid="ignore"):
        S = (xt - x) / (tau * x**2)
        U = (h.p.y - h.q.y) / (tau * x)[..., None] if np.ndim(x) else (h.p.y - h.q.y) / (tau * x)
        Z = (h.p.z - h.q.z) / (tau[..., None] if np.ndim(tau) else tau)
        r5 = _vec_norm(np.where(tau > 0, S, np.inf), np.where((tau > 0)[..., None] if np.ndim(tau) else tau > 0, U, np.inf), np.where((tau > 0)[..., None] if np.ndim(tau) else tau > 0, Z, np.inf))
        diag = (xt == x) & (np.sum(np.abs(h.p.y - h.q.y), axis=-1) == 0) & (np.sum(np.abs(h.p.z - h.q.z), axis=-1) == 0)
        r5 = np.where((tau == 0) & diag, 0.0, r5)
        Sp = (xt - x) / x**2
        Up = (h.p.y - h.q.y) / (x[..., None] if np.ndim(x) else x)
        Zp = h.p.z - h.q.z
        r3 = _vec_norm(Sp, Up, Zp)
        s_t = xt / x
        s = x / xt

    in_r5 = (x <= cutoff) & (tau <= cutoff) & (r5 <= ball)
    in_r3 = (x <= cutoff) & (tau <= cutoff) & (r3 <= ball)
    in_r1 = (x <= cutoff) & (s_t <= cutoff) & (tau <= cutoff)
    in_r2 = (xt <= cutoff) & (s <= cutoff) & (tau <= cutoff)

    tags = np.select([in_r5, in_r3, in_r1, in_r2], [R5, R3, R1, R2], default=INTERIOR)
    return tags if tags.ndim else str(tags)


# -- polyhomogeneous expansions -----------------------------------------


@dataclass(frozen=True)
class IndexSet:
    """Generators (sigma, p) of an index set, closed under sigma -> sigma + n
    up to the stored truncation order."""

    entries: tuple
    truncation: float = 4.0

    def __post_init__(self):
        ent = tuple((float(s), int(p)) for s, p in self.entries)
        object.__setattr__(self, "entries", ent)
        if any(p < 0 for _, p in ent):
            raise ConfigError("log powers must be nonnegative")

    def lower_bound(self) -> float:
        return min(s for s, _ in self.entries) if self.entries else math.inf

    def terms(self):
        """All (sigma + j, p) within the truncation window, sorted."""
        out = set()
        lb = self.lower_bound()
        for s, p in self.entries:
            j = 0
            while s + j <= lb + self.truncation:
                out.add((s + j, p))
                j += 1
        return sorted(out)

    def contains(self, sigma: float, p: int) -> bool:
        return any(abs(sigma - s) <= 1e-12 and p == q for s, q in self.terms())


IndexFamily = dict  # face name -> IndexSet


def phg_eval(family: IndexFamily, coeffs: dict, chart: ProjectiveChart) -> float | np.ndarray:
    """Evaluate a truncated polyhomogeneous expansion on a chart.

    ``coeffs`` maps (face, sigma, log_power) -> coefficient; every key must
    belong to the face's index set.  Faces meeting the chart contribute the
    factor sum_a a * rho^sigma * (log rho)^n and the factors multiply; faces
    the chart does not meet are skipped.  A zero bdf under a negative power
    or a log term signals a genuine singularity.
    """
    for (face, sigma, p) in coeffs:
        if face not in family:
            raise ConfigError(f"coefficient for face {face!r} without an index set")
        if not family[face].contains(sigma, p):
            raise ConfigError(f"({sigma}, {p}) outside the index set of {face!r}")
    value = 1.0
    for face, index_set in family.items():
        if face not in chart.bdfs:
            continue
        rho = np.asarray(chart.bdfs[face], dtype=float)
        factor = 0.0
        touched = False
        for (sigma, p) in index_set.terms():
            a = coeffs.get((face, sigma, p))
            if a is None:
                continue
            touched = True
            if np.any(rho == 0.0) and (sigma < 0 or p > 0):
                raise SingularExpansionError(
                    f"expansion at {face!r} is singular on the face (sigma={sigma}, log^{p})"
                )
            with np.errstate(divide="ignore"):
                logr = np.where(rho > 0.0, np.log(np.where(rho > 0.0, rho, 1.0)), 0.0)
            factor = factor + a * rho**sigma * logr**p
        if touched:
            value = value * factor
    return value


# -- leading-order kernel model -----------------------------------------


def vanishing_factor(rho, decay="exponential"):
    """Model of 'vanishes to infinite order': flat at 0, equal to 1 at 1.

    ``decay`` may be the string "exponential" (exp(1 - 1/rho)) or an integer
    N for the finite cross-check power min(rho, 1)^N.
    """
    rho = np.asarray(rho, dtype=float)
    rho = np.minimum(rho, 1.0)
    if decay == "exponential":
        with np.errstate(divide="ignore"):
            out = np.exp(1.0 - np.where(rho > 0.0, 1.0 / np.where(rho > 0.0, rho, 1.0), np.inf))
        return out
    N = int(decay)
    return rho**N


def hk_asymptotic_model(chart: ProjectiveChart, m: int, decay="exponential"):
    """Leading-order magnitude model of the lifted heat kernel.

    Infinite-order vanishing at the side/corner/temporal faces, order 0 at
    the fibered diagonal, order -m blow-up at the temporal diagonal, and a
    Gaussian placeholder for the bounded profile in the diagonal charts
    (it decays to infinite order as the chart radius grows, which is all
    downstream consumers rely on).
    """
    c = chart.coords
    if chart.regime == INTERIOR:
        return np.ones_like(np.asarray(c["t"], dtype=float))
    if chart.regime == R1:
        return (
            vanishing_factor(chart.bdfs["lf"], decay)
            * vanishing_factor(chart.bdfs["ff"], decay)
            * vanishing_factor(chart.bdfs["tb"], decay)
        )
    if chart.regime == R2:
        return (
            vanishing_factor(chart.bdfs["rf"], decay)
            * vanishing_factor(chart.bdfs["ff"], decay)
            * vanishing_factor(chart.bdfs["tb"], decay)
        )
    if chart.regime == R3:
        r = _vec_norm(c["Sp"], c["Up"], c["Zp"])
        return vanishing_factor(chart.bdfs["tb"], decay) * np.exp(-(r**2) / 4.0)
    if chart.regime == R5:
        r = _vec_norm(c["S"], c["U"], c["Z"])
        tau = np.asarray(c["tau"], dtype=float)
        return tau ** (-float(m)) * np.exp(-(r**2) / 4.0)
    raise ConfigError(f"unknown regime {chart.regime!r}")


def _bounded_density_factor(model: PhiModel, x, y, z):
    """The bounded part of the volume density at the second collar copy."""
    if model.kind != "PerturbedProduct":
        return np.ones_like(np.asarray(x, dtype=float))
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    ys = np.atleast_2d(np.asarray(y, dtype=float))
    zs = np.atleast_2d(np.asarray(z, dtype=float))
    out = np.array(
        [
            metric_eval(model, Point(xv, yv, zv)).sqrt_det * xv ** (2.0 + model.b)
            for xv, yv, zv in zip(xs, ys, zs)
        ]
    )
    return out.reshape(np.shape(x)) if np.shape(x) else float(out[0])


def volume_lift(chart: ProjectiveChart, model: PhiModel):
    """Jacobian density of the pulled-back volume-times-time measure.

    Per regime (b the base dimension, m the total dimension, h the model's
    bounded density factor at the blown-down second point):

        R1: 2 (s~ x)^(-2-b) tau x h      R2: 2 x~^(-2-b) tau h
        R3: 2 (1 + S'x)^(-2-b) tau h     R5: 2 (1 + S tau x)^(-2-b) tau^(m+1) h
    """
    b = model.b
    c = chart.coords
    q = None
    if chart.regime == R1:
        base = np.asarray(c["s_t"], float) * np.asarray(c["x"], float)
        if np.any(base <= 0.0):
            raise ChartDomainError("volume lift undefined on the R1 corner faces")
        h = _bounded_density_factor(model, base, c["y_t"], c["z_t"])
        return 2.0 * base ** (-2.0 - b) * np.asarray(c["tau"], float) * np.asarray(c["x"], float) * h
    if chart.regime == R2:
        xt = np.asarray(c["x_t"], float)
        if np.any(xt <= 0.0):
            raise ChartDomainError("volume lift undefined at x~ = 0")
        h = _bounded_density_factor(model, xt, c["y_t"], c["z_t"])
        return 2.0 * xt ** (-2.0 - b) * np.asarray(c["tau"], float) * h
    if chart.regime == R3:
        x = np.asarray(c["x"], float)
        pref = 1.0 + np.asarray(c["Sp"], float) * x
        if np.any(pref <= 0.0):
            raise ChartDomainError("R3 chart validity requires 1 + S'x > 0")
        triple = blowdown(chart)
        h = _bounded_density_factor(model, triple.q.x, triple.q.y, triple.q.z)
        return 2.0 * pref ** (-2.0 - b) * np.asarray(c["tau"], float) * h
    if chart.regime == R5:
        x = np.asarray(c["x"], float)
        tau = np.asarray(c["tau"], float)
        pref = 1.0 + np.asarray(c["S"], float) * tau * x
        if np.any(pref <= 0.0):
            raise ChartDomainError("R5 chart validity requires 1 + S tau x > 0")
        triple = blowdown(chart)
        h = _bounded_density_factor(model, triple.q.x, triple.q.y, triple.q.z)
        return 2.0 * pref ** (-2.0 - b) * tau ** (model.m + 1.0) * h
    raise DomainError(f"volume lift is defined on the corner charts, not {chart.regime!r}")


# -- sampling and the diagonal bookkeeping check ------------------------


def sample_regime_charts(regime: str, n: int, rng, b: int = 1, f: int = 1, cutoff: float = 0.1) -> ProjectiveChart:
    """Random chart points inside one regime's validity patch (batched)."""
    angle = lambda shape: rng.uniform(-math.pi, math.pi, shape)
    pos = lambda: rng.uniform(0.01, cutoff, n)
    if regime == R1:
        coords = {
            "x": pos(), "y": angle((n, b)), "z": angle((n, f)),
            "s_t": pos(), "y_t": angle((n, b)), "z_t": angle((n, f)), "tau": pos(),
        }
        return ProjectiveChart(R1, coords, {"ff": coords["x"], "lf": coords["s_t"], "tb": coords["tau"]})
    if regime == R2:
        coords = {
            "tau": pos(), "s": pos(), "y": angle((n, b)), "z": angle((n, f)),
            "x_t": pos(), "y_t": angle((n, b)), "z_t": angle((n, f)),
        }
        return ProjectiveChart(R2, coords, {"ff": coords["x_t"], "rf": coords["s"], "tb": coords["tau"]})
    if regime == R3:
        ball = 1.0 / cutoff
        coords = {
            "tau": pos(), "x": pos(), "y": angle((n, b)), "z": angle((n, f)),
            "Sp": rng.uniform(-0.5 * ball, 0.5 * ball, n),
            "Up": rng.uniform(-0.5 * ball, 0.5 * ball, (n, b)),
            "Zp": rng.uniform(-0.5 * ball, 0.5 * ball, (n, f)),
        }
        r = _vec_norm(coords["Sp"], coords["Up"], coords["Zp"])
        return ProjectiveChart(R3, coords, {"fd": coords["x"], "tb": coords["tau"], "ff": 1.0 / (1.0 + r)})
    if regime == R5:
        ball = 1.0 / cutoff
        coords = {
            "tau": pos(), "x": pos(), "y": angle((n, b)), "z": angle((n, f)),
            "S": rng.uniform(-0.5 * ball, 0.5 * ball, n),
            "U": rng.uniform(-0.5 * ball, 0.5 * ball, (n, b)),
            "Z": rng.uniform(-0.5 * ball, 0.5 * ball, (n, f)),
        }
        r = _vec_norm(coords["S"], coords["U"], coords["Z"])
        return ProjectiveChart(R5, coords, {"fd": coords["x"], "td": coords["tau"], "tb": 1.0 / (1.0 + r)})
    if regime == INTERIOR:
        coords = {
            "t": rng.uniform(cutoff, 1.0, n) ** 2,
            "x": rng.uniform(cutoff, 1.0, n), "y": angle((n, b)), "z": angle((n, f)),
            "x_t": rng.uniform(cutoff, 1.0, n), "y_t": angle((n, b)), "z_t": angle((n, f)),
        }
        return ProjectiveChart(INTERIOR, coords, {})
    raise ConfigError(f"unknown regime {regime!r}")


def r5_slice_integral(
    model: PhiModel,
    x: float,
    tau: float,
    m_override: int | None = None,
    half_width: float = 8.0,
    nodes: int = 48,
    decay="exponential",
) -> float:
    """Fixed-tau integral of the kernel model against the lifted volume.

    Integrates hk_asymptotic_model x volume_lift over the diagonal chart
    variables (S, U, Z), dividing out the tau-slice measure, so the
    tau^(-m) singularity and the tau^(m+1) volume factor cancel to leading
    order.  The result is finite and nearly tau independent for small tau.
    """
    m = model.m if m_override is None else m_override
    dims = 1 + model.b + model.f
    grid1d = np.linspace(-half_width, half_width, nodes)
    w = np.gradient(grid1d)
    mesh = np.meshgrid(*([grid1d] * dims), indexing="ij")
    weight = np.ones_like(mesh[0])
    for axis in range(dims):
        shape = [1] * dims
        shape[axis] = nodes
        weight = weight * w.reshape(shape)
    S = mesh[0].ravel()
    U = np.stack([mesh[1 + i].ravel() for i in range(model.b)], axis=-1)
    Z = np.stack([mesh[1 + model.b + i].ravel() for i in range(model.f)], axis=-1)
    n = S.size
    coords = {
        "tau": np.full(n, float(tau)),
        "x": np.full(n, float(x)),
        "y": np.zeros((n, model.b)),
        "z": np.zeros((n, model.f)),
        "S": S,
        "U": U,
        "Z": Z,
    }
    r = _vec_norm(S, U, Z)
    chart = ProjectiveChart(R5, coords, {"fd": coords["x"], "td": coords["tau"], "tb": 1.0 / (1.0 + r)})
    kernel = hk_asymptotic_model(chart, m, decay)
    dens = volume_lift(chart, model)
    integrand = kernel * dens / float(tau)  # peel off the d tau slice measure
    return float(np.sum(integrand * weight.ravel()))
