"""Model manifolds with fibered boundary and their metric data.

The catalog consists of collar models on (0, 1]_x x T^b_y x T^f_z whose
metric degenerates at the x -> 0 end like

    g = dx^2 / x^4  +  g_Y / x^2  +  g_Z  (+ perturbation),

with flat unit circles (period 2*pi) for every base and fiber factor.
``EuclideanRadial`` is the m = 2 plane written in inverted polar
coordinates x = 1/r; ``ExactProduct`` is the unperturbed product model;
``PerturbedProduct`` adds cross terms that decay at least like x in the
frame norm.

All functions are pure; model descriptors are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DegenerateInputError, DomainError, MetricDegeneracyError

PERIOD = 2.0 * math.pi

EUCLIDEAN_RADIAL = "EuclideanRadial"
EXACT_PRODUCT = "ExactProduct"
PERTURBED_PRODUCT = "PerturbedProduct"
_KINDS = (EUCLIDEAN_RADIAL, EXACT_PRODUCT, PERTURBED_PRODUCT)


def wrap_angle(a):
    """Reduce angles (or angle differences) to [-pi, pi)."""
    return (np.asarray(a, dtype=float) + math.pi) % PERIOD - math.pi


@dataclass(frozen=True)
class PerturbationTerm:
    """One cross/diagonal perturbation entry in the orthonormal coframe.

    The perturbation is declared through its components against the frame
    {dx/x^2, dy_i/x, dz_j}, so the frame norm of a term is just its
    coefficient.  The coefficient is ``amplitude * x**order *
    cos(ky . y + lz . z + phase)`` and ``order >= 1`` keeps the frame norm
    O(x) toward the boundary.
    """

    i: int
    j: int
    amplitude: float
    order: float = 1.0
    ky: tuple[int, ...] = ()
    lz: tuple[int, ...] = ()
    phase: float = 0.0

    def coefficient(self, x, y, z):
        x = np.asarray(x, dtype=float)
        arg = self.phase
        if self.ky:
            arg = arg + np.tensordot(np.asarray(y, float), np.asarray(self.ky, float), axes=([-1], [0]))
        if self.lz:
            arg = arg + np.tensordot(np.asarray(z, float), np.asarray(self.lz, float), axes=([-1], [0]))
        return self.amplitude * x**self.order * np.cos(arg)


@dataclass(frozen=True)
class PhiModel:
    """Descriptor of one catalog model.

    Attributes
    ----------
    kind : str
        One of ``EuclideanRadial``, ``ExactProduct``, ``PerturbedProduct``.
    b, f : int
        Base and fiber dimensions; the total dimension is m = 1 + b + f.
    x_range : (float, float)
        Collar interval (x_min, x_max] with 0 < x_min < x_max <= 1.
    perturbation : tuple of PerturbationTerm
        Frame components of the cross-term perturbation (may be empty).
    """

    kind: str
    b: int
    f: int
    x_range: tuple[float, float] = (0.01, 1.0)
    perturbation: tuple[PerturbationTerm, ...] = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.b < 0 or self.f < 0:
            raise ConfigError("base/fiber dimensions must be nonnegative")
        x_min, x_max = self.x_range
        if not (0.0 < x_min < x_max <= 1.0):
            raise ConfigError(f"collar interval must satisfy 0 < x_min < x_max <= 1, got {self.x_range}")
        if self.kind == EUCLIDEAN_RADIAL:
            if self.f != 0 or self.b != 1:
                raise ConfigError("EuclideanRadial is the m = 2 plane: b = 1, f = 0")
            if self.perturbation:
                raise ConfigError("EuclideanRadial carries no perturbation")
        if self.kind == EXACT_PRODUCT and self.perturbation:
            raise ConfigError("ExactProduct carries no perturbation; use PerturbedProduct")
        for term in self.perturbation:
            if term.order < 1.0:
                raise ConfigError("perturbation terms must decay at least like x (order >= 1)")
            if not (0 <= term.i < self.m and 0 <= term.j < self.m):
                raise ConfigError("perturbation indices out of range")
            if len(term.ky) != self.b or len(term.lz) != self.f:
                raise ConfigError("perturbation mode vectors must match (b, f)")

    @property
    def m(self) -> int:
        return 1 + self.b + self.f

    @property
    def x_min(self) -> float:
        return self.x_range[0]

    @property
    def x_max(self) -> float:
        return self.x_range[1]

    @classmethod
    def euclidean_radial(cls, m: int = 2, x_range=(0.01, 1.0)) -> "PhiModel":
        if m != 2:
            raise ConfigError("only the m = 2 plane is in the catalog (circle factors only)")
        return cls(EUCLIDEAN_RADIAL, b=1, f=0, x_range=x_range)

    @classmethod
    def exact_product(cls, b: int, f: int, x_range=(0.01, 1.0)) -> "PhiModel":
        return cls(EXACT_PRODUCT, b=b, f=f, x_range=x_range)

    @classmethod
    def perturbed_product(cls, b: int, f: int, terms: Sequence[PerturbationTerm], x_range=(0.01, 1.0)) -> "PhiModel":
        return cls(PERTURBED_PRODUCT, b=b, f=f, x_range=x_range, perturbation=tuple(terms))

    # -- serialization --------------------------------------------------

    def to_config(self) -> dict:
        """Flat key/value mapping (string values) for text configs."""
        cfg = {
            "kind": self.kind,
            "b": str(self.b),
            "f": str(self.f),
            "x_min": repr(self.x_min),
            "x_max": repr(self.x_max),
        }
        if self.perturbation:
            rows = []
            for t in self.perturbation:
                row = [str(t.i), str(t.j), repr(t.amplitude), repr(t.order)]
                row += [str(k) for k in t.ky] + [str(l) for l in t.lz] + [repr(t.phase)]
                rows.append(" ".join(row))
            cfg["perturbation"] = "\n".join(rows)
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "PhiModel":
        try:
            kind = cfg["kind"]
            b = int(cfg["b"])
            f = int(cfg["f"])
        except KeyError as exc:
            raise ConfigError(f"model config missing key {exc.args[0]!r}") from exc
        x_range = (float(cfg.get("x_min", 0.01)), float(cfg.get("x_max", 1.0)))
        terms = []
        table = cfg.get("perturbation", "").strip()
        if table:
            for line in table.splitlines():
                parts = line.split()
                want = 4 + b + f + 1
                if len(parts) != want:
                    raise ConfigError(
                        f"perturbation row needs {want} columns (i j amplitude order ky[{b}] lz[{f}] phase), got {len(parts)}"
                    )
                i, j = int(parts[0]), int(parts[1])
                amp, order = float(parts[2]), float(parts[3])
                ky = tuple(int(v) for v in parts[4 : 4 + b])
                lz = tuple(int(v) for v in parts[4 + b : 4 + b + f])
                phase = float(parts[-1])
                terms.append(PerturbationTerm(i, j, amp, order, ky, lz, phase))
        if kind == EUCLIDEAN_RADIAL:
            return cls.euclidean_radial(2, x_range)
        if kind == EXACT_PRODUCT:
            return cls.exact_product(b, f, x_range)
        return cls.perturbed_product(b, f, terms, x_range)

    def to_config_text(self, prefix: str = "model.") -> str:
        lines = []
        for key, val in self.to_config().items():
            if "\n" in val:
                lines.append(f"{prefix}{key} =")
                lines.extend("    " + row for row in val.splitlines())
            else:
                lines.append(f"{prefix}{key} = {val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_config_text(cls, text: str, prefix: str = "model.") -> "PhiModel":
        cfg: dict[str, str] = {}
        current = None
        for raw in text.splitlines():
            line = raw.rstrip()
            if not line.strip() or line.strip().startswith("#"):
                continue
            if line[0].isspace() and current is not None:
                cfg[current] += ("\n" if cfg[current] else "") + line.strip()
                continue
            if "=" not in line:
                raise ConfigError(f"malformed model config line {line!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            if not key.startswith(prefix):
                raise ConfigError(f"unknown model config key {key!r}")
            current = key[len(prefix):]
            cfg[current] = val.strip()
        return cls.from_config(cfg)


@dataclass(frozen=True)
class Point:
    """Collar point (x, y, z); y and z are periodic with period 2*pi.

    The fields broadcast: x may be an array of shape (...,) with y, z of
    shape (..., b) and (..., f) for batched evaluation.
    """

    x: float | np.ndarray
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "y", np.atleast_1d(np.asarray(self.y, dtype=float)))
        object.__setattr__(self, "z", np.atleast_1d(np.asarray(self.z, dtype=float)))
        if np.any(np.asarray(self.x) <= 0.0):
            raise DomainError("collar coordinate x must be positive")

    def reduced(self) -> "Point":
        """Copy with periodic coordinates wrapped into [-pi, pi)."""
        return Point(self.x, wrap_angle(self.y), wrap_angle(self.z))


@dataclass(frozen=True)
class MetricAtPoint:
    """Metric tensor, inverse, and volume density at one point."""

    g: np.ndarray
    g_inv: np.ndarray
    sqrt_det: float


@dataclass(frozen=True)
class LaplacianCoeffs:
    """Coefficients of the positive Laplacian: sum A_ij d_i d_j + B_i d_i."""

    A: np.ndarray
    B: np.ndarray


def _check_in_collar(model: PhiModel, x) -> None:
    x = np.asarray(x, dtype=float)
    if np.any(x < model.x_min) or np.any(x > model.x_max):
        raise DomainError(
            f"x = {x} outside the collar [{model.x_min}, {model.x_max}]"
        )


def _frame_scales(model: PhiModel, x: float) -> np.ndarray:
    """Coordinate scales of the orthonormal coframe at x."""
    return np.concatenate(
        ([x**-2.0], np.full(model.b, 1.0 / x), np.ones(model.f))
    )


def _metric_raw(model: PhiModel, p: Point) -> MetricAtPoint:
    """Metric data at any x > 0, ignoring the declared collar window.

    Used internally where the model formula must be extended past x_min
    (volume growth toward r = infinity, finite-difference neighbors).
    """
    x = float(np.asarray(p.x))
    scales = _frame_scales(model, x)
    frame = np.zeros((model.m, model.m))
    for term in model.perturbation:
        c = float(term.coefficient(x, p.y, p.z))
        frame[term.i, term.j] += c
        if term.i != term.j:
            frame[term.j, term.i] += c
    g = np.diag(scales**2) + scales[:, None] * frame * scales[None, :]
    eigvals = np.linalg.eigvalsh(g)
    if np.min(eigvals) <= 0.0:
        raise MetricDegeneracyError(
            f"metric not positive definite at x = {x:.4g} (min eigenvalue {np.min(eigvals):.3g})"
        )
    g_inv = np.linalg.inv(g)
    sqrt_det = math.sqrt(float(np.linalg.det(g)))
    return MetricAtPoint(g=g, g_inv=g_inv, sqrt_det=sqrt_det)


def metric_eval(model: PhiModel, p: Point) -> MetricAtPoint:
    """Evaluate the model metric at a collar point.

    Returns the coordinate components ``diag(x^-4, x^-2 I_b, I_f)`` plus the
    perturbation entries, with the inverse and volume density.  Raises
    ``DomainError`` outside the collar and ``MetricDegeneracyError`` if a
    perturbation destroys positive definiteness.
    """
    _check_in_collar(model, p.x)
    return _metric_raw(model, p)


def volume_element(model: PhiModel, p: Point) -> float:
    """Volume density sqrt(det g) at a collar point."""
    return metric_eval(model, p).sqrt_det


def _exact_laplacian_coeffs(model: PhiModel, x: float) -> LaplacianCoeffs:
    # Unperturbed models: sqrt|g| = x^(-2-b), g^xx = x^4, g^yy = x^2, g^zz = 1,
    # so the only drift term is -(2-b) x^3 in the x direction.
    A = -np.concatenate(([x**4], np.full(model.b, x**2), np.ones(model.f)))
    B = np.zeros(model.m)
    B[0] = -(2.0 - model.b) * x**3
    return LaplacianCoeffs(A=np.diag(A), B=B)


def laplacian_coeffs(model: PhiModel, p: Point, fd_step: float = 1e-4) -> LaplacianCoeffs:
    """Second-order coefficients of the positive Laplace-Beltrami operator.

    The operator is ``L u = sum_ij A_ij d_i d_j u + sum_i B_i d_i u`` with
    ``A = -g^inv`` and ``B_j = -|g|^(-1/2) d_i(|g|^(1/2) g^(ij))``.  Exact
    models use closed forms; perturbed models differentiate the metric data
    by 4th-order central differences (x step scaled by ``fd_step * x``).
    """
    met = metric_eval(model, p)
    if model.kind != PERTURBED_PRODUCT:
        return _exact_laplacian_coeffs(model, float(np.asarray(p.x)))

    x = float(np.asarray(p.x))
    m = model.m

    def flux(q: Point) -> np.ndarray:
        mq = _metric_raw(model, q)
        return mq.sqrt_det * mq.g_inv

    steps = np.concatenate(([fd_step * x], np.full(model.b, fd_step), np.full(model.f, fd_step)))
    div = np.zeros(m)
    # d_i (sqrt|g| g^{ij}) summed over i, 4th-order central stencil.
    for i in range(m):
        h = steps[i]
        vals = []
        for offset in (-2, -1, 1, 2):
            coords = [x, p.y.copy(), p.z.copy()]
            if i == 0:
                coords[0] = x + offset * h
            elif i <= model.b:
                coords[1][i - 1] += offset * h
            else:
                coords[2][i - 1 - model.b] += offset * h
            vals.append(flux(Point(coords[0], coords[1], coords[2]))[i, :])
        fm2, fm1, fp1, fp2 = vals
        div += (fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * h)
    return LaplacianCoeffs(A=-met.g_inv, B=-div / met.sqrt_det)


def apply_laplacian(coeffs: LaplacianCoeffs, d1: np.ndarray, d2: np.ndarray):
    """Contract Laplacian coefficients with supplied first/second partials."""
    return np.tensordot(coeffs.A, d2, axes=2) + coeffs.B @ d1


# -- distances ---------------------------------------------------------


def _periodic_gap(a, b):
    # abs() keeps the gap exactly symmetric in its arguments.
    d = np.abs(np.asarray(a, float) - np.asarray(b, float)) % PERIOD
    return np.minimum(d, PERIOD - d)


def _pairwise_terms(x1, y1, z1, x2, y2, z2):
    dx = np.asarray(x1, float) - np.asarray(x2, float)
    s = np.asarray(x1, float) + np.asarray(x2, float)
    dy2 = np.sum(_periodic_gap(y1, y2) ** 2, axis=-1)
    dz2 = np.sum(_periodic_gap(z1, z2) ** 2, axis=-1)
    return dx, s, dy2, dz2


def phi_distance_arrays(x1, y1, z1, x2, y2, z2):
    """Boundary-adapted distance on raw coordinate arrays (broadcasting)."""
    dx, s, dy2, dz2 = _pairwise_terms(x1, y1, z1, x2, y2, z2)
    return np.sqrt(dx**2 + s**2 * dy2 + s**4 * dz2)


def phi_distance_classical_arrays(x1, y1, z1, x2, y2, z2):
    """Distance induced by the degenerate metric itself (broadcasting)."""
    dx, s, dy2, dz2 = _pairwise_terms(x1, y1, z1, x2, y2, z2)
    return np.sqrt(dx**2 / s**4 + dy2 / s**2 + dz2)


def phi_distance(p: Point, q: Point):
    """Collar distance sqrt(|dx|^2 + (x+x')^2 |dy|^2 + (x+x')^4 |dz|^2).

    Periodic differences are wrapped to [-pi, pi).  The squared norm on the
    base differences makes d^2 a sum of squares, which is what the conformal
    comparison with the classical distance requires.
    """
    return phi_distance_arrays(p.x, p.y, p.z, q.x, q.y, q.z)


def phi_distance_classical(p: Point, q: Point):
    """Distance sqrt(|dx|^2/(x+x')^4 + |dy|^2/(x+x')^2 + |dz|^2)."""
    return phi_distance_classical_arrays(p.x, p.y, p.z, q.x, q.y, q.z)


# -- volume growth / stochastic completeness ---------------------------


@dataclass(frozen=True)
class GrigoryanResult:
    """Outcome of the volume-growth completeness test."""

    verdict: str                      # "Complete" | "Inconclusive"
    growth_exponent: float
    radii: np.ndarray
    volumes: np.ndarray
    partial_integrals: np.ndarray

    COMPLETE = "Complete"
    INCONCLUSIVE = "Inconclusive"


def _radial_density(model: PhiModel, r: np.ndarray, n_samples: int, rng) -> np.ndarray:
    """Angular-averaged volume density in the radial variable r = 1/x.

    dvol = sqrt|g| dx dy dz and dx = -dr/r^2, so the radial density is
    (2*pi)^(b+f) * <sqrt|g|>_angles / r^2.
    """
    x = 1.0 / r
    angles_y = rng.uniform(0.0, PERIOD, size=(max(1, n_samples), model.b))
    angles_z = rng.uniform(0.0, PERIOD, size=(max(1, n_samples), model.f))
    if model.kind != PERTURBED_PRODUCT:
        avg = x ** -(2.0 + model.b)
    else:
        dens = np.empty((len(x), len(angles_y)))
        for a, (ya, za) in enumerate(zip(angles_y, angles_z)):
            for i, xi in enumerate(x):
                dens[i, a] = _metric_raw(model, Point(xi, ya, za)).sqrt_det
        avg = dens.mean(axis=1)
    return PERIOD ** (model.b + model.f) * avg / r**2


def grigoryan_test(
    model: PhiModel,
    R_max: float,
    n_samples: int = 8,
    n_radii: int = 200,
    seed: int = 0,
    volume_law: Callable[[np.ndarray], np.ndarray] | None = None,
    increment_fraction: float = 0.10,
) -> GrigoryanResult:
    """Volume-growth test for stochastic completeness.

    Computes truncated volumes vol(r <= R) on a log ladder up to ``R_max``
    (the compact piece contributes the constant 1), fits the growth
    exponent by log-log regression on the upper decade, and accumulates
    partial integrals of R / log vol.  The verdict is ``Complete`` when the
    partial integrals keep growing: the increment over the last decade must
    exceed ``increment_fraction`` of the running total.  The criterion is
    sufficient only, so the alternative verdict is ``Inconclusive``.

    ``volume_law`` substitutes a synthetic volume function vol(R) for the
    model quadrature (testing hook).
    """
    if R_max <= 1.0:
        raise DomainError("R_max must exceed 1")
    radii = np.geomspace(1.0, R_max, n_radii)
    if volume_law is not None:
        with np.errstate(over="ignore"):
            volumes = np.asarray(volume_law(radii), dtype=float)
        if np.any(volumes <= 0.0):
            raise DegenerateInputError("synthetic volume law must be positive")
    else:
        rng = np.random.default_rng(seed)
        # Cumulative trapezoid of the radial density; +1 for the compact piece.
        dens = _radial_density(model, radii, n_samples, rng)
        shell = np.concatenate(([0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(radii))))
        volumes = 1.0 + shell

    # Growth exponent over the top decade of the ladder.  Overflowed
    # synthetic laws (vol = inf) contribute f-bar = 0, which only makes the
    # divergence test harder to pass.
    log_vol = np.log(volumes)
    tail = (radii >= R_max / 10.0) & np.isfinite(log_vol)
    slope, _ = np.polyfit(np.log(radii[tail]), log_vol[tail], 1) if tail.sum() >= 2 else (math.inf, 0.0)

    # Partial integrals of R / log vol, started once log vol is safely positive.
    ok = (log_vol > 0.05) & np.isfinite(log_vol)
    fbar = np.zeros_like(radii)
    fbar[ok] = radii[ok] / log_vol[ok]
    partial = np.concatenate(([0.0], np.cumsum(0.5 * (fbar[1:] + fbar[:-1]) * np.diff(radii))))

    total = partial[-1]
    last_decade = partial[-1] - np.interp(R_max / 10.0, radii, partial)
    complete = total > 0.0 and last_decade > increment_fraction * total
    return GrigoryanResult(
        verdict=GrigoryanResult.COMPLETE if complete else GrigoryanResult.INCONCLUSIVE,
        growth_exponent=float(slope),
        radii=radii,
        volumes=volumes,
        partial_integrals=partial,
    )
