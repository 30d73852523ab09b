"""Space-time grids and mode-represented scalar fields.

A field is stored as complex Fourier coefficients over the periodic
base/fiber directions, tabulated on a log-spaced radial grid and a uniform
time grid: ``values[ix, mode, it]``.  Real-valued functions correspond to
Hermitian mode data (coefficients at opposite modes are conjugate).

A field may be stored in factored form ``x^gamma * values``: the array
holds the bounded part and ``gamma`` records the boundary weight.  This
makes stripping the weight exact, which the weighted-norm machinery
relies on.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ResolutionError
from .geometry import PERIOD, PhiModel

_MAGIC = b"PHIFLD01"


def fornberg_weights(xs: np.ndarray, x0: float, order: int) -> np.ndarray:
    """Finite-difference weights for d^order/dx^order at x0 on nodes xs."""
    xs = np.asarray(xs, dtype=float)
    n = len(xs)
    if n < order + 1:
        raise ResolutionError(f"need at least {order + 1} nodes for derivative order {order}")
    w = np.zeros((order + 1, n))
    w[0, 0] = 1.0
    c1 = 1.0
    c4 = xs[0] - x0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = xs[i] - x0
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    w[k, i] = c1 * (k * w[k - 1, i - 1] - c5 * w[k, i - 1]) / c2
                w[0, i] = -c1 * c5 * w[0, i - 1] / c2
            for k in range(mn, 0, -1):
                w[k, j] = (c4 * w[k, j] - k * w[k - 1, j]) / c3
            w[0, j] = c4 * w[0, j] / c3
        c1 = c2
    return w[order]


def diff_matrix(nodes: np.ndarray, order: int, stencil: int = 5) -> sp.csr_matrix:
    """Sparse differentiation matrix on arbitrary nodes.

    Interior rows use centered ``stencil``-point windows (4th-order accurate
    for the default 5-point first derivative); boundary rows reuse the
    one-sided window clipped at the ends.
    """
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    if n < stencil:
        raise ResolutionError(f"need at least {stencil} nodes, got {n}")
    rows, cols, vals = [], [], []
    half = stencil // 2
    for i in range(n):
        lo = min(max(i - half, 0), n - stencil)
        idx = np.arange(lo, lo + stencil)
        w = fornberg_weights(nodes[idx], nodes[i], order)
        rows.extend([i] * stencil)
        cols.extend(idx)
        vals.extend(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def tensor_modes(K: int, L: int, b: int, f: int) -> np.ndarray:
    """Full tensor mode set {-K..K}^b x {-L..L}^f in C order."""
    ranges = [np.arange(-K, K + 1)] * b + [np.arange(-L, L + 1)] * f
    if not ranges:
        return np.zeros((1, 0), dtype=np.int64)
    mesh = np.meshgrid(*ranges, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1).astype(np.int64)


@dataclass(frozen=True)
class Grid:
    """Radial x Fourier x time tensor grid.

    ``x_nodes`` is strictly increasing (log-spaced toward the boundary end),
    ``modes`` holds integer rows (k_1..k_b, l_1..l_f) closed under negation,
    ``t_nodes`` is uniform on [0, T].
    """

    x_nodes: np.ndarray
    modes: np.ndarray
    t_nodes: np.ndarray
    b: int
    f: int

    def __post_init__(self):
        object.__setattr__(self, "x_nodes", np.asarray(self.x_nodes, dtype=float))
        object.__setattr__(self, "modes", np.asarray(self.modes, dtype=np.int64))
        object.__setattr__(self, "t_nodes", np.asarray(self.t_nodes, dtype=float))
        if self.x_nodes.ndim != 1 or len(self.x_nodes) < 32:
            raise ConfigError("grid needs at least 32 radial nodes")
        if np.any(np.diff(self.x_nodes) <= 0.0):
            raise ConfigError("x_nodes must be strictly increasing")
        if self.modes.shape[1] != self.b + self.f:
            raise ConfigError("mode rows must have b + f entries")
        if len(self.t_nodes) >= 2 and self.dt <= 0.0:
            raise ConfigError("time step must be positive")
        # Real fields need every mode's negation present.
        keys = {tuple(row) for row in self.modes.tolist()}
        for row in keys:
            if tuple(-v for v in row) not in keys:
                raise ConfigError(f"mode set not symmetric under negation: {row}")

    @classmethod
    def build(
        cls,
        model: PhiModel,
        n_x: int,
        K: int,
        L: int,
        T: float,
        n_t: int,
        max_step_ratio: float = 1.05,
    ) -> "Grid":
        x = np.geomspace(model.x_min, model.x_max, n_x)
        ratio = (model.x_max / model.x_min) ** (1.0 / (n_x - 1))
        if ratio > max_step_ratio:
            raise ConfigError(
                f"adjacent x-step ratio {ratio:.4f} exceeds {max_step_ratio}; "
                "increase n_x or shrink the collar"
            )
        if T <= 0.0 or n_t < 2:
            raise ConfigError("need T > 0 and at least two time nodes")
        return cls(x, tensor_modes(K, L, model.b, model.f), np.linspace(0.0, T, n_t), model.b, model.f)

    @property
    def n_x(self) -> int:
        return len(self.x_nodes)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def n_t(self) -> int:
        return len(self.t_nodes)

    @property
    def dt(self) -> float:
        return float(self.t_nodes[1] - self.t_nodes[0]) if len(self.t_nodes) > 1 else 0.0

    @property
    def T(self) -> float:
        return float(self.t_nodes[-1])

    @property
    def mode_k(self) -> np.ndarray:
        return self.modes[:, : self.b]

    @property
    def mode_l(self) -> np.ndarray:
        return self.modes[:, self.b:]

    def mode_index(self) -> dict:
        return {tuple(row): i for i, row in enumerate(self.modes.tolist())}

    def negation_permutation(self) -> np.ndarray:
        idx = self.mode_index()
        return np.array([idx[tuple(-v for v in row)] for row in self.modes.tolist()])

    def mode_shape(self) -> tuple[int, ...]:
        """Per-direction mode counts; requires a full tensor mode set."""
        dims = []
        for d in range(self.b + self.f):
            vals = np.unique(self.modes[:, d])
            K = vals.max()
            if not np.array_equal(vals, np.arange(-K, K + 1)):
                raise ConfigError("mode set is not a full symmetric tensor product")
            dims.append(2 * int(K) + 1)
        if int(np.prod(dims, dtype=np.int64)) != self.n_modes:
            raise ConfigError("mode set is not a full symmetric tensor product")
        return tuple(dims)

    def cell_sizes(self) -> np.ndarray:
        """Finite-volume cell widths around each x node (half cells at ends)."""
        x = self.x_nodes
        h = np.empty_like(x)
        h[1:-1] = 0.5 * (x[2:] - x[:-2])
        h[0] = 0.5 * (x[1] - x[0])
        h[-1] = 0.5 * (x[-1] - x[-2])
        return h

    def local_step(self) -> np.ndarray:
        """Representative local x spacing at each node."""
        x = self.x_nodes
        h = np.empty_like(x)
        h[:-1] = np.diff(x)
        h[-1] = x[-1] - x[-2]
        return h

    def refined(self, factor: int = 2) -> "Grid":
        """Grid with x and t resolution multiplied by ``factor`` (same modes)."""
        n_x = (self.n_x - 1) * factor + 1
        n_t = (self.n_t - 1) * factor + 1
        x = np.geomspace(self.x_nodes[0], self.x_nodes[-1], n_x)
        t = np.linspace(0.0, self.T, n_t)
        return Grid(x, self.modes, t, self.b, self.f)

    def time_restricted(self, n_t: int) -> "Grid":
        return Grid(self.x_nodes, self.modes, self.t_nodes[:n_t], self.b, self.f)


@dataclass
class Field:
    """Mode coefficients on a grid, optionally carrying a boundary weight.

    The represented function is ``x^gamma * sum_m values[:, m, :] e^{i m.(y,z)}``.
    """

    values: np.ndarray
    grid: Grid
    model: PhiModel
    gamma: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        expect = (self.grid.n_x, self.grid.n_modes, self.grid.n_t)
        if self.values.shape != expect:
            raise ConfigError(f"field values must have shape {expect}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("field values must be finite")

    # -- constructors ----------------------------------------------------

    @classmethod
    def zeros(cls, grid: Grid, model: PhiModel, gamma: float = 0.0) -> "Field":
        return cls(np.zeros((grid.n_x, grid.n_modes, grid.n_t), dtype=np.complex128), grid, model, gamma)

    @classmethod
    def from_function(cls, grid: Grid, model: PhiModel, fn, gamma: float = 0.0) -> "Field":
        """Sample ``fn(x, y, z, t)`` (vectorized over x) into mode data.

        The function is sampled on the smallest exact lattice for the grid's
        band limit, so band-limited functions are represented exactly.  The
        stored values are the stripped part; the represented function is
        x^gamma times the sampled one only when the caller passes the
        already-stripped ``fn`` (gamma is metadata here).
        """
        shape = grid.mode_shape()
        d = grid.b + grid.f
        lattice = [PERIOD * np.arange(P) / P for P in shape]
        vals = np.empty((grid.n_x, int(np.prod(shape)) if d else 1, grid.n_t))
        coords = np.meshgrid(*lattice, indexing="ij") if d else []
        flat = [c.ravel() for c in coords]
        for it, t in enumerate(grid.t_nodes):
            for j in range(vals.shape[1]):
                y = np.array([flat[i][j] for i in range(grid.b)])
                z = np.array([flat[grid.b + i][j] for i in range(grid.f)])
                vals[:, j, it] = fn(grid.x_nodes, y, z, t)
        values = _lattice_to_modes(vals, grid, shape)
        return cls(values, grid, model, gamma)

    # -- basic algebra ---------------------------------------------------

    def copy(self) -> "Field":
        return Field(self.values.copy(), self.grid, self.model, self.gamma)

    def _compatible(self, other: "Field") -> None:
        if self.grid is not other.grid and (
            self.grid.n_x != other.grid.n_x
            or self.grid.n_modes != other.grid.n_modes
            or self.grid.n_t != other.grid.n_t
        ):
            raise ConfigError("fields live on different grids")
        if self.gamma != other.gamma:
            raise ConfigError("fields carry different boundary weights")

    def __add__(self, other: "Field") -> "Field":
        self._compatible(other)
        return Field(self.values + other.values, self.grid, self.model, self.gamma)

    def __sub__(self, other: "Field") -> "Field":
        self._compatible(other)
        return Field(self.values - other.values, self.grid, self.model, self.gamma)

    def __mul__(self, scalar) -> "Field":
        return Field(self.values * scalar, self.grid, self.model, self.gamma)

    __rmul__ = __mul__

    def scale_by_x_profile(self, profile: np.ndarray) -> "Field":
        return Field(self.values * np.asarray(profile)[:, None, None], self.grid, self.model, self.gamma)

    def with_weight(self, gamma: float) -> "Field":
        """Re-factor the same represented function with a different weight."""
        if gamma == self.gamma:
            return self
        shift = self.grid.x_nodes ** (self.gamma - gamma)
        out = self.scale_by_x_profile(shift)
        out.gamma = gamma
        return out

    def stripped(self) -> "Field":
        """The bounded part (weight removed from the metadata, values kept)."""
        return Field(self.values, self.grid, self.model, 0.0)

    # -- evaluation -------------------------------------------------------

    def eval_samples(self, ix, y, z, it) -> np.ndarray:
        """Evaluate the represented (weighted) function at sample points.

        ``ix``/``it`` index the radial/time grids, ``y``/``z`` are angle
        arrays of shape (N, b), (N, f).
        """
        ix = np.asarray(ix, dtype=int)
        it = np.asarray(it, dtype=int)
        coef = self.values[ix, :, it]                      # (N, n_modes)
        phase = np.zeros((len(ix), self.grid.n_modes))
        if self.grid.b:
            phase = phase + np.asarray(y, float) @ self.grid.mode_k.T.astype(float)
        if self.grid.f:
            phase = phase + np.asarray(z, float) @ self.grid.mode_l.T.astype(float)
        vals = np.sum(coef * np.exp(1j * phase), axis=1).real
        if self.gamma != 0.0:
            vals = vals * self.grid.x_nodes[ix] ** self.gamma
        return vals

    def lattice_values(self, pad: int = 1) -> np.ndarray:
        """Real-space samples (n_x, lattice..., n_t) of the stripped part."""
        shape = self.grid.mode_shape()
        return _modes_to_lattice(self.values, self.grid, shape, pad)

    def sup_norm(self) -> float:
        """Max |represented function| over the natural sampling lattice."""
        vals = np.abs(self.lattice_values())
        if self.gamma != 0.0:
            prof = self.grid.x_nodes ** self.gamma
            vals = vals * prof.reshape((-1,) + (1,) * (vals.ndim - 1))
        return float(vals.max())

    def is_hermitian(self, tol: float = 1e-10) -> bool:
        perm = self.grid.negation_permutation()
        return bool(np.max(np.abs(self.values - np.conj(self.values[:, perm, :]))) <= tol)

    def multiply(self, other: "Field") -> "Field":
        """Dealiased pointwise product of the represented functions.

        The result carries weight gamma_self + gamma_other and is truncated
        back to the grid's band limit.
        """
        if self.grid is not other.grid and self.grid.n_modes != other.grid.n_modes:
            raise ConfigError("fields live on different grids")
        a = self.lattice_values(pad=2)
        bv = other.lattice_values(pad=2)
        prod = a * bv
        values = _lattice_to_modes_padded(prod, self.grid, pad=2)
        return Field(values, self.grid, self.model, self.gamma + other.gamma)

    def time_restricted(self, n_t: int) -> "Field":
        return Field(self.values[:, :, :n_t], self.grid.time_restricted(n_t), self.model, self.gamma)

    # -- IO ----------------------------------------------------------------

    def to_binary(self) -> bytes:
        """Compact dump: magic, dims header, little-endian float64 payload."""
        g = self.grid
        buf = io.BytesIO()
        buf.write(_MAGIC)
        model_text = self.model.to_config_text().encode()
        buf.write(struct.pack("<IIIIII", g.n_x, g.n_modes, g.n_t, g.b, g.f, len(model_text)))
        buf.write(struct.pack("<d", self.gamma))
        buf.write(model_text)
        buf.write(g.x_nodes.astype("<f8").tobytes())
        buf.write(g.t_nodes.astype("<f8").tobytes())
        buf.write(g.modes.astype("<i8").tobytes())
        buf.write(np.ascontiguousarray(self.values).astype("<c16").tobytes())
        return buf.getvalue()

    @classmethod
    def from_binary(cls, data: bytes) -> "Field":
        buf = io.BytesIO(data)
        if buf.read(len(_MAGIC)) != _MAGIC:
            raise ConfigError("bad magic in field dump")
        n_x, n_modes, n_t, b, f, model_len = struct.unpack("<IIIIII", buf.read(24))
        (gamma,) = struct.unpack("<d", buf.read(8))
        model = PhiModel.from_config_text(buf.read(model_len).decode())
        x = np.frombuffer(buf.read(8 * n_x), dtype="<f8")
        t = np.frombuffer(buf.read(8 * n_t), dtype="<f8")
        modes = np.frombuffer(buf.read(8 * n_modes * (b + f)), dtype="<i8").reshape(n_modes, b + f)
        vals = np.frombuffer(buf.read(16 * n_x * n_modes * n_t), dtype="<c16").reshape(n_x, n_modes, n_t)
        return cls(vals.copy(), Grid(x, modes, t, b, f), model, gamma)

    def to_csv(self) -> str:
        """Long-format trajectory: t, x, mode, re, im."""
        g = self.grid
        lines = ["t,x,mode,re,im"]
        for it, t in enumerate(g.t_nodes):
            for m in range(g.n_modes):
                col = self.values[:, m, it]
                for ix, x in enumerate(g.x_nodes):
                    lines.append(f"{t:.17g},{x:.17g},{m},{col[ix].real:.17g},{col[ix].imag:.17g}")
        return "\n".join(lines) + "\n"


def _fft_slot(modes_1d: np.ndarray, P: int) -> np.ndarray:
    return np.mod(modes_1d, P)


def _modes_to_lattice(values: np.ndarray, grid: Grid, shape, pad: int = 1) -> np.ndarray:
    d = grid.b + grid.f
    n_x, _, n_t = values.shape
    if d == 0:
        return values[:, 0, :].real.reshape(n_x, n_t)
    padded = tuple(pad * (P - 1) + P for P in shape) if pad > 1 else tuple(shape)
    spec = np.zeros((n_x,) + padded + (n_t,), dtype=np.complex128)
    slots = [_fft_slot(grid.modes[:, i], padded[i]) for i in range(d)]
    spec[(slice(None), *slots, slice(None))] = values
    axes = tuple(range(1, 1 + d))
    lattice = np.fft.ifftn(spec, axes=axes) * np.prod(padded)
    return lattice.real


def _lattice_to_modes_padded(lattice: np.ndarray, grid: Grid, pad: int) -> np.ndarray:
    d = grid.b + grid.f
    shape = grid.mode_shape()
    if d == 0:
        return lattice.reshape(lattice.shape[0], 1, lattice.shape[-1]).astype(np.complex128)
    padded = tuple(pad * (P - 1) + P for P in shape) if pad > 1 else tuple(shape)
    axes = tuple(range(1, 1 + d))
    spec = np.fft.fftn(lattice, axes=axes) / np.prod(padded)
    slots = [_fft_slot(grid.modes[:, i], padded[i]) for i in range(d)]
    return spec[(slice(None), *slots, slice(None))]


def _lattice_to_modes(lattice: np.ndarray, grid: Grid, shape) -> np.ndarray:
    d = grid.b + grid.f
    n_x = lattice.shape[0]
    n_t = lattice.shape[-1]
    if d == 0:
        return lattice.reshape(n_x, 1, n_t).astype(np.complex128)
    cube = lattice.reshape((n_x,) + tuple(shape) + (n_t,))
    return _lattice_to_modes_padded(cube, grid, pad=1)
