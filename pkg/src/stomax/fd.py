"""Periodic staggered-grid discrete Maxwell operator.

All six field components are collocated at cell centers (half indices).
The curl stencils difference a two-point average of neighbour values, which
on the collocated storage reduces to the wide centered difference
(Z[j+1] - Z[j-1]) / (2 dz).  This is the unique reading of the half-index
stencils for which the discrete operator is exactly skew-adjoint in the
cell-volume inner product, so the discrete energy identity, the pathwise
contraction factor exp(-sigma0 dt) and the conformal multi-symplectic
budget all hold to solver tolerance rather than to truncation order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ParameterError
from .model import Box, NoiseSpec, SigmaField

__all__ = [
    "StaggeredGrid",
    "FieldState",
    "delta_forward",
    "delta_centered",
    "apply_m",
    "discrete_div",
    "FdOperator",
]

_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class StaggeredGrid:
    """Uniform periodic partition of the box with cached damping values.

    sigma is sampled at the integer nodes (x_i, y_j, z_k) and applied to the
    unknowns stored at the cell centers (x_{i+1/2}, ...), one value per cell.
    """

    box: Box
    counts: tuple[int, int, int]
    sigma: np.ndarray

    def __post_init__(self):
        if any(c < 2 for c in self.counts):
            raise ParameterError("grid needs at least 2 cells per axis")
        if np.any(self.box.lengths <= 0):
            raise ParameterError("degenerate box")
        sig = np.asarray(self.sigma, dtype=float)
        if sig.shape != tuple(self.counts):
            raise ParameterError("sigma array must have one value per cell")
        if np.any(sig <= 0):
            raise ParameterError("sigma must be positive everywhere")
        object.__setattr__(self, "sigma", sig)

    @classmethod
    def build(cls, box: Box, counts: tuple[int, int, int], sigma: SigmaField) -> "StaggeredGrid":
        nodes = cls._nodes(box, counts)
        sig = sigma(nodes)
        if np.any(sig < sigma.sigma0 - 1e-12):
            raise ParameterError("sampled sigma falls below its declared lower bound")
        return cls(box=box, counts=tuple(counts), sigma=sig)

    @staticmethod
    def _nodes(box: Box, counts) -> np.ndarray:
        lo, ln = box.lower, box.lengths
        axes = [lo[a] + ln[a] / counts[a] * np.arange(counts[a]) for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @property
    def spacings(self) -> np.ndarray:
        return self.box.lengths / np.asarray(self.counts)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    def center_axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lo, ln = self.box.lower, self.box.lengths
        return tuple(
            lo[a] + ln[a] / self.counts[a] * (np.arange(self.counts[a]) + 0.5) for a in range(3)
        )

    def centers(self) -> np.ndarray:
        xs, ys, zs = self.center_axes()
        return np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1)


@dataclass
class FieldState:
    """Six scalar arrays on cell centers plus the step counter."""

    u: np.ndarray  # shape (6, nx, ny, nz); components (E1,E2,E3,H1,H2,H3)
    step_index: int = 0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if self.u.ndim != 4 or self.u.shape[0] != 6:
            raise ParameterError("state must have shape (6, nx, ny, nz)")
        if not np.all(np.isfinite(self.u)):
            raise ParameterError("state contains non-finite entries")

    @property
    def e(self) -> np.ndarray:
        return self.u[:3]

    @property
    def h(self) -> np.ndarray:
        return self.u[3:]


def _check_shape(arr: np.ndarray, grid: StaggeredGrid):
    if arr.shape[-3:] != tuple(grid.counts):
        raise ParameterError(f"array shape {arr.shape} does not match grid {grid.counts}")


def delta_forward(arr: np.ndarray, axis: str, grid: StaggeredGrid) -> np.ndarray:
    """(Z[j+1] - Z[j]) / dz with periodic wraparound at the last index."""
    _check_shape(arr, grid)
    ax = _AXES[axis]
    roll_ax = arr.ndim - 3 + ax
    return (np.roll(arr, -1, axis=roll_ax) - arr) / grid.spacings[ax]


def delta_centered(arr: np.ndarray, axis: int, grid: StaggeredGrid) -> np.ndarray:
    """(Z[j+1] - Z[j-1]) / (2 dz), periodic; the curl building block."""
    roll_ax = arr.ndim - 3 + axis
    return (np.roll(arr, -1, axis=roll_ax) - np.roll(arr, 1, axis=roll_ax)) / (
        2.0 * grid.spacings[axis]
    )


def _curl(v: np.ndarray, grid: StaggeredGrid) -> np.ndarray:
    """Centered-difference curl of a 3-component center field (..., 3, nx, ny, nz)."""
    c = v.ndim - 4  # index of the component axis
    v1, v2, v3 = np.moveaxis(v, c, 0)
    out = np.empty_like(v)
    comp = np.moveaxis(out, c, 0)
    comp[0] = delta_centered(v3, 1, grid) - delta_centered(v2, 2, grid)
    comp[1] = delta_centered(v1, 2, grid) - delta_centered(v3, 0, grid)
    comp[2] = delta_centered(v2, 0, grid) - delta_centered(v1, 1, grid)
    return out


def apply_m(u: np.ndarray, grid: StaggeredGrid) -> np.ndarray:
    """Discrete Maxwell operator (curl H, -curl E); linear, exactly
    skew-adjoint in the cell-volume inner product on periodic grids."""
    _check_shape(u, grid)
    if u.shape[-4] != 6:
        raise ParameterError("expected 6 components")
    out = np.empty_like(u)
    out[..., :3, :, :, :] = _curl(u[..., 3:, :, :, :], grid)
    out[..., 3:, :, :, :] = -_curl(u[..., :3, :, :, :], grid)
    return out


def discrete_div(vec: np.ndarray, grid: StaggeredGrid) -> np.ndarray:
    """Divergence diagnostic of a 3-component field, built from the same
    centered differences as the curl so that div(curl v) vanishes exactly."""
    _check_shape(vec, grid)
    if vec.shape[-4] != 3:
        raise ParameterError("expected 3 components")
    comp = np.moveaxis(vec, vec.ndim - 4, 0)
    return (
        delta_centered(comp[0], 0, grid)
        + delta_centered(comp[1], 1, grid)
        + delta_centered(comp[2], 2, grid)
    )


class _FdNoiseBasis:
    """Cached sine-basis values at cell centers; turns KL coefficient
    vectors (optionally batched) into center fields."""

    def __init__(self, ns: NoiseSpec, grid: StaggeredGrid):
        xs, ys, zs = grid.center_axes()
        q = ns.basis_values_grid(xs, ys, zs)  # (M, nx, ny, nz)
        self._q = q.reshape(ns.n_modes, -1)
        self._shape = tuple(grid.counts)

    def field(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        flat = coeffs @ self._q
        return flat.reshape(coeffs.shape[:-1] + self._shape)


class _FftResolvent:
    """Exact application of (I - (dt/2) M)^(-1) via real-FFT diagonalization.

    Per Fourier mode the 6x6 block reduces to cross products with the real
    symbol vector theta, solved in closed form by a Sherman-Morrison step.
    """

    def __init__(self, grid: StaggeredGrid, dt: float):
        self.grid = grid
        self.dt = dt
        n = grid.counts
        d = grid.spacings
        freqs = [
            np.sin(2.0 * np.pi * np.fft.fftfreq(n[0])) / d[0],
            np.sin(2.0 * np.pi * np.fft.fftfreq(n[1])) / d[1],
            np.sin(2.0 * np.pi * np.fft.rfftfreq(n[2])) / d[2],
        ]
        theta = np.meshgrid(*freqs, indexing="ij")
        self._theta = np.stack(theta)  # (3, nx, ny, nz//2+1), real
        self._theta2 = np.sum(self._theta**2, axis=0)

    def _solve_hat(self, b_e, b_h, c):
        th = self._theta
        alpha = 1.0 + c * c * self._theta2
        rhs = b_e + 1j * c * np.cross(th, b_h, axisa=0, axisb=-4, axisc=-4)
        proj = (th[0] * rhs[..., 0, :, :, :] + th[1] * rhs[..., 1, :, :, :]
                + th[2] * rhs[..., 2, :, :, :])
        x_e = (rhs + (c * c) * th * proj[..., None, :, :, :]) / alpha
        x_h = b_h - 1j * c * np.cross(th, x_e, axisa=0, axisb=-4, axisc=-4)
        return x_e, x_h

    def solve(self, b: np.ndarray, transpose: bool = False) -> np.ndarray:
        """Solve (I - (dt/2) M) x = b (or its transpose, i.e. -dt)."""
        c = self.dt / 2.0
        if transpose:
            c = -c
        nz = self.grid.counts[2]
        bh = np.fft.rfftn(b, axes=(-3, -2, -1))
        x_e, x_h = self._solve_hat(bh[..., :3, :, :, :], bh[..., 3:, :, :, :], c)
        xh = np.concatenate([x_e, x_h], axis=-4)
        return np.fft.irfftn(xh, s=(self.grid.counts[0], self.grid.counts[1], nz),
                             axes=(-3, -2, -1))


class FdOperator:
    """Adapter wiring the FD grid into the generic stepping interface."""

    kind = "fd"

    def __init__(self, grid: StaggeredGrid):
        self.grid = grid
        self._resolvents: dict[float, _FftResolvent] = {}
        self._bases: dict[int, _FdNoiseBasis] = {}

    # -- linear structure -------------------------------------------------
    def apply(self, u: np.ndarray) -> np.ndarray:
        return apply_m(u, self.grid)

    def inner(self, u: np.ndarray, v: np.ndarray):
        return self.grid.cell_volume * np.sum(u * v, axis=(-4, -3, -2, -1))

    def norm2(self, u: np.ndarray):
        return self.inner(u, u)

    def damp(self, u: np.ndarray, dt: float) -> np.ndarray:
        return u * np.exp(-self.grid.sigma * dt)

    def damp_factor(self, dt: float) -> np.ndarray:
        return np.exp(-self.grid.sigma * dt)

    def resolvent(self, dt: float) -> _FftResolvent:
        key = float(dt)
        if key not in self._resolvents:
            self._resolvents[key] = _FftResolvent(self.grid, key)
        return self._resolvents[key]

    def solve_shifted(self, dt: float, b: np.ndarray) -> np.ndarray:
        return self.resolvent(dt).solve(b)

    def solve_shifted_adjoint(self, dt: float, b: np.ndarray) -> np.ndarray:
        return self.resolvent(dt).solve(b, transpose=True)

    # -- noise coupling ----------------------------------------------------
    def noise_basis(self, ns: NoiseSpec) -> _FdNoiseBasis:
        key = id(ns)
        if key not in self._bases:
            self._bases[key] = _FdNoiseBasis(ns, self.grid)
        return self._bases[key]

    @staticmethod
    def apply_j(u: np.ndarray) -> np.ndarray:
        """Block rotation J(E, H) = (-H, E)."""
        return np.concatenate([-u[..., 3:, :, :, :], u[..., :3, :, :, :]], axis=-4)

    def mult_project(self, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Pointwise J u * w; the FD projection is the identity."""
        return self.apply_j(u) * w[..., None, :, :, :]

    def add_project(self, w: np.ndarray, lam2t: np.ndarray) -> np.ndarray:
        return lam2t[:, None, None, None] * w[..., None, :, :, :]

    # -- diagnostics -------------------------------------------------------
    def curl_norm2(self, u: np.ndarray):
        return self.norm2(self.apply(u))

    def div_norm2(self, u: np.ndarray):
        d_e = discrete_div(u[..., :3, :, :, :], self.grid)
        d_h = discrete_div(u[..., 3:, :, :, :], self.grid)
        return self.grid.cell_volume * np.sum(d_e**2 + d_h**2, axis=(-3, -2, -1))

    # -- states ------------------------------------------------------------
    def zero_state(self) -> np.ndarray:
        return np.zeros((6,) + tuple(self.grid.counts))

    def lift(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Sample a callable 6-vector field at the cell centers."""
        vals = fn(self.grid.centers())
        u = np.moveaxis(np.asarray(vals, dtype=float), -1, 0)
        if u.shape != (6,) + tuple(self.grid.counts):
            raise ParameterError("initial profile must return 6 components per point")
        return u

    def random_state(self, rng: np.random.Generator, batch: tuple[int, ...] = ()) -> np.ndarray:
        return rng.standard_normal(batch + (6,) + tuple(self.grid.counts))

    def probe(self, u: np.ndarray, point, component: int = 0):
        """Field component at the cell center nearest to the point."""
        lo, ln = self.grid.box.lower, self.grid.box.lengths
        idx = []
        for a in range(3):
            frac = (point[a] - lo[a]) / ln[a] * self.grid.counts[a] - 0.5
            idx.append(int(np.clip(np.rint(frac), 0, self.grid.counts[a] - 1)))
        return u[..., component, idx[0], idx[1], idx[2]]
