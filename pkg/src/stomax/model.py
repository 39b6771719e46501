"""Continuous problem description: domain, damping, noise spectra.

The model couples the electromagnetic pair u = (E, H) on a cuboid D with a
damping field sigma >= sigma0 > 0, a scalar multiplicative noise channel of
intensity lambda1 and an additive channel of intensity lambda2 (per E/H
component).  Both Wiener processes are sampled from finite Karhunen-Loeve
expansions over a product sine basis that is orthonormal in L2(D).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError

__all__ = [
    "Box",
    "SigmaField",
    "NoiseSpec",
    "ProblemSpec",
    "validate",
    "f_q1",
    "trace_q",
]


@dataclass(frozen=True)
class Box:
    """Axis-aligned cuboid (x_l, x_r) x (y_l, y_r) x (z_l, z_r)."""

    x_l: float
    x_r: float
    y_l: float
    y_r: float
    z_l: float
    z_r: float

    @classmethod
    def cube(cls, length: float = 1.0) -> "Box":
        return cls(0.0, length, 0.0, length, 0.0, length)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([self.x_r - self.x_l, self.y_r - self.y_l, self.z_r - self.z_l])

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.x_l, self.y_l, self.z_l])

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo = self.lower - tol
        hi = self.lower + self.lengths + tol
        return np.all((pts >= lo) & (pts <= hi), axis=-1)


@dataclass(frozen=True)
class SigmaField:
    """Damping field: either a constant or a sampled callable.

    ``sigma0`` is the declared lower bound; sampled values are checked
    against it wherever the field is evaluated.
    """

    sigma0: float
    fn: Callable[[np.ndarray], np.ndarray] | None = None

    @classmethod
    def constant(cls, sigma0: float) -> "SigmaField":
        return cls(sigma0=sigma0, fn=None)

    @classmethod
    def sampled(cls, fn: Callable[[np.ndarray], np.ndarray], sigma0: float) -> "SigmaField":
        return cls(sigma0=sigma0, fn=fn)

    @property
    def is_constant(self) -> bool:
        return self.fn is None

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if self.fn is None:
            return np.full(pts.shape[:-1], self.sigma0)
        return np.asarray(self.fn(pts), dtype=float)


def _sine_axis(values: np.ndarray, lo: float, length: float, orders: np.ndarray) -> np.ndarray:
    """Evaluate sqrt(2/L) sin(2 pi m (s - lo) / L) for each order m.

    Returns an array of shape ``orders.shape + values.shape``.
    """
    phase = 2.0 * np.pi * np.multiply.outer(orders, (values - lo) / length)
    return np.sqrt(2.0 / length) * np.sin(phase)


@dataclass(frozen=True)
class NoiseSpec:
    """Finite Karhunen-Loeve spectrum of one Q-Wiener process.

    ``modes`` holds positive integer index triples (m1, m2, m3); mode m has
    variance weight ``eigenvalues[m] >= 0`` and basis function
    q_m(x, y, z) = q_{m1}(x) q_{m2}(y) q_{m3}(z) with full-period sines that
    are orthonormal in L2 of ``box``.
    """

    box: Box
    modes: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        modes = np.asarray(self.modes, dtype=int)
        eigs = np.asarray(self.eigenvalues, dtype=float)
        if modes.ndim != 2 or modes.shape[1] != 3:
            raise ValueError("modes must be an (M, 3) integer array")
        if eigs.shape != (modes.shape[0],):
            raise ValueError("eigenvalues must match the mode count")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "eigenvalues", eigs)

    @classmethod
    def default(
        cls,
        box: Box,
        per_axis: int = 5,
        decay_r: float = 3.0,
        trace: float | None = None,
    ) -> "NoiseSpec":
        """Spectrum eta_m = (m1^2 + m2^2 + m3^2)^(-decay_r), optionally
        rescaled so that sum(eta) == trace."""
        rng = np.arange(1, per_axis + 1)
        m1, m2, m3 = np.meshgrid(rng, rng, rng, indexing="ij")
        modes = np.column_stack([m1.ravel(), m2.ravel(), m3.ravel()])
        eigs = (modes**2).sum(axis=1).astype(float) ** (-decay_r)
        if trace is not None:
            eigs *= trace / eigs.sum()
        return cls(box=box, modes=modes, eigenvalues=eigs)

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]

    def basis_values(self, points: np.ndarray, check_domain: bool = True) -> np.ndarray:
        """q_m at scattered points; returns shape (n_modes, n_points)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if check_domain and not np.all(self.box.contains(pts)):
            raise DomainError("evaluation point outside the domain box")
        lo = self.box.lower
        ln = self.box.lengths
        out = np.ones((self.n_modes, pts.shape[0]))
        for axis in range(3):
            out *= _sine_axis(pts[:, axis], lo[axis], ln[axis], self.modes[:, axis])
        return out

    def basis_values_grid(self, xs: np.ndarray, ys: np.ndarray, zs: np.ndarray) -> np.ndarray:
        """q_m on a tensor grid; returns shape (n_modes, nx, ny, nz)."""
        lo = self.box.lower
        ln = self.box.lengths
        sx = _sine_axis(np.asarray(xs, dtype=float), lo[0], ln[0], self.modes[:, 0])
        sy = _sine_axis(np.asarray(ys, dtype=float), lo[1], ln[1], self.modes[:, 1])
        sz = _sine_axis(np.asarray(zs, dtype=float), lo[2], ln[2], self.modes[:, 2])
        return np.einsum("mi,mj,mk->mijk", sx, sy, sz)

    def basis_inner(self, i: int, j: int) -> float:
        """Closed-form L2 inner product <q_i, q_j>; equals delta_ij exactly
        for distinct positive integer orders of the full-period sine family."""
        mi, mj = self.modes[i], self.modes[j]
        return 1.0 if np.array_equal(mi, mj) else 0.0


@dataclass(frozen=True)
class ProblemSpec:
    """All physical and stochastic parameters of the damped Maxwell system."""

    box: Box
    sigma: SigmaField
    lambda1: float
    lambda2: Sequence[float]
    q1: NoiseSpec
    q2: NoiseSpec
    trunc_b: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "lambda2", np.asarray(self.lambda2, dtype=float))

    @property
    def lambda2_tilde(self) -> np.ndarray:
        """Six-component additive intensity (lambda2, lambda2)."""
        return np.concatenate([self.lambda2, self.lambda2])

    @property
    def sigma0(self) -> float:
        return self.sigma.sigma0


def validate(spec: ProblemSpec, sample_nodes: np.ndarray | None = None) -> list[str]:
    """Report-style validation; returns the list of violated invariants.

    ``sample_nodes`` optionally supplies points at which a sampled damping
    field is checked against its declared lower bound.
    """
    violations: list[str] = []
    ln = spec.box.lengths
    if np.any(ln <= 0):
        violations.append("degenerate box")
    if spec.sigma.sigma0 <= 0:
        violations.append("sigma0 <= 0")
    if not spec.sigma.is_constant:
        pts = sample_nodes
        if pts is None and not np.any(ln <= 0):
            axes = [np.linspace(spec.box.lower[a], spec.box.lower[a] + ln[a], 9) for a in range(3)]
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
            pts = grid
        if pts is not None:
            vals = spec.sigma(pts)
            if np.any(vals < spec.sigma.sigma0 - 1e-12):
                violations.append("sigma below declared sigma0")
    if spec.trunc_b < 4.0:
        violations.append("trunc_b < 4")
    for label, ns in (("q1", spec.q1), ("q2", spec.q2)):
        if np.any(ns.eigenvalues < 0):
            violations.append(f"{label} eigenvalue < 0")
        if np.any(ns.modes < 1):
            violations.append(f"{label} mode index < 1")
        if not np.isfinite(ns.eigenvalues.sum()):
            violations.append(f"{label} trace not finite")
    if np.asarray(spec.lambda2).shape != (3,):
        violations.append("lambda2 not a 3-vector")
    return violations


def f_q1(spec: ProblemSpec, points: np.ndarray) -> np.ndarray:
    """Pointwise variance density of the multiplicative channel,
    sum_m eta_m^(1) q_m(point)^2; nonnegative everywhere."""
    basis = spec.q1.basis_values(points)
    return np.einsum("m,mp->p", spec.q1.eigenvalues, basis**2)


def trace_q(ns: NoiseSpec) -> float:
    """Total variance weight sum_m eta_m of a spectrum."""
    return float(ns.eigenvalues.sum())
