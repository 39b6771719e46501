"""Q-Wiener increment sampling with per-step truncation of the normals.

One increment over a step of size dt has Karhunen-Loeve coefficients
coeff_m = sqrt(eta_m * dt) * z_m with independent standard normals z_m.
For the multiplicative channel the normals are clipped at +-A(dt) with
A(dt) = sqrt(2 b |ln dt|); the raw normals are retained so that increments
can be summed across steps and re-clipped at the coarser level.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .model import NoiseSpec

__all__ = [
    "WienerIncrement",
    "NoiseSampler",
    "compute_a",
    "truncate_normal",
    "sample_increment",
    "evaluate_on_nodes",
    "coarsen",
    "truncation_gap_second_moment",
    "dump_increments",
    "load_increments",
]


def compute_a(dt: float, b: float) -> float:
    """Clip level A = sqrt(2 b |ln dt|); requires 0 < dt < 1 and b >= 4."""
    if not 0.0 < dt < 1.0:
        raise ParameterError(f"dt must lie in (0, 1), got {dt}")
    if b < 4.0:
        raise ParameterError(f"truncation exponent b must be >= 4, got {b}")
    return float(np.sqrt(2.0 * b * abs(np.log(dt))))


def truncate_normal(xi, a):
    """Clip a draw (or array of draws) to the band [-a, a]."""
    if np.any(np.asarray(a) <= 0):
        raise ParameterError("clip level must be positive")
    return np.clip(xi, -a, a)


@dataclass(frozen=True)
class WienerIncrement:
    """One step's KL coefficient vector, with raw-normal provenance."""

    coeffs: np.ndarray
    dt: float
    truncated: bool
    raw_normals: np.ndarray
    node_cache: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))
        object.__setattr__(self, "raw_normals", np.asarray(self.raw_normals, dtype=float))
        if self.coeffs.shape != self.raw_normals.shape:
            raise ParameterError("coeffs and raw_normals must have equal length")

    @property
    def n_modes(self) -> int:
        return self.coeffs.shape[0]


def sample_increment(
    ns: NoiseSpec,
    dt: float,
    rng: np.random.Generator,
    truncated: bool = False,
    b: float = 4.0,
) -> WienerIncrement:
    """Draw one increment; successive calls on one rng stream are independent."""
    if dt <= 0:
        raise ParameterError("dt must be positive")
    xi = rng.standard_normal(ns.n_modes)
    z = truncate_normal(xi, compute_a(dt, b)) if truncated else xi
    coeffs = np.sqrt(ns.eigenvalues * dt) * z
    return WienerIncrement(coeffs=coeffs, dt=float(dt), truncated=truncated, raw_normals=xi)


def evaluate_on_nodes(inc: WienerIncrement, ns: NoiseSpec, nodes: np.ndarray) -> np.ndarray:
    """Evaluate the increment field sum_m coeff_m q_m(p) at scattered nodes."""
    if inc.n_modes != ns.n_modes:
        raise ParameterError("increment and spectrum mode counts differ")
    basis = ns.basis_values(nodes)
    return inc.coeffs @ basis


def coarsen(
    fine_increments: list[WienerIncrement],
    ns: NoiseSpec,
    b: float = 4.0,
    truncated: bool = False,
) -> WienerIncrement:
    """Combine consecutive fine increments into one coarse increment.

    Untruncated coefficients add exactly (Brownian additivity).  In the
    truncated case the coarse standard normal is rebuilt from the raw fine
    normals, z = sum(xi) / sqrt(L), and re-clipped at the coarse level
    A(L * dt_f); clipping does not commute with summation, which is why the
    raw normals are carried along.
    """
    if not fine_increments:
        raise ParameterError("need at least one fine increment")
    dts = {inc.dt for inc in fine_increments}
    if len(dts) > 1:
        raise ParameterError("fine increments must share one dt")
    n_fine = len(fine_increments)
    dt_f = fine_increments[0].dt
    dt_c = n_fine * dt_f
    xi_sum = np.sum([inc.raw_normals for inc in fine_increments], axis=0)
    z = xi_sum / np.sqrt(n_fine)
    if truncated:
        z = truncate_normal(z, compute_a(dt_c, b))
        coeffs = np.sqrt(ns.eigenvalues * dt_c) * z
    else:
        coeffs = np.sum([inc.coeffs for inc in fine_increments], axis=0)
    return WienerIncrement(coeffs=coeffs, dt=dt_c, truncated=truncated, raw_normals=z)


def truncation_gap_second_moment(a: float) -> float:
    """E|clip(xi, a) - xi|^2 for a standard normal, in closed form:
    2 [(1 + a^2) Phi(-a) - a phi(a)]."""
    from scipy.special import ndtr

    phi = np.exp(-0.5 * a * a) / np.sqrt(2.0 * np.pi)
    return float(2.0 * ((1.0 + a * a) * ndtr(-a) - a * phi))


class NoiseSampler:
    """Counter-based independent streams, one per (trajectory, process).

    Stream identity is (seed, process_index), so trajectories are
    reproducible regardless of execution order.
    """

    W1_STREAM = 0
    W2_STREAM = 1

    def __init__(self, spec, seed: int):
        self.spec = spec
        self.seed = int(seed)
        self._g1 = self._make_stream(self.W1_STREAM)
        self._g2 = self._make_stream(self.W2_STREAM)

    def _make_stream(self, process: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence((self.seed, process))))

    def w1(self, dt: float, truncated: bool = True) -> WienerIncrement:
        return sample_increment(self.spec.q1, dt, self._g1, truncated=truncated, b=self.spec.trunc_b)

    def w2(self, dt: float) -> WienerIncrement:
        # the additive channel is never truncated
        return sample_increment(self.spec.q2, dt, self._g2, truncated=False)


_MAGIC = b"SWIN"
_VERSION = 1


def dump_increments(path, increments: list[WienerIncrement]) -> None:
    """Binary dump for exact replay: little-endian float64 coefficient rows
    behind a header carrying mode count, dt and the truncation flag."""
    if not increments:
        raise ParameterError("nothing to dump")
    n_modes = increments[0].n_modes
    dt = increments[0].dt
    truncated = increments[0].truncated
    for inc in increments:
        if inc.n_modes != n_modes or inc.dt != dt or inc.truncated != truncated:
            raise ParameterError("all increments in one dump must share shape, dt and flag")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIdBI", _VERSION, n_modes, dt, int(truncated), len(increments)))
        for inc in increments:
            fh.write(np.asarray(inc.coeffs, dtype="<f8").tobytes())
            fh.write(np.asarray(inc.raw_normals, dtype="<f8").tobytes())


def load_increments(path) -> list[WienerIncrement]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ParameterError("not an increment dump")
        version, n_modes, dt, truncated, count = struct.unpack("<IIdBI", fh.read(21))
        if version != _VERSION:
            raise ParameterError(f"unsupported dump version {version}")
        out = []
        for _ in range(count):
            coeffs = np.frombuffer(fh.read(8 * n_modes), dtype="<f8").copy()
            raw = np.frombuffer(fh.read(8 * n_modes), dtype="<f8").copy()
            out.append(WienerIncrement(coeffs=coeffs, dt=dt, truncated=bool(truncated), raw_normals=raw))
    return out
