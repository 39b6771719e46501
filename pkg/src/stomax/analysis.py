"""Convergence-order fits, empirical-measure distances and moment tracking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

__all__ = [
    "TrajectoryStats",
    "EmpiricalMeasure",
    "ms_error",
    "fit_order",
    "OrderFit",
    "wasserstein2_1d",
    "mixing_rate",
    "ergodic_average",
    "RunningMoments",
]


@dataclass
class TrajectoryStats:
    """Per-step scalar diagnostics of one trajectory."""

    times: np.ndarray
    norm2: np.ndarray
    energy: np.ndarray
    curl2: np.ndarray
    div2: np.ndarray
    observables: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        n = self.times.shape[0]
        for name in ("norm2", "energy", "curl2", "div2"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ParameterError(f"{name} length does not match times")
            if not np.all(np.isfinite(arr)):
                raise ParameterError(f"{name} contains non-finite values")
            setattr(self, name, arr)
        self.observables = {k: np.asarray(v, dtype=float) for k, v in self.observables.items()}
        for k, v in self.observables.items():
            if v.shape != (n,):
                raise ParameterError(f"observable {k} length does not match times")

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1

    def column_names(self) -> list[str]:
        return ["step", "t", "norm2", "energy", "curlnorm2", "divnorm2"] + sorted(self.observables)

    def rows(self):
        names = sorted(self.observables)
        for i, t in enumerate(self.times):
            yield [i, t, self.norm2[i], self.energy[i], self.curl2[i], self.div2[i]] + [
                self.observables[k][i] for k in names
            ]


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Sorted scalar samples of one observable."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.sort(np.asarray(self.samples, dtype=float))
        if arr.size == 0:
            raise ParameterError("empirical measure needs at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("samples must be finite")
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.size

    def quantiles(self, q: np.ndarray) -> np.ndarray:
        n = len(self)
        grid = (np.arange(n) + 0.5) / n
        return np.interp(q, grid, self.samples)


def wasserstein2_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Quadratic Wasserstein distance on the line via quantile coupling.

    For equal sample counts this is the RMS of matched order statistics.
    For unequal counts both empirical quantile staircases are evaluated on
    their merged breakpoint grid, which computes the L2([0,1]) distance
    between the quantile functions exactly (so symmetry and the triangle
    inequality hold across arbitrary sample counts).
    """
    n, m = len(mu), len(nu)
    if n == m:
        diff = mu.samples - nu.samples
        return float(np.sqrt(np.mean(diff**2)))
    edges = np.union1d(np.arange(1, n) / n, np.arange(1, m) / m)
    edges = np.concatenate([[0.0], edges, [1.0]])
    widths = np.diff(edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    a = mu.samples[np.minimum((mids * n).astype(int), n - 1)]
    b = nu.samples[np.minimum((mids * m).astype(int), m - 1)]
    return float(np.sqrt(np.sum(widths * (a - b) ** 2)))


@dataclass(frozen=True)
class OrderFit:
    slope: float
    intercept: float
    r2: float


def fit_order(step_sizes, errors) -> OrderFit:
    """Least-squares fit of log(error) against log(step size)."""
    hs = np.asarray(step_sizes, dtype=float)
    es = np.asarray(errors, dtype=float)
    if hs.shape != es.shape or hs.size < 3:
        raise ParameterError("need at least 3 (step, error) pairs")
    if np.any(hs <= 0) or np.any(es <= 0):
        raise ParameterError("step sizes and errors must be positive")
    x, y = np.log(hs), np.log(es)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - float(np.sum(resid**2) / ss_tot) if ss_tot > 0 else 1.0
    return OrderFit(slope=float(slope), intercept=float(intercept), r2=r2)


def ms_error(coarse_snapshots, reference_snapshots, inner) -> float:
    """Mean-square error max_t sqrt(E ||u_coarse(t) - u_ref(t)||^2).

    Both arguments are sequences of state arrays at matching times, each
    carrying a leading trajectory axis; the trajectories must be driven by
    coarsened/fine versions of the same noise paths.
    """
    if len(coarse_snapshots) != len(reference_snapshots):
        raise ParameterError("snapshot sequences must have equal length")
    if len(coarse_snapshots) == 0:
        raise ParameterError("need at least one snapshot")
    worst = 0.0
    for uc, ur in zip(coarse_snapshots, reference_snapshots):
        if uc.shape != ur.shape:
            raise ParameterError("paired snapshots must have identical shapes")
        sq = inner(uc - ur, uc - ur)
        worst = max(worst, float(np.sqrt(np.mean(sq))))
    return worst


def mixing_rate(times, dnorms) -> float:
    """Slope of log ||d^n|| against t for a shared-noise difference run."""
    t = np.asarray(times, dtype=float)
    d = np.asarray(dnorms, dtype=float)
    if np.any(d <= 0):
        raise ParameterError("difference norms must stay positive for a rate fit")
    slope, _ = np.polyfit(t, np.log(d), 1)
    return float(slope)


def ergodic_average(stats: TrajectoryStats, name: str, burn_in: float = 0.0) -> float:
    """Time average of one recorded observable after a burn-in time."""
    if name in ("norm2", "energy", "curl2", "div2"):
        series = getattr(stats, name)
    elif name in stats.observables:
        series = stats.observables[name]
    else:
        raise ParameterError(f"unknown observable {name!r}")
    mask = stats.times >= burn_in
    if not np.any(mask):
        raise ParameterError("burn-in exceeds the run length")
    return float(series[mask].mean())


class RunningMoments:
    """Mean/variance accumulator with associative, order-independent merges."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def push(self, values) -> "RunningMoments":
        other = RunningMoments()
        arr = np.asarray(values, dtype=float).ravel()
        other.count = arr.size
        if arr.size:
            other.mean = float(arr.mean())
            other.m2 = float(((arr - other.mean) ** 2).sum())
        return self.merge(other)

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean, other.m2
            return self
        delta = other.mean - self.mean
        total = self.count + other.count
        self.m2 = self.m2 + other.m2 + delta**2 * self.count * other.count / total
        self.mean = self.mean + delta * other.count / total
        self.count = total
        return self

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def std_error(self) -> float:
        return float(np.sqrt(self.variance / self.count)) if self.count else 0.0
