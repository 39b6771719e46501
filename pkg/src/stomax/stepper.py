"""Conformal modified midpoint stepping for both discretizations.

One step solves

    u' - e u = (dt/2) M (u' + e u) + (lam1/2) P[J (u' + e u) dW1bar]
               + P[lam2_tilde dW2],        e = exp(-sigma dt) pointwise,

with P the identity (FD, pointwise products) or the L2 projection (dG).
The default solver is a fixed-point iteration on the resolvent form

    x_{k+1} = (I - (dt/2) M)^{-1} [ b + (lam1/2) P(J x_k dW1bar) ],

whose contraction factor is bounded by (|lam1|/2) ||dW1bar||_inf since the
resolvent of the (dissipative-plus-skew) operator is a contraction; the
clipping of the normals makes that factor O(sqrt(dt) ln(1/dt)) uniformly.
A restarted-GMRES path on the combined operator is kept for the regime
where the factor approaches one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import TrajectoryStats
from .errors import ParameterError, StepError
from .linalg import MatrixFreeOperator, solve
from .model import ProblemSpec
from .noise import NoiseSampler

__all__ = [
    "StepperConfig",
    "step",
    "step_pair",
    "run_trajectory",
    "resolvent_norm_probe",
    "tdt_norm_probe",
    "default_profile",
    "make_initial_state",
]

_FIXED_POINT_SWITCH = 0.5


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    solver: str = "fixed_point"
    tol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self):
        if self.dt <= 0:
            raise ParameterError("dt must be positive")
        if self.tol <= 0:
            raise ParameterError("tol must be positive")
        if self.max_iter < 1:
            raise ParameterError("max_iter must be at least 1")
        if self.solver not in ("fixed_point", "krylov"):
            raise ParameterError(f"unknown solver {self.solver!r}")


def _check_dt_guard(spec: ProblemSpec, dt: float):
    if dt > 1.0 / spec.sigma0:
        raise ParameterError(
            f"dt={dt} exceeds the guard 1/sigma0={1.0 / spec.sigma0}; "
            "the proven regime requires dt <= 1/sigma0"
        )


def _residual_norm(op, x, ue, w1, w2, spec, dt):
    r = x - ue - (dt / 2.0) * op.apply(x + ue)
    if w1 is not None and spec.lambda1 != 0.0:
        r = r - (spec.lambda1 / 2.0) * op.mult_project(x + ue, w1)
    if w2 is not None:
        r = r - op.add_project(w2, spec.lambda2_tilde)
    return np.sqrt(op.norm2(r))


def step(u, op, dw1_field, dw2_field, spec: ProblemSpec, cfg: StepperConfig):
    """Advance one step; noise enters as already-evaluated fields
    (dW1bar clipped upstream).  Returns the new state array."""
    _check_dt_guard(spec, cfg.dt)
    dt = cfg.dt
    lam1 = spec.lambda1
    ue = op.damp(u, dt)
    b = ue + (dt / 2.0) * op.apply(ue)
    if dw1_field is not None and lam1 != 0.0:
        b = b + (lam1 / 2.0) * op.mult_project(ue, dw1_field)
    if dw2_field is not None:
        b = b + op.add_project(dw2_field, spec.lambda2_tilde)

    norm_b = np.atleast_1d(np.sqrt(op.norm2(b)))
    if dw1_field is None or lam1 == 0.0:
        x = op.solve_shifted(dt, b)
    else:
        contraction = abs(lam1) / 2.0 * float(np.max(np.abs(dw1_field)))
        solver = cfg.solver
        if solver == "fixed_point" and contraction >= _FIXED_POINT_SWITCH:
            solver = "krylov"
        if solver == "fixed_point":
            floor = 0.05 * cfg.tol * np.maximum(norm_b, 1e-300)
            x = op.solve_shifted(dt, b)
            for _ in range(cfg.max_iter):
                x_new = op.solve_shifted(dt, b + (lam1 / 2.0) * op.mult_project(x, dw1_field))
                delta = np.atleast_1d(np.sqrt(op.norm2(x_new - x)))
                x = x_new
                if np.all(delta <= floor):
                    break
            else:
                raise StepError("fixed-point iteration did not converge",
                                residual=float(np.max(delta)))
        else:
            x = _krylov_step(op, b, dw1_field, lam1, dt, cfg)

    if not np.all(np.isfinite(x)):
        raise StepError("non-finite state after step")
    res = _residual_norm(op, x, ue, dw1_field if lam1 != 0.0 else None, dw2_field, spec, dt)
    rel = np.max(np.atleast_1d(res) / np.maximum(norm_b, 1e-300))
    if rel > cfg.tol:
        raise StepError(f"step residual {rel:.3e} above tolerance {cfg.tol:.3e}",
                        residual=float(rel))
    return x


def _krylov_step(op, b, w1, lam1, dt, cfg):
    """Per-step GMRES on the combined operator, one batch element at a time."""
    core_ndim = 4 if op.kind == "fd" else 3   # (6,nx,ny,nz) vs (nc,6,4)
    lead = b.shape[: b.ndim - core_ndim]
    core = b.shape[b.ndim - core_ndim:]
    w_core_ndim = 3 if op.kind == "fd" else 2
    w_shared = w1.ndim == w_core_ndim

    def solve_one(b_one, w_one):
        def apply_full(v_flat):
            v = v_flat.reshape(core)
            out = v - (dt / 2.0) * op.apply(v) - (lam1 / 2.0) * op.mult_project(v, w_one)
            return out.ravel()

        x, _, _ = solve(apply_full, b_one.ravel(), tol=0.1 * cfg.tol,
                        max_iter=50 * cfg.max_iter, restart=30)
        return x.reshape(core)

    if not lead:
        return solve_one(b, w1)
    flat_b = b.reshape((-1,) + core)
    flat_w = None if w_shared else w1.reshape((-1,) + w1.shape[-w_core_ndim:])
    out = np.empty_like(flat_b)
    for i in range(flat_b.shape[0]):
        out[i] = solve_one(flat_b[i], w1 if w_shared else flat_w[i])
    return out.reshape(b.shape)


def step_pair(u_a, u_b, op, dw1_field, dw2_field, spec, cfg):
    """Advance two states with identical noise fields; their difference then
    follows the homogeneous scheme (no additive forcing)."""
    stacked = np.stack([u_a, u_b])
    out = step(stacked, op, dw1_field, dw2_field, spec, cfg)
    return out[0], out[1]


def default_profile(box, amplitude: float = 1.0):
    """Smooth divergence-free periodic profile used as the initial state."""
    lo, ln = box.lower, box.lengths

    def fn(pts):
        x = 2.0 * np.pi * (pts[..., 0] - lo[0]) / ln[0]
        y = 2.0 * np.pi * (pts[..., 1] - lo[1]) / ln[1]
        z = 2.0 * np.pi * (pts[..., 2] - lo[2]) / ln[2]
        return amplitude * np.stack(
            [np.sin(y), np.sin(z), np.sin(x), np.sin(z), np.sin(x), np.sin(y)], axis=-1
        )

    return fn


def make_initial_state(op, initial="sine", amplitude: float = 1.0):
    if isinstance(initial, np.ndarray):
        return initial
    if initial == "zero":
        return op.zero_state()
    if initial == "sine":
        return op.lift(default_profile(op_box(op), amplitude))
    raise ParameterError(f"unknown initial condition {initial!r}")


def op_box(op):
    return op.grid.box if op.kind == "fd" else op.mesh.box


def run_trajectory(
    spec: ProblemSpec,
    op,
    cfg: StepperConfig,
    n_steps: int,
    seed: int,
    observables: dict | None = None,
    initial="sine",
    truncated: bool = True,
) -> TrajectoryStats:
    """Run one trajectory and record per-step scalar diagnostics.

    Deterministic for fixed seed: noise streams are (seed, process)-keyed.
    """
    _check_dt_guard(spec, cfg.dt)
    sampler = NoiseSampler(spec, seed)
    basis1 = op.noise_basis(spec.q1) if spec.lambda1 != 0.0 else None
    basis2 = op.noise_basis(spec.q2)
    probe_pt = op_box(op).lower + 0.37 * op_box(op).lengths
    obs = observables or {
        "norm": lambda o, u: float(np.sqrt(o.norm2(u))),
        "probe_e1": lambda o, u: float(o.probe(u, probe_pt, component=0)),
    }

    u = make_initial_state(op, initial)
    times = [0.0]
    records = {name: [fn(op, u)] for name, fn in obs.items()}
    norm2 = [float(op.norm2(u))]
    curl2 = [float(op.curl_norm2(u))]
    div2 = [float(op.div_norm2(u))]
    for n in range(n_steps):
        w1 = basis1.field(sampler.w1(cfg.dt, truncated=truncated).coeffs) if spec.lambda1 else None
        w2 = basis2.field(sampler.w2(cfg.dt).coeffs)
        try:
            u = step(u, op, w1, w2, spec, cfg)
        except StepError as err:
            err.step_index = n
            raise
        times.append((n + 1) * cfg.dt)
        norm2.append(float(op.norm2(u)))
        curl2.append(float(op.curl_norm2(u)))
        div2.append(float(op.div_norm2(u)))
        for name, fn in obs.items():
            records[name].append(fn(op, u))
    norm2 = np.asarray(norm2)
    return TrajectoryStats(
        times=np.asarray(times),
        norm2=norm2,
        energy=norm2.copy(),
        curl2=np.asarray(curl2),
        div2=np.asarray(div2),
        observables={k: np.asarray(v) for k, v in records.items()},
    )


def deterministic_step_map(op, dt: float, n: int = 1):
    """Apply/adjoint closures of the n-fold noise-free step map
    (S_dt)^n = [(I - dt/2 M)^(-1) (I + dt/2 M) e^(-sigma dt)]^n .

    The adjoint in the discretization's own inner product reverses the
    factors: D (I + (dt/2) M*) (I - (dt/2) M*)^(-1) per power, with
    M* = -M on the FD grid and M* = Minv B^T on the dG space.
    """

    def fwd(v):
        x = v
        for _ in range(n):
            x = op.damp(x, dt)
            x = op.solve_shifted(dt, x + (dt / 2.0) * op.apply(x))
        return x

    def adj(v):
        x = v
        for _ in range(n):
            x = op.solve_shifted_adjoint(dt, x)
            x = x + (dt / 2.0) * _apply_adjoint(op, x)
            x = op.damp(x, dt)
        return x

    return fwd, adj


def _apply_adjoint(op, v):
    if op.kind == "fd":
        return -op.apply(v)
    flat, lead = op._flatten(v)
    from .dg import apply_mass_inverse

    out = op.bform.T @ flat
    return apply_mass_inverse(op.mesh, op._unflatten(out, lead))


def _norm_probe(op, fwd, adj, iters, tol, seed):
    from .linalg import operator_norm_est

    core_shape = (6,) + tuple(op.grid.counts) if op.kind == "fd" else (op.mesh.n_cells, 6, 4)
    dim = int(np.prod(core_shape))

    mf = MatrixFreeOperator(
        shape=(dim, dim),
        apply=lambda x: fwd(x.reshape(core_shape)).ravel(),
        apply_adjoint=lambda x: adj(x.reshape(core_shape)).ravel(),
    )

    def inner(x, y):
        return float(op.inner(x.reshape(core_shape), y.reshape(core_shape)))

    est = operator_norm_est(mf, iterations=iters, tol=tol, seed=seed, inner=inner)
    return est


def resolvent_norm_probe(op, dt: float, n: int = 1, iters: int = 300, tol: float = 1e-12,
                         seed: int = 0):
    """Power-iteration estimate of the operator norm of the n-fold
    deterministic step map; requires constant damping on the dG path."""
    fwd, adj = deterministic_step_map(op, dt, n)
    return _norm_probe(op, fwd, adj, iters, tol, seed)


def tdt_norm_probe(op, dt: float, iters: int = 300, tol: float = 1e-12, seed: int = 0):
    """Norm estimate of the resolvent T_dt = (I - dt/2 M)^(-1) alone."""
    fwd = lambda v: op.solve_shifted(dt, v)
    adj = lambda v: op.solve_shifted_adjoint(dt, v)
    return _norm_probe(op, fwd, adj, iters, tol, seed)
