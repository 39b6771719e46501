"""Minimal matrix-free linear algebra: restarted GMRES and norm estimation.

The per-step systems are identity-dominated and non-symmetric (skew shifts),
so a short-restart GMRES without preconditioning converges in a handful of
iterations; a preconditioner hook is provided anyway.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ParameterError, SolverError

__all__ = ["MatrixFreeOperator", "solve", "operator_norm_est", "NormEstimate"]


@dataclass(frozen=True)
class MatrixFreeOperator:
    """Square linear operator given by an apply closure (optionally its
    adjoint); linearity is spot-checked by tests, not enforced here."""

    shape: tuple[int, int]
    apply: Callable[[np.ndarray], np.ndarray]
    apply_adjoint: Callable[[np.ndarray], np.ndarray] | None = None

    @classmethod
    def from_matrix(cls, a) -> "MatrixFreeOperator":
        return cls(shape=a.shape, apply=lambda x: a @ x, apply_adjoint=lambda x: a.T @ x)


def _as_apply(a):
    if isinstance(a, MatrixFreeOperator):
        return a.apply, a.shape
    if callable(a):
        return a, None
    return (lambda x: a @ x), a.shape


def solve(
    a,
    b: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 500,
    restart: int = 30,
    preconditioner: Callable[[np.ndarray], np.ndarray] | None = None,
    x0: np.ndarray | None = None,
):
    """Restarted GMRES for A x = b with right preconditioning.

    Returns (x, iterations, residual) with ||A x - b|| <= tol * ||b||;
    raises SolverError on breakdown or when the iteration cap is reached.
    """
    apply_a, shape = _as_apply(a)
    b = np.asarray(b, dtype=float)
    if shape is not None and shape[0] != shape[1]:
        raise ParameterError("solve requires a square operator")
    if not np.all(np.isfinite(b)):
        raise ParameterError("right-hand side contains non-finite entries")
    n = b.shape[0]
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return np.zeros_like(b), 0, 0.0
    target = tol * norm_b
    mfun = preconditioner if preconditioner is not None else (lambda v: v)

    x = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=float).copy()
    total_iters = 0
    residual = np.inf
    while total_iters < max_iter:
        r = b - apply_a(x)
        beta = np.linalg.norm(r)
        if beta <= target:
            return x, total_iters, beta
        m = min(restart, max_iter - total_iters)
        basis = np.zeros((m + 1, n))
        h = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        basis[0] = r / beta
        g[0] = beta
        k_used = 0
        for k in range(m):
            w = apply_a(mfun(basis[k]))
            for i in range(k + 1):
                h[i, k] = w @ basis[i]
                w -= h[i, k] * basis[i]
            h_next = np.linalg.norm(w)
            h[k + 1, k] = h_next
            # Givens rotations keep a running residual estimate
            for i in range(k):
                tmp = cs[i] * h[i, k] + sn[i] * h[i + 1, k]
                h[i + 1, k] = -sn[i] * h[i, k] + cs[i] * h[i + 1, k]
                h[i, k] = tmp
            denom = np.hypot(h[k, k], h[k + 1, k])
            if denom == 0.0:
                raise SolverError("GMRES breakdown (zero Hessenberg column)",
                                  residual=residual, iterations=total_iters)
            cs[k] = h[k, k] / denom
            sn[k] = h[k + 1, k] / denom
            h[k, k] = denom
            h[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            k_used = k + 1
            total_iters += 1
            residual = abs(g[k + 1])
            if residual <= target or h_next == 0.0:
                break
            if k + 1 < m:
                basis[k + 1] = w / h_next
        y = np.linalg.solve(h[:k_used, :k_used], g[:k_used])
        x = x + mfun(basis[:k_used].T @ y)
        residual = np.linalg.norm(b - apply_a(x))
        if residual <= target:
            return x, total_iters, residual
    raise SolverError(
        f"GMRES did not reach tol={tol} in {max_iter} iterations",
        residual=residual, iterations=total_iters,
    )


@dataclass(frozen=True)
class NormEstimate:
    value: float
    iterations: int
    converged: bool


def operator_norm_est(
    a,
    n: int | None = None,
    iterations: int = 200,
    tol: float = 1e-10,
    seed: int = 0,
    inner: Callable[[np.ndarray, np.ndarray], float] | None = None,
) -> NormEstimate:
    """Largest singular value of A by power iteration on A* A.

    ``a`` is a MatrixFreeOperator (adjoint required unless a matrix) or a
    matrix.  A custom inner product turns the estimate into the operator
    norm with respect to that product, provided ``apply_adjoint`` is the
    adjoint in the same product.
    """
    if isinstance(a, MatrixFreeOperator):
        if a.apply_adjoint is None:
            raise ParameterError("operator_norm_est needs apply_adjoint")
        fwd, adj = a.apply, a.apply_adjoint
        dim = a.shape[1] if a.shape else n
    else:
        fwd, adj = (lambda x: a @ x), (lambda x: a.T @ x)
        dim = a.shape[1]
    if dim is None:
        if n is None:
            raise ParameterError("dimension unknown; pass n")
        dim = n
    dot = inner if inner is not None else (lambda u, v: float(u @ v))
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.sqrt(dot(v, v))
    est_prev = 0.0
    for it in range(1, iterations + 1):
        w = adj(fwd(v))
        lam = dot(v, w)
        nw = np.sqrt(dot(w, w))
        if nw == 0.0:
            return NormEstimate(0.0, it, True)
        v = w / nw
        est = np.sqrt(max(lam, 0.0))
        if it > 1 and abs(est - est_prev) <= tol * max(est, 1e-300):
            return NormEstimate(float(est), it, True)
        est_prev = est
    return NormEstimate(float(est_prev), iterations, False)
