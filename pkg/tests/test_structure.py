import numpy as np
import pytest

from stomax.fd import FdOperator, StaggeredGrid
from stomax.model import ProblemSpec, SigmaField
from stomax.noise import NoiseSampler
from stomax.stepper import StepperConfig, make_initial_state, step
from stomax.structure import (
    F_MATRIX,
    K_MATRICES,
    discrete_energy,
    energy_law_residual,
    kappa_flux,
    msymp_residual,
    omega_form,
)


@pytest.fixture
def grid(unit_box):
    return StaggeredGrid.build(unit_box, (4, 4, 4), SigmaField.constant(1.0))


@pytest.fixture
def op(grid):
    return FdOperator(grid)


class TestMatrices:
    def test_f_squares_to_minus_identity(self):
        assert np.allclose(F_MATRIX @ F_MATRIX, -np.eye(6))

    def test_k_skew(self):
        for k in K_MATRICES:
            assert np.allclose(k.T, -k)

    def test_f_j_inverse_pair(self):
        j = np.block([[np.zeros((3, 3)), -np.eye(3)], [np.eye(3), np.zeros((3, 3))]])
        assert np.allclose(F_MATRIX @ j, np.eye(6))


class TestDiscreteEnergy:
    def test_zero_state(self, grid):
        assert discrete_energy(np.zeros((6, 4, 4, 4)), grid) == 0.0

    def test_unit_box_all_ones(self, unit_box):
        g = StaggeredGrid.build(unit_box, (2, 2, 2), SigmaField.constant(1.0))
        assert discrete_energy(np.ones((6, 2, 2, 2)), g) == pytest.approx(6.0)

    def test_matches_naive_double_loop(self, grid):
        rng = np.random.default_rng(0)
        u = rng.standard_normal((6, 4, 4, 4))
        acc = 0.0
        for i in range(4):
            for j in range(4):
                for k in range(4):
                    acc += np.sum(u[:, i, j, k] ** 2)
        acc *= grid.cell_volume
        assert discrete_energy(u, grid) == pytest.approx(acc, rel=1e-13)


class TestEnergyLaw:
    def _advance(self, spec, op, u, w1, w2, cfg):
        return step(u, op, w1, w2, spec, cfg)

    def test_pure_decay(self, small_spec, op, grid):
        spec0 = ProblemSpec(box=small_spec.box, sigma=small_spec.sigma, lambda1=0.0,
                            lambda2=(0, 0, 0), q1=small_spec.q1, q2=small_spec.q2)
        cfg = StepperConfig(dt=0.05, tol=1e-12)
        u = make_initial_state(op, "sine")
        v = self._advance(spec0, op, u, None, None, cfg)
        res = energy_law_residual(u, v, grid, np.zeros((4, 4, 4)), spec0, cfg.dt)
        assert abs(res) <= 10 * cfg.tol * discrete_energy(u, grid)

    def test_multiplicative_only_cancels(self, small_spec, op, grid):
        spec_m = ProblemSpec(box=small_spec.box, sigma=small_spec.sigma, lambda1=0.4,
                             lambda2=(0, 0, 0), q1=small_spec.q1, q2=small_spec.q2)
        cfg = StepperConfig(dt=0.05, tol=1e-12)
        sampler = NoiseSampler(spec_m, 1)
        w1 = op.noise_basis(spec_m.q1).field(sampler.w1(cfg.dt).coeffs)
        u = make_initial_state(op, "sine")
        v = self._advance(spec_m, op, u, w1, None, cfg)
        res = energy_law_residual(u, v, grid, np.zeros((4, 4, 4)), spec_m, cfg.dt)
        assert abs(res) <= 10 * cfg.tol * discrete_energy(u, grid)

    def test_full_noise_within_solver_tolerance(self, small_spec, op, grid):
        cfg = StepperConfig(dt=0.05, tol=1e-10)
        sampler = NoiseSampler(small_spec, 2)
        w1 = op.noise_basis(small_spec.q1).field(sampler.w1(cfg.dt).coeffs)
        w2 = op.noise_basis(small_spec.q2).field(sampler.w2(cfg.dt).coeffs)
        u = make_initial_state(op, "sine")
        v = self._advance(small_spec, op, u, w1, w2, cfg)
        res = energy_law_residual(u, v, grid, w2, small_spec, cfg.dt)
        w2n2 = grid.cell_volume * np.sum(w2**2)
        assert abs(res) <= 100 * cfg.tol * (discrete_energy(v, grid) + w2n2)

    def test_nonconstant_sigma(self, small_spec, unit_box):
        sig = SigmaField.sampled(lambda p: 1.0 + 0.5 * np.sin(2 * np.pi * p[..., 0]) ** 2,
                                 sigma0=1.0)
        g = StaggeredGrid.build(unit_box, (4, 4, 4), sig)
        op = FdOperator(g)
        cfg = StepperConfig(dt=0.05, tol=1e-12)
        sampler = NoiseSampler(small_spec, 3)
        w2 = op.noise_basis(small_spec.q2).field(sampler.w2(cfg.dt).coeffs)
        u = make_initial_state(op, "sine")
        spec = ProblemSpec(box=small_spec.box, sigma=sig, lambda1=0.0,
                           lambda2=small_spec.lambda2, q1=small_spec.q1, q2=small_spec.q2)
        v = step(u, op, None, w2, spec, cfg)
        res = energy_law_residual(u, v, g, w2, spec, cfg.dt)
        w2n2 = g.cell_volume * np.sum(w2**2)
        assert abs(res) <= 100 * cfg.tol * (discrete_energy(v, g) + w2n2)


class TestOmegaForm:
    def test_skew_in_pair(self, grid):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((6, 4, 4, 4))
        assert np.all(omega_form(a, a, grid) == 0.0)
        b = rng.standard_normal((6, 4, 4, 4))
        assert np.allclose(omega_form(a, b, grid), -omega_form(b, a, grid))

    def test_unit_block_sign(self, grid):
        a = np.zeros((6, 4, 4, 4))
        b = np.zeros((6, 4, 4, 4))
        a[0] = 1.0   # E-block e1
        b[3] = 1.0   # H-block e1
        # omega(a, b) = a_H . b_E - a_E . b_H = -1;  omega(b, a) = +1
        assert np.all(omega_form(b, a, grid) == 1.0)
        assert np.all(omega_form(a, b, grid) == -1.0)

    def test_matches_per_node_matrix_oracle(self, grid):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((6, 4, 4, 4))
        b = rng.standard_normal((6, 4, 4, 4))
        out = omega_form(a, b, grid)
        for idx in ((0, 0, 0), (1, 2, 3), (3, 1, 2)):
            fa = F_MATRIX @ a[(slice(None),) + idx]
            assert out[idx] == pytest.approx(fa @ b[(slice(None),) + idx], rel=1e-12)

    def test_kappa_antisymmetry(self, grid):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((6, 4, 4, 4))
        b = rng.standard_normal((6, 4, 4, 4))
        for axis in range(3):
            assert np.allclose(kappa_flux(a, b, axis, grid),
                               -kappa_flux(b, a, axis, grid), atol=1e-12)


class TestMsympResidual:
    def _tangent_steps(self, spec, op, cfg, n_steps, seed, lam1):
        sampler = NoiseSampler(spec, seed)
        basis = op.noise_basis(spec.q1)
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((6,) + tuple(op.grid.counts))
        b = rng.standard_normal((6,) + tuple(op.grid.counts))
        pairs = [(a, b)]
        for _ in range(n_steps):
            w1 = basis.field(sampler.w1(cfg.dt).coeffs) if lam1 else None
            a = step(a, op, w1, None, spec, cfg)
            b = step(b, op, w1, None, spec, cfg)
            pairs.append((a, b))
        return pairs

    def test_zero_tangents(self, small_spec, grid):
        z = np.zeros((6, 4, 4, 4))
        res = msymp_residual((z, z), (z, z), grid, small_spec, 0.05)
        assert np.all(res == 0.0)

    @pytest.mark.parametrize("lam1", [0.0, 0.4])
    def test_budget_closes_pathwise(self, small_spec, op, grid, lam1):
        spec = ProblemSpec(box=small_spec.box, sigma=small_spec.sigma, lambda1=lam1,
                           lambda2=(0, 0, 0), q1=small_spec.q1, q2=small_spec.q2)
        cfg = StepperConfig(dt=0.05, tol=1e-12)
        pairs = self._tangent_steps(spec, op, cfg, 5, seed=4, lam1=lam1)
        for (a0, b0), (a1, b1) in zip(pairs, pairs[1:]):
            res = msymp_residual((a0, b0), (a1, b1), grid, spec, cfg.dt)
            scale = np.sqrt(op.norm2(a0) * op.norm2(b0)) / grid.cell_volume
            assert np.abs(res).max() <= 100 * cfg.tol * scale

    def test_budget_closes_for_nonconstant_sigma(self, small_spec, unit_box):
        sig = SigmaField.sampled(lambda p: 1.0 + 0.3 * np.cos(2 * np.pi * p[..., 1]) ** 2,
                                 sigma0=1.0)
        g = StaggeredGrid.build(unit_box, (4, 4, 4), sig)
        op = FdOperator(g)
        spec = ProblemSpec(box=small_spec.box, sigma=sig, lambda1=0.4,
                           lambda2=(0, 0, 0), q1=small_spec.q1, q2=small_spec.q2)
        cfg = StepperConfig(dt=0.05, tol=1e-12)
        sampler = NoiseSampler(spec, 5)
        basis = op.noise_basis(spec.q1)
        rng = np.random.default_rng(5)
        a0 = rng.standard_normal((6, 4, 4, 4))
        b0 = rng.standard_normal((6, 4, 4, 4))
        w1 = basis.field(sampler.w1(cfg.dt).coeffs)
        a1 = step(a0, op, w1, None, spec, cfg)
        b1 = step(b0, op, w1, None, spec, cfg)
        res = msymp_residual((a0, b0), (a1, b1), g, spec, cfg.dt)
        scale = np.sqrt(op.norm2(a0) * op.norm2(b0)) / g.cell_volume
        assert np.abs(res).max() <= 100 * cfg.tol * scale

    def test_global_budget_telescopes(self, small_spec, op, grid):
        # sum over nodes: Sum omega^{n+1} = Sum e^{-2 sigma dt} omega^n
        cfg = StepperConfig(dt=0.05, tol=1e-12)
        pairs = self._tangent_steps(small_spec, op, cfg, 3, seed=6, lam1=small_spec.lambda1)
        for (a0, b0), (a1, b1) in zip(pairs, pairs[1:]):
            lhs = omega_form(a1, b1, grid).sum()
            rhs = (np.exp(-2 * grid.sigma * cfg.dt) * omega_form(a0, b0, grid)).sum()
            scale = np.sqrt(op.norm2(a0) * op.norm2(b0)) / grid.cell_volume
            assert abs(lhs - rhs) <= 100 * cfg.tol * scale

    def test_single_fourier_mode_tangents(self, small_spec, op, grid):
        spec0 = ProblemSpec(box=small_spec.box, sigma=small_spec.sigma, lambda1=0.0,
                            lambda2=(0, 0, 0), q1=small_spec.q1, q2=small_spec.q2)
        cfg = StepperConfig(dt=0.05, tol=1e-12)
        xs = (np.arange(4) + 0.5) / 4
        mode = np.cos(2 * np.pi * xs)[:, None, None] * np.ones((1, 4, 4))
        a0 = np.zeros((6, 4, 4, 4))
        a0[0] = mode
        b0 = np.zeros((6, 4, 4, 4))
        b0[4] = np.roll(mode, 1, axis=0)
        a1 = step(a0, op, None, None, spec0, cfg)
        b1 = step(b0, op, None, None, spec0, cfg)
        res = msymp_residual((a0, b0), (a1, b1), grid, spec0, cfg.dt)
        assert np.abs(res).max() <= 1e-10
