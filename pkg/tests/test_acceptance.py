"""Acceptance suite: one test per release criterion, at full size.

Each test prints a PASS line with its headline numbers (run pytest with -s
to stream them).  The heavy statistical studies (temporal and spatial
order, ergodicity) dominate the runtime; the whole module is sized to
finish within its stated wall-clock budgets on a desktop-class machine.
"""

import time

import numpy as np
import pytest

from stomax.model import Box, NoiseSpec, ProblemSpec, SigmaField
from stomax import studies

UNIT_BOX = Box.cube(1.0)


def _full_noise_spec():
    q1 = NoiseSpec.default(UNIT_BOX, per_axis=3, decay_r=3.0, trace=0.5)
    q2 = NoiseSpec.default(UNIT_BOX, per_axis=3, decay_r=3.0, trace=1.0)
    return ProblemSpec(box=UNIT_BOX, sigma=SigmaField.constant(1.0), lambda1=0.3,
                       lambda2=(1.0, 0.5, 0.25), q1=q1, q2=q2, trunc_b=4.0)


def _report(name, passed, elapsed, budget, detail):
    status = "PASS" if passed else "FAIL"
    print(f"[acceptance] {name}: {status} ({elapsed:.1f}s / budget {budget:.0f}s) {detail}")


class TestCriterion01OperatorStructure:
    def test_skewness_and_dissipativity(self):
        t0 = time.perf_counter()
        spec = _full_noise_spec()
        r = studies.operator_structure_check(
            spec, fd_grids=((4, 4, 4), (6, 6, 6), (8, 8, 8)),
            dg_cells=((1, 1, 1), (2, 2, 2)), n_pairs=1000, seed=8000,
        )
        elapsed = time.perf_counter() - t0
        worst_fd = max(r["fd"].values())
        worst_dg = max(r["dg"].values())
        _report("C1 operator structure", r["passed"], elapsed, 10,
                f"max FD skew defect {worst_fd:.2e}, max dG quad form {worst_dg:.2e}")
        assert r["passed"]
        assert worst_fd <= 1e-12 and worst_dg <= 1e-12
        assert elapsed < 10


class TestCriterion02ResolventContraction:
    def test_norm_probes(self):
        t0 = time.perf_counter()
        spec = _full_noise_spec()
        r = studies.resolvent_contraction_check(spec, counts=(4, 4, 4),
                                                dg_cells=(1, 1, 1), dt=0.1,
                                                powers=(1, 5), seed=9000)
        elapsed = time.perf_counter() - t0
        _report("C2 resolvent contraction", r["passed"], elapsed, 30,
                f"FD S^1 {r['fd']['S^1']['estimate']:.12f} vs {np.exp(-0.1):.12f}; "
                f"dG S {r['dg']['S']['estimate']:.12f} <= {np.exp(-0.1):.12f}")
        assert r["passed"]
        assert elapsed < 30


class TestCriterion03EnergyLaw:
    def test_per_step_residuals(self):
        t0 = time.perf_counter()
        spec = _full_noise_spec()
        r = studies.energy_law_study(spec, counts=(8, 8, 8), dt=0.02, n_steps=200,
                                     n_traj=10, seed=3000, tol=1e-10)
        elapsed = time.perf_counter() - t0
        _report("C3 energy law", r["passed"], elapsed, 120,
                f"worst |residual|/(Phi+||dW2||^2) = {r['worst_ratio']:.2e} "
                f"<= {r['bound']:.2e}")
        assert r["passed"]
        assert elapsed < 120


class TestCriterion04MultiSymplecticLaw:
    @pytest.mark.parametrize("lam1", [0.0, 0.4])
    def test_tangent_pair_budget(self, lam1):
        t0 = time.perf_counter()
        base = _full_noise_spec()
        spec = ProblemSpec(box=base.box, sigma=base.sigma, lambda1=lam1,
                           lambda2=(0.0, 0.0, 0.0), q1=base.q1, q2=base.q2)
        r = studies.msymp_study(spec, counts=(4, 4, 4), dt=0.05, n_steps=100,
                                n_pairs=5, seed=4000, tol=1e-10)
        elapsed = time.perf_counter() - t0
        _report(f"C4 conformal multi-symplectic law (lam1={lam1})", r["passed"],
                elapsed, 60, f"worst scaled residual {r['worst_ratio']:.2e} <= {r['bound']:.2e}")
        assert r["passed"]
        assert elapsed < 60


class TestCriterion05PathwiseContraction:
    def test_shared_noise_pairs(self):
        t0 = time.perf_counter()
        spec = _full_noise_spec()
        r = studies.contraction_study(spec, counts=(4, 4, 4), dg_cells=(1, 1, 1),
                                      dt=0.02, n_steps=500, seed=5000, tol=1e-10)
        elapsed = time.perf_counter() - t0
        _report("C5 pathwise contraction", r["passed"], elapsed, 60,
                f"FD ratio error {r['fd_worst_ratio_error']:.2e}, "
                f"mixing rate {r['mixing_rate']:.6f}, dG excess {r['dg_worst_excess']:.2e}")
        assert r["fd_worst_ratio_error"] <= 10 * 1e-10
        assert abs(r["mixing_rate"] + 1.0) <= 0.01
        assert r["dg_worst_excess"] <= 0.0
        assert elapsed < 60


class TestCriterion06MomentBound:
    def test_stationary_second_moment(self):
        t0 = time.perf_counter()
        q1 = NoiseSpec.default(UNIT_BOX, per_axis=2)
        q2 = NoiseSpec.default(UNIT_BOX, per_axis=5, decay_r=3.0, trace=1.0)
        spec = ProblemSpec(box=UNIT_BOX, sigma=SigmaField.constant(1.0), lambda1=0.0,
                           lambda2=(1.0, 0.0, 0.0), q1=q1, q2=q2)
        r = studies.moment_bound_study(spec, counts=(8, 8, 8), dt=0.01, horizon=10.0,
                                       window=(5.0, 10.0), n_traj=100, seed=6000)
        elapsed = time.perf_counter() - t0
        _report("C6 uniform moment bound", r["passed"], elapsed, 300,
                f"mean {r['mean']:.4f} in (0, {r['bound']:.4f}] with C1 = {r['c1']:.1f}")
        assert r["passed"]
        assert elapsed < 300


class TestCriterion07TemporalOrder:
    def test_mean_square_temporal_order(self):
        # anisotropic box and a symbol-spread spectrum put the ladder inside
        # the pre-asymptotic regime where the proven half order is visible
        t0 = time.perf_counter()
        box = Box(0.0, 1.0 / 32.0, 0.0, 1.0 / 8.0, 0.0, 0.5)
        modes = np.array([[4, 4, 1], [4, 1, 4], [4, 2, 2], [1, 4, 2]])
        etas = np.array([20.97, 0.382, 0.1216, 0.1014])
        q2 = NoiseSpec(box=box, modes=modes, eigenvalues=etas / etas.sum())
        q1 = NoiseSpec.default(box, per_axis=2, decay_r=3.0, trace=0.1)
        spec = ProblemSpec(box=box, sigma=SigmaField.constant(1.0), lambda1=0.0,
                           lambda2=(0.6, 0.6, 0.6), q1=q1, q2=q2)
        r = studies.temporal_order_study(spec, counts=(8, 8, 8), horizon=1.0,
                                         k_coarse=(4, 5, 6, 7, 8), k_ref=12,
                                         n_traj=200, seed=1000, tol=1e-10,
                                         initial="zero")
        elapsed = time.perf_counter() - t0
        passed = 0.35 <= r["slope"] <= 0.80 and r["r2"] >= 0.95
        _report("C7 temporal mean-square order", passed, elapsed, 1200,
                f"slope {r['slope']:.3f} in [0.35, 0.80], r2 {r['r2']:.4f} >= 0.95")
        assert 0.35 <= r["slope"] <= 0.80
        assert r["r2"] >= 0.95
        assert elapsed < 1200


class TestCriterion08SpatialOrder:
    def test_mean_square_spatial_order(self):
        t0 = time.perf_counter()
        q1 = NoiseSpec.default(UNIT_BOX, per_axis=2)
        q2 = NoiseSpec.default(UNIT_BOX, per_axis=3, decay_r=3.0, trace=1.0)
        spec = ProblemSpec(box=UNIT_BOX, sigma=SigmaField.constant(1.0), lambda1=0.0,
                           lambda2=(1.0, 1.0, 1.0), q1=q1, q2=q2)
        r = studies.spatial_order_study(spec, nx_ladder=(1, 2, 4), nx_ref=8,
                                        dt=2.0**-8, n_steps=32, n_traj=100,
                                        seed=2000, tol=1e-10, check_every=16)
        elapsed = time.perf_counter() - t0
        passed = r["slope"] >= 0.4 and r["r2"] >= 0.9
        _report("C8 spatial mean-square order", passed, elapsed, 1800,
                f"slope {r['slope']:.3f} >= 0.4, r2 {r['r2']:.4f} >= 0.9")
        assert r["slope"] >= 0.4
        assert r["r2"] >= 0.9
        assert elapsed < 1800


class TestCriterion09ErgodicitySurrogate:
    def test_observable_level_mixing(self):
        t0 = time.perf_counter()
        q1 = NoiseSpec.default(UNIT_BOX, per_axis=2, decay_r=3.0, trace=0.25)
        q2 = NoiseSpec.default(UNIT_BOX, per_axis=3, decay_r=3.0, trace=1.0)
        spec = ProblemSpec(box=UNIT_BOX, sigma=SigmaField.constant(1.0), lambda1=0.15,
                           lambda2=(1.0, 1.0, 1.0), q1=q1, q2=q2)
        r = studies.ergodicity_study(spec, counts=(8, 8, 8), dt=0.025,
                                     times=(1.0, 3.0, 6.0), n_traj=200, seed=7000,
                                     amplitude=15.0)
        elapsed = time.perf_counter() - t0
        details = []
        for obs in ("norm", "probe"):
            row = r["observables"][obs]
            details.append(f"{obs}: W2 {['%.3f' % w for w in row['w2']]} vs "
                           f"floor {row['floor']:.3f}")
        _report("C9 ergodicity surrogate", r["passed"], elapsed, 600, "; ".join(details))
        for obs in ("norm", "probe"):
            row = r["observables"][obs]
            assert row["monotone"]
            assert row["final_below_3x_floor"]
        assert elapsed < 600


class TestCriterion10NoiseTruncationBound:
    def test_second_moment_gap(self):
        t0 = time.perf_counter()
        r = studies.truncation_moment_check(dts=(0.1, 0.01), b=4.0, slack=1e-12)
        elapsed = time.perf_counter() - t0
        margins = ", ".join(f"dt={row['dt']}: margin {row['margin']:.3e}" for row in r["rows"])
        _report("C10 noise truncation bound", r["passed"], elapsed, 1, margins)
        assert r["passed"]
        for row in r["rows"]:
            assert row["margin"] >= -1e-12
        assert elapsed < 1
