import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from stomax.errors import DomainError, ParameterError
from stomax.model import Box, NoiseSpec, ProblemSpec, SigmaField
from stomax.noise import (
    NoiseSampler,
    coarsen,
    compute_a,
    dump_increments,
    evaluate_on_nodes,
    load_increments,
    sample_increment,
    truncate_normal,
    truncation_gap_second_moment,
)


@pytest.fixture
def ns():
    return NoiseSpec.default(Box.cube(1.0), per_axis=2, decay_r=3.0, trace=1.0)


class TestComputeA:
    def test_reference_values(self):
        assert compute_a(0.01, 4.0) == pytest.approx(np.sqrt(8 * np.log(100)))
        assert compute_a(0.01, 4.0) == pytest.approx(6.0698, abs=2e-4)
        assert compute_a(np.exp(-1.0), 4.0) == pytest.approx(np.sqrt(8.0))
        assert compute_a(np.exp(-2.0), 8.0) == pytest.approx(np.sqrt(32.0))

    def test_rejects_dt_at_least_one(self):
        with pytest.raises(ParameterError):
            compute_a(1.0, 4.0)
        with pytest.raises(ParameterError):
            compute_a(1.5, 4.0)

    def test_rejects_small_b(self):
        with pytest.raises(ParameterError):
            compute_a(0.01, 3.0)


class TestTruncateNormal:
    def test_inside_band(self):
        assert truncate_normal(0.5, 6.07) == 0.5

    def test_upper_clip(self):
        assert truncate_normal(7.0, 6.07) == 6.07

    def test_lower_clip(self):
        assert truncate_normal(-10.0, 6.07) == -6.07

    @given(xi=st.floats(-50, 50), a=st.floats(0.1, 10))
    @settings(max_examples=100, deadline=None)
    def test_band_property(self, xi, a):
        z = truncate_normal(xi, a)
        assert abs(z) <= a
        if abs(xi) <= a:
            assert z == xi


class TestSampleIncrement:
    def test_coefficient_variance(self, ns):
        rng = np.random.default_rng(11)
        dt = 0.01
        n = 100_000
        draws = np.stack([sample_increment(ns, dt, rng).coeffs for _ in range(n)])
        var = draws.var(axis=0)
        target = ns.eigenvalues * dt
        se = target * np.sqrt(2.0 / n) * 3  # 3 standard errors of a variance estimate
        assert np.all(np.abs(var - target) <= se + 1e-15)

    def test_truncated_band(self, ns):
        rng = np.random.default_rng(5)
        a = compute_a(0.01, 4.0)
        for _ in range(200):
            inc = sample_increment(ns, 0.01, rng, truncated=True, b=4.0)
            z = inc.coeffs / np.sqrt(ns.eigenvalues * 0.01)
            assert np.all(np.abs(z) <= a + 1e-12)

    def test_no_clips_in_a_million_draws(self, ns):
        # clip probability per draw is ~1.3e-9 at dt=0.01, b=4
        rng = np.random.default_rng(17)
        a = compute_a(0.01, 4.0)
        draws = rng.standard_normal(1_000_000)
        assert np.all(np.abs(draws) < a)

    def test_independence_between_steps(self, ns):
        rng = np.random.default_rng(23)
        n = 100_000
        xs = np.empty(n)
        ys = np.empty(n)
        for i in range(n):
            xs[i] = sample_increment(ns, 0.1, rng).coeffs[0]
            ys[i] = sample_increment(ns, 0.1, rng).coeffs[0]
        rho = np.corrcoef(xs, ys)[0, 1]
        assert abs(rho) < 4.0 / np.sqrt(n)

    def test_truncation_gap_against_quadrature(self, ns):
        # Monte Carlo gap for clip level a=2 against the tail integral
        a = 2.0
        rng = np.random.default_rng(31)
        n = 200_000
        xi = rng.standard_normal(n)
        gap_mc = np.mean((np.clip(xi, -a, a) - xi) ** 2)
        gap_exact = 2 * quad(lambda x: (x - a) ** 2 * np.exp(-x * x / 2) / np.sqrt(2 * np.pi),
                             a, np.inf)[0]
        # relative MC error of this heavy-tailed statistic, generous 3 sigma
        se = 3 * np.std((np.clip(xi, -a, a) - xi) ** 2) / np.sqrt(n)
        assert abs(gap_mc - gap_exact) <= se
        assert truncation_gap_second_moment(a) == pytest.approx(gap_exact, rel=1e-10)

    def test_per_mode_second_moment_bound(self, ns):
        # E|zeta - xi|^2 <= E|xi|^2 dt^b at the coefficient level
        for dt in (0.1, 0.01):
            gap = truncation_gap_second_moment(compute_a(dt, 4.0))
            assert gap <= dt**4 + 1e-12


class TestEvaluateOnNodes:
    def test_zero_coeffs(self, ns):
        inc = sample_increment(ns, 0.1, np.random.default_rng(0))
        zero = type(inc)(coeffs=np.zeros(ns.n_modes), dt=0.1, truncated=False,
                         raw_normals=np.zeros(ns.n_modes))
        nodes = np.array([[0.2, 0.5, 0.8]])
        assert np.all(evaluate_on_nodes(zero, ns, nodes) == 0.0)

    def test_single_mode(self):
        box = Box.cube(1.0)
        one = NoiseSpec(box=box, modes=np.array([[1, 2, 1]]), eigenvalues=np.array([1.0]))
        from stomax.noise import WienerIncrement

        inc = WienerIncrement(coeffs=np.array([3.0]), dt=0.1, truncated=False,
                              raw_normals=np.array([0.0]))
        nodes = np.array([[0.3, 0.3, 0.3], [0.1, 0.9, 0.4]])
        vals = evaluate_on_nodes(inc, one, nodes)
        assert np.allclose(vals, 3.0 * one.basis_values(nodes)[0])

    def test_matches_bruteforce(self, ns):
        rng = np.random.default_rng(7)
        inc = sample_increment(ns, 0.2, rng)
        nodes = rng.uniform(0.1, 0.9, (4, 3))
        vals = evaluate_on_nodes(inc, ns, nodes)
        basis = ns.basis_values(nodes)
        for j in range(4):
            acc = sum(inc.coeffs[m] * basis[m, j] for m in range(ns.n_modes))
            assert vals[j] == pytest.approx(acc, rel=1e-12)

    def test_outside_domain(self, ns):
        inc = sample_increment(ns, 0.1, np.random.default_rng(1))
        with pytest.raises(DomainError):
            evaluate_on_nodes(inc, ns, np.array([[2.0, 0.5, 0.5]]))


class TestCoarsen:
    def test_single_identity_up_to_reclip(self, ns):
        rng = np.random.default_rng(2)
        fine = sample_increment(ns, 0.01, rng, truncated=True, b=4.0)
        coarse = coarsen([fine], ns, b=4.0, truncated=True)
        assert coarse.dt == fine.dt
        assert np.allclose(coarse.coeffs, fine.coeffs)

    def test_untruncated_sum(self, ns):
        rng = np.random.default_rng(3)
        fines = [sample_increment(ns, 0.05, rng) for _ in range(4)]
        coarse = coarsen(fines, ns)
        assert coarse.dt == pytest.approx(0.2)
        assert np.allclose(coarse.coeffs, sum(f.coeffs for f in fines))

    def test_untruncated_variance_scaling(self, ns):
        rng = np.random.default_rng(4)
        n = 20_000
        vals = np.empty(n)
        for i in range(n):
            fines = [sample_increment(ns, 0.05, rng) for _ in range(4)]
            vals[i] = coarsen(fines, ns).coeffs[0]
        target = ns.eigenvalues[0] * 0.2
        assert vals.var() == pytest.approx(target, rel=4 * np.sqrt(2 / n))

    def test_truncated_reclip_matches_raw_oracle(self, ns):
        # the oracle keeps unclipped normals and recomputes from scratch
        rng = np.random.default_rng(5)
        fines = [sample_increment(ns, 1e-4, rng, truncated=True, b=4.0) for _ in range(2)]
        # force one fine draw beyond its clip level
        raw = [f.raw_normals.copy() for f in fines]
        raw[0][0] = 50.0
        from stomax.noise import WienerIncrement

        a_f = compute_a(1e-4, 4.0)
        fines = [
            WienerIncrement(coeffs=np.sqrt(ns.eigenvalues * 1e-4) * np.clip(r, -a_f, a_f),
                            dt=1e-4, truncated=True, raw_normals=r)
            for r in raw
        ]
        coarse = coarsen(fines, ns, b=4.0, truncated=True)
        z = (raw[0] + raw[1]) / np.sqrt(2)
        a_c = compute_a(2e-4, 4.0)
        expected = np.sqrt(ns.eigenvalues * 2e-4) * np.clip(z, -a_c, a_c)
        assert np.allclose(coarse.coeffs, expected)
        # the naive clipped sum would differ on the forced mode
        naive = fines[0].coeffs + fines[1].coeffs
        assert not np.allclose(coarse.coeffs[0], naive[0])

    def test_mismatched_dt_rejected(self, ns):
        rng = np.random.default_rng(6)
        a = sample_increment(ns, 0.1, rng)
        b = sample_increment(ns, 0.2, rng)
        with pytest.raises(ParameterError):
            coarsen([a, b], ns)


class TestSampler:
    def test_streams_reproducible(self, ns):
        spec = ProblemSpec(box=ns.box, sigma=SigmaField.constant(1.0), lambda1=0.1,
                           lambda2=(1, 0, 0), q1=ns, q2=ns)
        s1, s2 = NoiseSampler(spec, 99), NoiseSampler(spec, 99)
        a = [s1.w1(0.01).coeffs for _ in range(3)]
        b = [s2.w1(0.01).coeffs for _ in range(3)]
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        # w2 stream independent of w1 draws
        assert not np.array_equal(s1.w2(0.01).coeffs, s2.w1(0.01).coeffs)

    def test_w2_never_truncated(self, ns):
        spec = ProblemSpec(box=ns.box, sigma=SigmaField.constant(1.0), lambda1=0.1,
                           lambda2=(1, 0, 0), q1=ns, q2=ns)
        inc = NoiseSampler(spec, 1).w2(0.01)
        assert inc.truncated is False


def test_dump_roundtrip(tmp_path, ns):
    rng = np.random.default_rng(8)
    incs = [sample_increment(ns, 0.01, rng, truncated=True, b=4.0) for _ in range(5)]
    path = tmp_path / "w.bin"
    dump_increments(path, incs)
    back = load_increments(path)
    assert len(back) == 5
    for a, b in zip(incs, back):
        assert a.dt == b.dt and a.truncated == b.truncated
        assert np.array_equal(a.coeffs, b.coeffs)
        assert np.array_equal(a.raw_normals, b.raw_normals)
