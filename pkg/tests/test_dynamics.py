import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import mixbridge as mb
from mixbridge.dynamics import TIME_GUARD
from oracles import drift_quadrature, random_potential


def standard_pot(dim=1, eps=1.0):
    return mb.MixturePotential(dim=dim, n_components=1, epsilon=eps,
                               log_weights=np.zeros(1), means=np.zeros((1, dim)),
                               log_scales=np.zeros((1, dim)))


class TestDrift:
    def test_identity_potential_gives_zero_drift(self, rng):
        # K=1, r=0, S=I: the reweighted potential is constant, so the drift
        # cancels algebraically for every (x, t)
        for eps in (0.01, 1.0, 10.0):
            pot = standard_pot(dim=3, eps=eps)
            for t in (0.0, 0.3, 0.9, 1.0 - 1e-5):
                x = rng.normal(size=3) * 3
                assert np.max(np.abs(mb.drift(pot, x, t))) < 1e-12

    def test_matches_quadrature_oracle(self, rng):
        pot = random_potential(rng, 1, 3, 0.7, log_scale_range=(np.log(0.1), np.log(0.8)))
        for x in np.linspace(-2.5, 2.5, 5):
            for t in (0.0, 0.35, 0.8):
                ours = mb.drift(pot, np.array([x]), t)[0]
                oracle = drift_quadrature(pot, x, t)
                assert abs(ours - oracle) / max(abs(oracle), 1e-6) < 1e-4

    def test_affine_at_time_zero_single_component(self, rng):
        # K=1 general (r, s): g(x, 0) = (s - 1) x + r, the conditional-mean drift
        r, s, eps = 0.8, 0.4, 0.6
        pot = mb.MixturePotential(dim=1, n_components=1, epsilon=eps,
                                  log_weights=np.zeros(1), means=np.array([[r]]),
                                  log_scales=np.array([[np.log(s)]]))
        xs = np.linspace(-2, 2, 7)
        g = np.array([mb.drift(pot, np.array([x]), 0.0)[0] for x in xs])
        np.testing.assert_allclose(g, (s - 1) * xs + r, atol=1e-12)
        # and the same affine law matches the quadrature route
        for x in (-1.0, 0.5):
            assert drift_quadrature(pot, x, 0.0) == pytest.approx((s - 1) * x + r, abs=1e-6)

    def test_time_guard(self, rng):
        pot = standard_pot()
        with pytest.raises(ValueError):
            mb.drift(pot, np.zeros(1), 1.0 - TIME_GUARD / 2)
        with pytest.raises(ValueError):
            mb.drift(pot, np.zeros(1), -0.1)

    def test_batch_matches_single(self, rng):
        pot = random_potential(rng, 2, 4, 0.5)
        X = rng.normal(size=(6, 2))
        batch = mb.drift(pot, X, 0.4)
        singles = np.array([mb.drift(pot, row, 0.4) for row in X])
        np.testing.assert_allclose(batch, singles, rtol=1e-13)

    def test_drift_eval_record(self, rng):
        pot = standard_pot()
        rec = mb.evaluate_drift(pot, np.zeros(1), 0.5)
        assert rec.t == 0.5 and np.all(np.isfinite(rec.g))
        with pytest.raises(ValueError):
            mb.DriftEval(x=np.zeros(1), t=1.0, g=np.zeros(1))


class TestEulerMaruyama:
    def test_zero_drift_increments_are_brownian(self):
        # identity potential: pure Wiener process; per-step increment variance
        # eps dt within a 5-sigma chi-square band at 1e5 particles
        eps, steps, p = 0.4, 10, 100_000
        pot = standard_pot(dim=1, eps=eps)
        tb = mb.euler_maruyama(pot, np.zeros((p, 1)), steps, mb.make_rng(0))
        incs = np.diff(tb.states[:, :, 0], axis=1)
        var = eps / steps
        for s in range(steps):
            v = incs[:, s].var()
            assert abs(v - var) < 5 * var * np.sqrt(2 / (p - 1))
            assert abs(incs[:, s].mean()) < 5 * np.sqrt(var / p)

    def test_grid_and_shapes(self, rng):
        pot = random_potential(rng, 2, 2, 0.5)
        tb = mb.euler_maruyama(pot, rng.normal(size=(7, 2)), 25, mb.make_rng(1))
        assert tb.states.shape == (7, 26, 2)
        np.testing.assert_allclose(tb.times, np.linspace(0, 1, 26), atol=0)

    def test_deterministic(self, rng):
        pot = random_potential(rng, 2, 3, 0.5)
        X0 = rng.normal(size=(5, 2))
        a = mb.euler_maruyama(pot, X0, 30, mb.make_rng(3))
        b = mb.euler_maruyama(pot, X0, 30, mb.make_rng(3))
        np.testing.assert_array_equal(a.states, b.states)

    def test_endpoint_law_matches_direct_sampler(self, rng):
        # moderate-size version of the sampler-consistency criterion
        pot = random_potential(rng, 2, 3, 0.5, mean_scale=1.5)
        X0 = mb.make_rng(10).standard_normal((3000, 2))
        em_end = mb.euler_maruyama(pot, X0, 200, mb.make_rng(11)).states[:, -1, :]
        direct = mb.sample_conditional_rows(pot, X0, mb.make_rng(12))
        direct2 = mb.sample_conditional_rows(pot, X0, mb.make_rng(13))
        floor = abs(mb.energy_distance(direct, direct2))
        assert mb.energy_distance(em_end, direct) < 5 * floor + 1e-3

    def test_weak_order_step_sweep(self):
        # refining the grid drives the endpoint law toward the exact sampler's
        pair = mb.make_ground_truth_pair(dim=2, k=4, epsilon=0.3, n_pairs=1, rng=9)
        pot = pair.potential
        X0 = mb.make_rng(50).standard_normal((4000, 2))
        direct = mb.sample_conditional_rows(pot, X0, mb.make_rng(51))
        direct2 = mb.sample_conditional_rows(pot, X0, mb.make_rng(52))
        floor = abs(mb.energy_distance(direct, direct2))
        eds = [mb.energy_distance(
            mb.euler_maruyama(pot, X0, s, mb.make_rng(53)).states[:, -1, :], direct)
            for s in (10, 100, 1000)]
        assert eds[0] > eds[1] > eds[2]
        assert eds[2] < 3 * floor

    def test_non_finite_state_aborts_with_step_index(self):
        # a start point far enough out overflows the component weights
        pot = standard_pot(dim=2, eps=0.5)
        pot = mb.MixturePotential(dim=2, n_components=2, epsilon=0.5,
                                  log_weights=np.zeros(2),
                                  means=np.array([[0.0, 0.0], [1.0, 1.0]]),
                                  log_scales=np.log(np.array([[0.2, 0.2], [2.0, 2.0]])))
        with pytest.raises(RuntimeError, match="step"):
            mb.euler_maruyama(pot, np.full((1, 2), 1e200), 4, mb.make_rng(0))


class TestBridgeInsert:
    def test_midpoint_moments(self):
        # pinned at 0 on both ends: mean 0, variance eps/4 at the midpoint
        n = 100_000
        draws = mb.bridge_insert(np.zeros((n, 1)), np.zeros((n, 1)), 0.0, 1.0, 0.5,
                                 1.0, mb.make_rng(5))
        assert abs(draws.mean()) < 5 * np.sqrt(0.25 / n)
        assert abs(draws.var() - 0.25) < 5 * 0.25 * np.sqrt(2 / (n - 1))

    def test_collapses_toward_left_endpoint(self):
        xl = np.array([2.0])
        xr = np.array([-1.0])
        t = 1e-9
        out = mb.bridge_insert(np.tile(xl, (2000, 1)), np.tile(xr, (2000, 1)),
                               0.0, 1.0, t, 1.0, mb.make_rng(6))
        assert np.max(np.abs(out - xl)) < 1e-3  # variance ~ eps * t

    def test_nested_refinement_has_same_law_as_direct(self):
        # quarter point then midpoint given (quarter, 1) vs direct midpoint draw
        n = 60_000
        xl = np.zeros((n, 1))
        xr = np.full((n, 1), 2.0)
        quarter = mb.bridge_insert(xl, xr, 0.0, 1.0, 0.25, 1.0, mb.make_rng(7))
        nested_mid = mb.bridge_insert(quarter, xr, 0.25, 1.0, 0.5, 1.0, mb.make_rng(8))
        direct_mid = mb.bridge_insert(xl, xr, 0.0, 1.0, 0.5, 1.0, mb.make_rng(9))
        for arr in (nested_mid, direct_mid):
            assert abs(arr.mean() - 1.0) < 5 * np.sqrt(0.25 / n)
        assert abs(nested_mid.var() - direct_mid.var()) < 8 * 0.25 * np.sqrt(2 / (n - 1))

    def test_ordering_violations_rejected(self):
        for t in (0.0, 1.0, 1.5):
            with pytest.raises(ValueError):
                mb.bridge_insert(np.zeros(1), np.ones(1), 0.0, 1.0, t, 1.0, mb.make_rng(0))

    @given(st.floats(0.05, 0.95), st.floats(0.01, 5.0))
    def test_variance_formula(self, t, eps):
        # empirical variance of many draws tracks eps (t-tl)(tr-t)/(tr-tl)
        n = 4000
        draws = mb.bridge_insert(np.zeros((n, 1)), np.zeros((n, 1)), 0.0, 1.0,
                                 t, eps, mb.make_rng(17))
        target = eps * t * (1 - t)
        assert abs(draws.var() - target) < 6 * target * np.sqrt(2 / (n - 1))


class TestBridgeTrajectories:
    def test_empty_times_endpoints_only(self, rng):
        pot = random_potential(rng, 2, 3, 0.5)
        X0 = rng.normal(size=(40, 2))
        tb = mb.sample_bridge_trajectories(pot, X0, [], mb.make_rng(20))
        assert tb.states.shape == (40, 2, 2)
        np.testing.assert_array_equal(tb.states[:, 0, :], X0)
        # the endpoint column reproduces the direct conditional draw bit-for-bit
        direct = mb.sample_conditional_rows(pot, X0, mb.make_rng(20))
        np.testing.assert_array_equal(tb.states[:, 1, :], direct)

    def test_wiener_marginal_for_identity_potential(self):
        # K=1, r=0, S=I: the process is Brownian; at t the law is N(x0, eps t)
        eps, t, n = 0.8, 0.3, 80_000
        pot = standard_pot(dim=1, eps=eps)
        x0 = np.full((n, 1), 1.5)
        tb = mb.sample_bridge_trajectories(pot, x0, [t], mb.make_rng(21))
        at_t = tb.states[:, 1, 0]
        assert abs(at_t.mean() - 1.5) < 5 * np.sqrt(eps * t / n)
        assert abs(at_t.var() - eps * t) < 5 * eps * t * np.sqrt(2 / (n - 1))

    def test_midpoint_marginal_matches_euler_maruyama(self, rng):
        pot = random_potential(rng, 2, 3, 0.4, mean_scale=1.2)
        X0 = mb.make_rng(30).standard_normal((3000, 2))
        bridge_mid = mb.sample_bridge_trajectories(pot, X0, [0.5], mb.make_rng(31)).states[:, 1, :]
        em_mid = mb.euler_maruyama(pot, X0, 400, mb.make_rng(32)).at_time(0.5)
        bridge_mid2 = mb.sample_bridge_trajectories(pot, X0, [0.5], mb.make_rng(33)).states[:, 1, :]
        floor = abs(mb.energy_distance(bridge_mid, bridge_mid2))
        assert mb.energy_distance(em_mid, bridge_mid) < 5 * floor + 1e-3

    def test_interior_times_validation(self, rng):
        pot = standard_pot()
        with pytest.raises(ValueError):
            mb.sample_bridge_trajectories(pot, np.zeros((2, 1)), [0.5, 0.25], mb.make_rng(0))
        with pytest.raises(ValueError):
            mb.sample_bridge_trajectories(pot, np.zeros((2, 1)), [0.0, 0.5], mb.make_rng(0))

    def test_dense_grid_fills_completely(self):
        pot = standard_pot()
        times = np.linspace(0, 1, 65)[1:-1]
        tb = mb.sample_bridge_trajectories(pot, np.zeros((3, 1)), times, mb.make_rng(2))
        assert tb.states.shape == (3, 65, 1)
        assert np.all(np.isfinite(tb.states))


class TestTrajectoryIO:
    def test_binary_round_trip_bit_exact(self, rng, tmp_path):
        pot = random_potential(rng, 3, 2, 0.5)
        tb = mb.euler_maruyama(pot, rng.normal(size=(4, 3)), 9, mb.make_rng(40))
        path = tmp_path / "traj.bin"
        mb.save_trajectories(tb, path)
        back = mb.load_trajectories(path)
        np.testing.assert_array_equal(back.states, tb.states)
        np.testing.assert_array_equal(back.times, tb.times)
        assert back.epsilon == tb.epsilon

    def test_header_magic_checked(self, tmp_path):
        path = tmp_path / "bogus.bin"
        path.write_bytes(b"NOTMAGIC" + b"\0" * 24)
        with pytest.raises(ValueError):
            mb.load_trajectories(path)

    def test_csv_export_parses(self, rng, tmp_path):
        pot = random_potential(rng, 2, 2, 0.5)
        tb = mb.euler_maruyama(pot, rng.normal(size=(2, 2)), 3, mb.make_rng(41))
        from mixbridge.dynamics import trajectories_to_csv
        text = trajectories_to_csv(tb)
        lines = text.strip().splitlines()
        assert lines[0] == "particle,t,x0,x1"
        assert len(lines) == 1 + 2 * 4

    def test_batch_validation(self):
        with pytest.raises(ValueError):
            mb.TrajectoryBatch(times=np.array([0.1, 0.5]), states=np.zeros((1, 2, 1)),
                               epsilon=1.0)
        with pytest.raises(ValueError):
            mb.TrajectoryBatch(times=np.array([0.0, 0.0]), states=np.zeros((1, 2, 1)),
                               epsilon=1.0)
