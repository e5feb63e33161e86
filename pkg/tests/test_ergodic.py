"""Cesaro averages, omega-limit extraction and stationarity probes.

Synthetic trajectories (constant, periodic) give closed-form oracles; the
flow-based cases use the erf-projected Gaussian and quadrature constants.
"""

import numpy as np
import pytest
from scipy.integrate import quad

from fpflow.coefficients import make_family
from fpflow.discretization import DensityField, GridSpec, l1_distance, l1_norm
from fpflow.ergodic import (
    Observable,
    cesaro_cauchy_test,
    cesaro_mean_field,
    cesaro_observable,
    estimate_omega,
    fixed_point_test,
    stationary_residual,
)
from fpflow.resolvent import SolverConfig
from fpflow.semigroup import Trajectory, evolve

from oracles import box_gaussian


def synthetic_trajectory(fields, h):
    """Trajectory recording every step of a prescribed field sequence."""
    grid = fields[0].grid
    acc = np.zeros(grid.shape)
    times, cesaro = [0.0], [acc.copy()]
    for k, f in enumerate(fields[:-1]):
        acc = acc + f.values * h
        times.append((k + 1) * h)
        cesaro.append(acc.copy())
    return Trajectory(
        grid=grid,
        step_size=h,
        times=times,
        snapshots=list(fields),
        cesaro_acc=cesaro,
        config_fingerprint="synthetic",
    )


@pytest.fixture
def grid32():
    return GridSpec(1, 4.0, 32)


@pytest.fixture(scope="module")
def ou_trajectory():
    grid = GridSpec(1, 6.0, 64)
    cs = make_family("linear-ou", 1)
    cfg = SolverConfig(lam=0.02)
    return evolve(box_gaussian(grid, 0.8), 8.0, 0.02, cs, grid, cfg, n_snapshots=40)


class TestCesaroObservable:
    def test_unit_observable_is_exactly_one(self, ou_trajectory, grid64):
        ones = Observable.ones(grid64)
        vals = cesaro_observable(ou_trajectory, ones, [1.0, 4.0, 8.0])
        for v in vals:
            assert v == pytest.approx(1.0, abs=1e-13)

    def test_linearity(self, ou_trajectory, grid64, rng):
        g1 = Observable(grid64, rng.normal(size=grid64.shape), "g1")
        g2 = Observable(grid64, rng.normal(size=grid64.shape), "g2")
        combo = Observable(grid64, 2.5 * g1.values + g2.values, "combo")
        t = [2.0, 8.0]
        lhs = cesaro_observable(ou_trajectory, combo, t)
        a = cesaro_observable(ou_trajectory, g1, t)
        b = cesaro_observable(ou_trajectory, g2, t)
        for x, y, z in zip(lhs, a, b):
            assert x == pytest.approx(2.5 * y + z, rel=1e-12)

    def test_fubini_consistency_with_mean_field(self, ou_trajectory, grid64, rng):
        g = Observable(grid64, rng.normal(size=grid64.shape), "g")
        t = [4.0, 8.0]
        direct = cesaro_observable(ou_trajectory, g, t)
        via_mean = [g(m) for m in cesaro_mean_field(ou_trajectory, t)]
        for a, b in zip(direct, via_mean):
            assert a == pytest.approx(b, rel=1e-12)

    def test_second_moment_approaches_box_corrected_value(self, ou_trajectory, grid64):
        obs = Observable.moment(grid64, 0, 2, "x2")
        num = quad(lambda x: x * x * np.exp(-x * x / 2), -6, 6)[0]
        den = quad(lambda x: np.exp(-x * x / 2), -6, 6)[0]
        target = num / den
        early, late = cesaro_observable(ou_trajectory, obs, [2.0, 8.0])
        assert abs(late - target) < abs(early - target)

    def test_fixed_point_average_is_constant(self, grid32):
        u = box_gaussian(grid32)
        traj = synthetic_trajectory([u] * 21, h=0.5)
        obs = Observable.moment(grid32, 0, 2)
        vals = cesaro_observable(traj, obs, [0.5, 5.0, 10.0])
        for v in vals:
            assert v == pytest.approx(obs(u), rel=1e-13)

    def test_out_of_span_rejected(self, ou_trajectory, grid64):
        obs = Observable.ones(grid64)
        with pytest.raises(ValueError):
            cesaro_observable(ou_trajectory, obs, [100.0])
        with pytest.raises(ValueError):
            cesaro_observable(ou_trajectory, obs, [-1.0])


class TestCesaroMeanField:
    def test_fixed_point_mean_is_the_point(self, grid32):
        u = box_gaussian(grid32)
        traj = synthetic_trajectory([u] * 11, h=0.3)
        mean = cesaro_mean_field(traj, [3.0])[0]
        np.testing.assert_allclose(mean.values, u.values, rtol=1e-13)

    def test_means_are_probabilities(self, ou_trajectory):
        for m in cesaro_mean_field(ou_trajectory, [2.0, 8.0]):
            assert m.kind == "probability"

    def test_periodic_sequence_matches_direct_sums(self, grid32):
        # alternating u, v with h = 1: acc(n) = ceil(n/2) u + floor(n/2) v
        u = box_gaussian(grid32, mean=0.5)
        v = box_gaussian(grid32, mean=-0.5)
        fields = [u if k % 2 == 0 else v for k in range(13)]
        traj = synthetic_trajectory(fields, h=1.0)
        for n in (4, 7, 12):
            direct = sum(f.values for f in fields[:n]) / n  # oracle: direct sum
            got = cesaro_mean_field(traj, [float(n)])[0]
            np.testing.assert_allclose(got.values, direct, rtol=1e-13)


class TestCauchyTrend:
    def test_fixed_point_passes_trivially(self, grid32):
        u = box_gaussian(grid32)
        traj = synthetic_trajectory([u] * 30, h=0.5)
        ok, deltas = cesaro_cauchy_test(traj, [2.0, 4.0, 8.0, 14.0])
        assert ok
        # repeated float accumulation leaves ulp-level dust, nothing more
        assert all(abs(d) <= 1e-14 for d in deltas)

    def test_relaxing_flow_passes(self, ou_trajectory):
        ok, deltas = cesaro_cauchy_test(ou_trajectory, [1.0, 2.0, 4.0, 8.0])
        print(f"cesaro increments along the relaxing flow: {deltas}")
        assert ok
        assert deltas[-1] < deltas[0]

    def test_periodic_sequence_passes_with_oscillation(self, grid32):
        u = box_gaussian(grid32, mean=0.6)
        v = box_gaussian(grid32, mean=-0.6)
        fields = [u if k % 2 == 0 else v for k in range(201)]
        traj = synthetic_trajectory(fields, h=1.0)
        ok, deltas = cesaro_cauchy_test(traj, [10.0, 25.0, 50.0, 100.0, 200.0])
        assert ok  # increments decay like 1/T despite oscillation

    def test_needs_two_values(self, ou_trajectory):
        with pytest.raises(ValueError):
            cesaro_cauchy_test(ou_trajectory, [4.0])


class TestOmegaEstimate:
    def test_converging_flow_clusters(self, ou_trajectory):
        est = estimate_omega(ou_trajectory, window_fraction=0.25)
        print(f"omega window {est.window}: {est.cluster_count} clusters, diameter {est.diameter:.2e}")
        assert est.cluster_count >= 1
        assert est.diameter < 0.05
        # with a resolution-scale threshold the window collapses to one cluster
        merged = estimate_omega(ou_trajectory, window_fraction=0.25, threshold=0.05)
        assert merged.cluster_count == 1
        # diameter never exceeds the max pairwise distance over the whole run
        snaps = ou_trajectory.snapshots
        global_max = max(
            l1_distance(a, b) for i, a in enumerate(snaps) for b in snaps[i + 1:]
        )
        assert est.diameter <= global_max + 1e-15

    def test_diameter_shrinks_with_later_windows(self, ou_trajectory):
        wide = estimate_omega(ou_trajectory, window_fraction=0.6)
        late = estimate_omega(ou_trajectory, window_fraction=0.25)
        assert late.diameter <= wide.diameter + 1e-12

    def test_fixed_point_representative_is_the_point(self, grid32):
        u = box_gaussian(grid32)
        traj = synthetic_trajectory([u] * 20, h=0.5)
        est = estimate_omega(traj, window_fraction=0.5)
        assert est.cluster_count == 1
        np.testing.assert_array_equal(est.representatives[0].values, u.values)

    def test_too_few_snapshots_rejected(self, grid32):
        u = box_gaussian(grid32)
        traj = synthetic_trajectory([u] * 6, h=0.5)
        with pytest.raises(ValueError, match="at least 8"):
            estimate_omega(traj, window_fraction=0.5)


class TestStationaryResidual:
    def test_projected_gaussian_residual_is_second_order(self, linear_ou):
        res = []
        for n in (64, 128, 256):
            grid = GridSpec(1, 6.0, n)
            res.append(stationary_residual(box_gaussian(grid), linear_ou, grid))
        ratios = [res[k] / res[k + 1] for k in range(2)]
        print(f"stationary residuals {res}, refinement ratios {ratios}")
        assert all(3.0 <= r <= 5.0 for r in ratios)

    def test_constant_density_with_flat_potential_is_stationary(self):
        from test_discretization import flat_potential_cs

        grid = GridSpec(1, 2.0, 16)
        cs = flat_potential_cs()
        u = DensityField(grid, np.full(grid.shape, 0.25), kind="probability")
        assert stationary_residual(u, cs, grid) == 0.0

    def test_residual_decreases_along_relaxing_flow(self, grid64, linear_ou):
        cfg = SolverConfig(lam=0.02)
        traj = evolve(box_gaussian(grid64, 1.0), 6.0, 0.02, linear_ou, grid64, cfg, n_snapshots=30)
        r = [stationary_residual(s, linear_ou, grid64) for s in traj.snapshots]
        assert r[-1] < r[len(r) // 2] < r[0]


class TestFixedPointProbe:
    def test_projected_stationary_flags_true(self, linear_ou):
        grid = GridSpec(1, 6.0, 128)
        cfg = SolverConfig(lam=0.01)
        flag, drift = fixed_point_test(box_gaussian(grid), linear_ou, grid, cfg, t_probe=0.1)
        assert flag
        assert drift < 1e-3

    def test_displaced_bump_flags_false(self, linear_ou):
        grid = GridSpec(1, 6.0, 128)
        cfg = SolverConfig(lam=0.01)
        flag, drift = fixed_point_test(
            box_gaussian(grid, mean=2.0, sigma=0.4), linear_ou, grid, cfg, t_probe=0.1
        )
        assert not flag
        assert drift > 0.1
