import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from diffuse_memory.medium import GaussianCloud, MediumModel, cross_section, optical_depth_along_ray
from diffuse_memory.rng import stream_generator, trajectory_generator
from diffuse_memory.transport import (EntryRay, PointSource, path_statistics, propagate_trajectory,
                                      sample_free_path, sample_free_paths, simulate_ensemble)

OFF = MediumModel(rabi_control=0.0)
R0 = 1e-3


def cloud(b0):
    return GaussianCloud.from_optical_depth(b0, R0, OFF.sigma0)


def test_homogeneous_free_paths_are_exponential(rng):
    n_dens = 2.0e15
    draws = np.array([sample_free_path([0, 0, 0], [0, 0, 1], 0.0, cloud(1), OFF, rng,
                                       homogeneous_density=n_dens).length for _ in range(20000)])
    mean = 1.0 / (n_dens * OFF.sigma0)
    assert stats.kstest(draws, "expon", args=(0, mean)).pvalue > 0.01


def test_gaussian_free_path_distribution(rng):
    """Sampled s follows 1 - exp(-tau(s)), with escape mass exp(-tau(inf))."""
    c = cloud(5.0)
    p = np.array([0.3e-3, -0.2e-3, -2e-3])
    u = np.array([0.0, 0.6, 0.8])
    s, esc = sample_free_paths(p, u, 0.0, c, OFF, rng, 50000)
    tau_inf = optical_depth_along_ray(p, u, np.inf, 0.0, c, OFF)
    inside = s[~esc]

    def cdf(x):
        tau = np.array([optical_depth_along_ray(p, u, xi, 0.0, c, OFF) for xi in np.atleast_1d(x)])
        return (1 - np.exp(-tau)) / (1 - math.exp(-tau_inf))

    assert stats.kstest(inside[:5000], cdf).pvalue > 0.01


def test_zero_tau_star_gives_zero_length(rng):
    f = sample_free_path([0, 0, 0], [1, 0, 0], 0.0, cloud(10), OFF, rng, tau_star=0.0)
    assert f.length == 0.0 and not f.escaped


def test_escape_when_tau_star_exceeds_total(rng):
    c = cloud(3.0)
    tau_inf = optical_depth_along_ray([0, 0, 0], [0, 0, 1], np.inf, 0.0, c, OFF)
    assert sample_free_path([0, 0, 0], [0, 0, 1], 0.0, c, OFF, rng, tau_star=tau_inf * 1.0001).escaped
    f = sample_free_path([0, 0, 0], [0, 0, 1], 0.0, c, OFF, rng, tau_star=tau_inf * 0.5)
    assert not f.escaped
    assert optical_depth_along_ray([0, 0, 0], [0, 0, 1], f.length, 0.0, c, OFF) == pytest.approx(
        tau_inf * 0.5, rel=1e-10)


@given(frac=st.floats(1e-6, 0.999), x=st.floats(-2, 2), z=st.floats(-3, 3), b0=st.floats(0.5, 60))
def test_root_solve_accuracy(frac, x, z, b0):
    c = cloud(b0)
    p = np.array([x, 0.1, z]) * R0
    u = np.array([0.0, 0.0, 1.0])
    tau_inf = optical_depth_along_ray(p, u, np.inf, 0.0, c, OFF)
    f = sample_free_path(p, u, 0.0, c, OFF, np.random.default_rng(0), tau_star=frac * tau_inf)
    got = optical_depth_along_ray(p, u, f.length, 0.0, c, OFF)
    # the solve is accurate to rounding relative to the full ray depth
    assert got == pytest.approx(frac * tau_inf, rel=1e-9, abs=1e-13 * tau_inf)


def test_escape_probability_center_ray(rng):
    c = cloud(4.0)
    n = 100_000
    _, esc = sample_free_paths([0, 0, 0], [0, 0, 1], 0.0, c, OFF, rng, n)
    p = math.exp(-2.0)  # half the diametral depth
    assert abs(esc.mean() - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_empty_cloud_is_straight_through(rng):
    t = propagate_trajectory(0.0, cloud(0.0), OFF, rng)
    assert t.order == 0
    assert len(t.segments) == 1
    np.testing.assert_array_equal(t.exit_direction, [0, 0, 1])
    assert t.path_total == pytest.approx(16 * R0, rel=1e-12)


def test_trajectory_invariants(rng):
    t = propagate_trajectory(0.0, cloud(10.0), OFF, rng)
    assert t.order == len(t.segments) - 1
    assert t.path_total == pytest.approx(sum(seg[2] for seg in t.segments), rel=1e-12)
    assert np.linalg.norm(t.exit_direction) == pytest.approx(1.0, abs=1e-12)


def test_trajectory_matches_ensemble_entry():
    c = cloud(8.0)
    ens = simulate_ensemble(50, c, OFF, seed=3)
    for i in (0, 17, 49):
        t = propagate_trajectory(0.0, c, OFF, trajectory_generator(3, i))
        assert t.order == ens.order[i]
        assert t.path_total == ens.path_length[i]
        assert t.column == ens.column[i]


def test_trajectory_deterministic():
    a = propagate_trajectory(0.0, cloud(10.0), OFF, stream_generator(9, "transport", 4))
    b = propagate_trajectory(0.0, cloud(10.0), OFF, stream_generator(9, "transport", 4))
    assert a.order == b.order and a.path_total == b.path_total
    for sa, sb in zip(a.segments, b.segments):
        np.testing.assert_array_equal(sa[0], sb[0])
        np.testing.assert_array_equal(sa[1], sb[1])


def test_ensemble_independent_of_workers_and_chunks():
    c = cloud(10.0)
    a = simulate_ensemble(3000, c, OFF, seed=11, peel_orders=(5,), workers=1, chunk_size=3000)
    b = simulate_ensemble(3000, c, OFF, seed=11, peel_orders=(5,), workers=3, chunk_size=700)
    for name in ("order", "path_length", "column", "inner_length", "exit_direction", "capped", "peel"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_event_cap_flags_trajectories():
    ens = simulate_ensemble(500, cloud(20.0), OFF, seed=1, max_events=3)
    assert ens.n_capped > 0
    assert np.all(ens.order[ens.capped] == 3)
    st_ = path_statistics(ens)
    assert st_.n == 500 - ens.n_capped


def test_empty_cloud_statistics():
    s = path_statistics(simulate_ensemble(100, cloud(0.0), OFF))
    assert s.mean_order == 0.0
    assert s.b_sigma == 0.0


def test_path_statistics_pure():
    ens = simulate_ensemble(2000, cloud(5.0), OFF, seed=2)
    assert path_statistics(ens).to_dict() == path_statistics(ens).to_dict()


def test_point_source_isotropic_first_flight():
    ens = simulate_ensemble(4000, cloud(0.0), OFF, seed=5, source=PointSource())
    # empty cloud: exit direction is the (isotropic) launch direction
    cz = ens.exit_direction[:, 2]
    assert stats.kstest(cz, "uniform", args=(-1, 2)).pvalue > 0.01


def test_entry_ray_must_hit_support():
    with pytest.raises(ValueError):
        EntryRay(impact=(9.0, 0.0)).start(8.0)


def test_mean_order_grows_with_depth():
    means = [path_statistics(simulate_ensemble(4000, cloud(b0), OFF, seed=1, source="center")).mean_order
             for b0 in (2.0, 5.0, 10.0)]
    assert means[0] < means[1] < means[2]


def test_resonant_cross_section_used():
    m = MediumModel(rabi_control=1.0, control_detuning=0.0, at_weight=1.0)
    c = GaussianCloud.from_optical_depth(10.0, R0, m.sigma0)
    # transparency at the two-photon resonance makes the cloud nearly empty
    ens = simulate_ensemble(2000, c, m, detuning=0.0, seed=1)
    assert cross_section(0.0, m) < 1e-2 * m.sigma0
    assert path_statistics(ens).mean_order < 0.1
