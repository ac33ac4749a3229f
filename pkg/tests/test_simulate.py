import numpy as np
import pytest

from eegsparse.model import ConfigError, NoiseSpec, Scenario
from eegsparse.simulate import (ErpSpec, add_sensor_noise, erp_waveform, gen_noise, sample_scenario,
                                simulate_measurements, standard_test_case)
from oracles import periodogram_slope


def test_single_peak_hits_amplitude_at_latency():
    w = erp_waveform(ErpSpec(((500.0, 200.0, 1.0),), 1000.0, 1000.0))
    assert w.size == 1000
    assert w[500] == pytest.approx(1.0, abs=1e-12)
    assert np.argmax(w) == 500


def test_width_is_full_width_at_half_maximum():
    w = erp_waveform(ErpSpec(((500.0, 200.0, 1.0),), 1000.0, 1000.0))
    assert w[400] == pytest.approx(0.5, abs=1e-12)
    assert w[600] == pytest.approx(0.5, abs=1e-12)


def test_empty_peaks_give_zero_series():
    assert not np.any(erp_waveform(ErpSpec((), 200.0, 1000.0)))


def test_distant_peaks_superpose():
    a, b = (200.0, 50.0, 1.0), (800.0, 50.0, 0.5)
    both = erp_waveform(ErpSpec((a, b)))
    assert np.allclose(both, erp_waveform(ErpSpec((a,))) + erp_waveform(ErpSpec((b,))), atol=1e-15)


def test_erp_spec_rejects_bad_values():
    with pytest.raises(ValueError):
        ErpSpec(((100.0, 0.0, 1.0),))
    with pytest.raises(ValueError):
        ErpSpec(((2000.0, 10.0, 1.0),))


@pytest.mark.parametrize("kind", ["white", "pink", "brown"])
def test_noise_channel_max_equals_amplitude(kind):
    E = gen_noise(kind, 1.0, 8, 500, 1000.0, seed=3)
    assert np.allclose(np.max(np.abs(E), axis=1), 1.0, atol=0, rtol=1e-15)
    E4 = gen_noise(kind, 4.0, 8, 500, 1000.0, seed=3)
    assert np.allclose(E4, 4 * E)


def test_noise_deterministic_and_seeded():
    a = gen_noise("pink", 1.0, 4, 256, 1000.0, seed=9)
    assert np.array_equal(a, gen_noise("pink", 1.0, 4, 256, 1000.0, seed=9))
    assert not np.array_equal(a, gen_noise("pink", 1.0, 4, 256, 1000.0, seed=10))


def test_noise_channels_independent():
    E = gen_noise("white", 1.0, 2, 20000, 1000.0, seed=1)
    assert abs(np.corrcoef(E)[0, 1]) < 0.05


def test_noise_mean_tends_to_zero():
    E = gen_noise("pink", 1.0, 16, 8192, 1000.0, seed=2)
    sd = E.std(axis=1)
    assert np.all(np.abs(E.mean(axis=1)) < 3 * sd / np.sqrt(E.shape[1]) + 1e-12)


def test_noise_rejects_bad_arguments():
    with pytest.raises(ValueError):
        gen_noise("violet", 1.0, 2, 10, 1000.0, 0)
    with pytest.raises(ValueError):
        gen_noise("pink", 0.0, 2, 10, 1000.0, 0)


@pytest.mark.parametrize("kind,target,tol", [("white", 0.0, 0.1), ("pink", -1.0, 0.2), ("brown", -2.0, 0.3)])
def test_periodogram_slope(kind, target, tol):
    E = np.vstack([gen_noise(kind, 1.0, 1, 4096, 1000.0, seed=s) for s in range(50)])
    assert periodogram_slope(E) == pytest.approx(target, abs=tol)


def test_sensor_noise_zero_percent_is_identity():
    Y = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(add_sensor_noise(Y, 0, seed=1).data, Y)


def test_sensor_noise_std_matches_percent():
    Y = np.zeros((100, 1000))
    Y[0, 0] = 1.0
    added = add_sensor_noise(Y, 10, seed=4).data - Y
    assert added.std() == pytest.approx(0.1, rel=0.05)


def test_sensor_noise_seeds_differ():
    Y = np.ones((4, 50))
    assert not np.array_equal(add_sensor_noise(Y, 5, 1).data, add_sensor_noise(Y, 5, 2).data)


def test_zero_waveforms_give_zero_measurements(small_lf):
    sc = Scenario([3, 10], "fixed", np.zeros((2, 50)), 1000.0)
    assert not np.any(simulate_measurements(small_lf, sc).data)


def test_single_source_is_rank_one_product(small_lf):
    w = np.sin(np.linspace(0, 3, 40))
    sc = Scenario([7], "fixed", w, 1000.0)
    assert np.allclose(simulate_measurements(small_lf, sc).data, np.outer(small_lf.gain[:, 7], w), rtol=0, atol=1e-15)


def test_superposition(small_lf, rng):
    w1, w2 = rng.standard_normal((2, 30))
    y1 = simulate_measurements(small_lf, Scenario([5, 9], "fixed", np.vstack([w1, 0 * w1]), 1000.0)).data
    y2 = simulate_measurements(small_lf, Scenario([5, 9], "fixed", np.vstack([0 * w2, w2]), 1000.0)).data
    y12 = simulate_measurements(small_lf, Scenario([5, 9], "fixed", np.vstack([w1, w2]), 1000.0)).data
    assert np.max(np.abs(y12 - y1 - y2)) <= 1e-12 * np.max(np.abs(y12))


def test_measurements_deterministic_with_noise(small_lf):
    sc = Scenario([1], "fixed", np.ones(64), 1000.0, NoiseSpec("pink", 1.0), seed=11)
    assert np.array_equal(simulate_measurements(small_lf, sc).data, simulate_measurements(small_lf, sc).data)


def test_free_marker_on_fixed_leadfield_is_config_error(small_lf):
    with pytest.raises(ConfigError):
        simulate_measurements(small_lf, Scenario([1], "free", np.ones(5), 1000.0))


def test_free_orientation_uses_unit_moment(free_lf):
    sc = Scenario([2], "free", np.ones(3), 1000.0, seed=5)
    Y = simulate_measurements(free_lf, sc).data
    moment = np.linalg.lstsq(free_lf.block(2), Y[:, 0], rcond=None)[0]
    assert np.linalg.norm(moment) == pytest.approx(1.0)


def _pairwise(p):
    return np.linalg.norm(p[:, None] - p[None], axis=2)[np.triu_indices(len(p), 1)]


def test_tc2_unscaled_predicates():
    # the reference bounds need a full-size head; check them on a 110 mm sphere
    from eegsparse.headmodel import SphereSpec, generate_sphere_leadfield
    lf = generate_sphere_leadfield(SphereSpec(head_radius=110.0, grid_spacing=12.0))
    tc = standard_test_case("TC-II")
    for seed in range(5):
        sc = sample_scenario(tc, lf.source_space, seed)
        p = lf.source_space.positions[sc.active_indices]
        assert len(sc.active_indices) == 3
        assert np.all(np.linalg.norm(p, axis=1) >= 90)
        assert np.all(_pairwise(p) >= 80)


def test_tc1_draws_are_valid(sphere_lf):
    tc = standard_test_case("TC-I")
    scs = [sample_scenario(tc, sphere_lf.source_space, s) for s in range(30)]
    assert all(s.active_indices.size == 1 and 0 <= s.active_indices[0] < sphere_lf.n_sources for s in scs)
    assert len({int(s.active_indices[0]) for s in scs}) > 20


def test_tc3_bands(sphere_lf):
    tc = standard_test_case("TC-III", 0.75)
    sc = sample_scenario(tc, sphere_lf.source_space, 0)
    d = sphere_lf.source_space.depth[sc.active_indices]
    assert len(d) == 5
    assert np.all(d[:3] <= 45) and 45 <= d[3] <= 60 and d[4] >= 52.5
    assert tc.check(sphere_lf.source_space.positions[sc.active_indices])


@pytest.mark.parametrize("name", ["TC-I", "TC-II", "TC-III", "TC-IV", "DEEP"])
def test_samples_pass_their_own_predicates(sphere_lf, name):
    tc = standard_test_case(name, 0.75)
    for seed in range(3):
        sc = sample_scenario(tc, sphere_lf.source_space, seed)
        assert tc.check(sphere_lf.source_space.positions[sc.active_indices])
        assert sc.active_indices.size == tc.n_sources


def test_sampling_deterministic(sphere_lf):
    tc = standard_test_case("TC-II", 0.75)
    a = sample_scenario(tc, sphere_lf.source_space, 42)
    assert np.array_equal(a.active_indices, sample_scenario(tc, sphere_lf.source_space, 42).active_indices)


def test_unsatisfiable_constraints(small_lf):
    tc = standard_test_case("TC-II")  # 90 mm shell does not exist in an 85 mm head
    with pytest.raises(ValueError, match="unsatisfiable"):
        sample_scenario(tc, small_lf.source_space, 0)
    tight = standard_test_case("TC-II", 0.75)
    from dataclasses import replace
    from eegsparse.simulate import Separation
    tight = replace(tight, separations=(Separation(500.0),))
    with pytest.raises(ValueError, match="unsatisfiable"):
        sample_scenario(tight, small_lf.source_space, 0, max_rejections=50)


def test_unknown_test_case():
    with pytest.raises(ValueError):
        standard_test_case("TC-IX")
