import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eegsparse.model import (ElectrodeArray, LeadField, Measurements, NoiseSpec, Scenario, SourceEstimate,
                             SourceSpace, validate)


def tiny_space(orient=None, adjacency=((1,), (0,))):
    pos = np.array([[0.0, 0, 10], [0, 0, 20]])
    o = np.array([[0.0, 0, 1], [1, 0, 0]]) if orient is None else orient
    return SourceSpace(pos, o, 1, adjacency, head_radius=50.0, spacing=10.0)


def tiny_leadfield():
    el = ElectrodeArray(np.array([[0.0, 0, 50], [50, 0, 0], [0, 50, 0]]), ((1, 2), (0, 2), (0, 1)))
    return LeadField(np.arange(6.0).reshape(3, 2) + 1, tiny_space(), el)


def test_unit_orientation_space_is_valid():
    assert validate(tiny_space()) == []


def test_non_unit_orientation_is_reported():
    ss = tiny_space(orient=np.array([[2.0, 0, 0], [1, 0, 0]]))
    assert "non-unit orientation" in validate(ss)


def test_asymmetric_adjacency_is_reported():
    ss = tiny_space(adjacency=((1,), ()))
    assert any(v.startswith("asymmetric adjacency") for v in validate(ss))


def test_validate_is_pure():
    ss = tiny_space(adjacency=((1,), ()))
    assert validate(ss) == validate(ss)


def test_leadfield_checks():
    lf = tiny_leadfield()
    assert validate(lf) == []
    bad = LeadField(np.array([[np.nan, 1], [1, 1], [1, 1]]), lf.source_space, lf.electrodes)
    assert "non-finite gain entry" in validate(bad)
    fake = LeadField(lf.gain, lf.source_space, lf.electrodes, normalized=True)
    assert "normalized lead field has non-unit column" in validate(fake)


def test_arrays_are_frozen_copies():
    pos = np.zeros((1, 3))
    ss = SourceSpace(pos, np.array([[0.0, 0, 1]]), 1, ((),))
    pos[0, 0] = 5
    assert ss.positions[0, 0] == 0
    with pytest.raises(ValueError):
        ss.positions[0, 0] = 1


def test_measurement_shape_against_leadfield():
    lf = tiny_leadfield()
    m = Measurements(np.zeros((2, 4)), 100.0)
    assert "measurement rows do not match electrode count" in validate(m, leadfield=lf)


def test_noise_label_round_trip():
    for text in ("none", "pink-1", "brown-4", "sensor_percent-5"):
        assert NoiseSpec.parse(text).label == text


def _roundtrip(obj):
    return type(obj).from_dict(json.loads(json.dumps(obj.to_dict())))


def test_leadfield_round_trip():
    lf = tiny_leadfield()
    back = _roundtrip(lf)
    assert np.array_equal(back.gain, lf.gain)
    assert back.source_space.adjacency == lf.source_space.adjacency
    assert np.array_equal(back.electrodes.positions, lf.electrodes.positions)
    assert back.normalized == lf.normalized


@settings(max_examples=30, deadline=None)
@given(idx=st.lists(st.integers(0, 100), min_size=1, max_size=5, unique=True),
       t=st.integers(1, 20), seed=st.integers(0, 2 ** 63 - 1),
       fs=st.floats(1.0, 5000.0, allow_nan=False))
def test_scenario_round_trip(idx, t, seed, fs):
    rng = np.random.default_rng(seed % 1000)
    sc = Scenario(np.array(idx), "fixed", rng.standard_normal((len(idx), t)), fs, NoiseSpec("pink", 1.0), seed, "x")
    back = _roundtrip(sc)
    assert np.array_equal(back.active_indices, sc.active_indices)
    assert np.array_equal(back.waveforms, sc.waveforms)
    assert (back.fs, back.seed, back.name, back.noise.label) == (sc.fs, sc.seed, sc.name, sc.noise.label)
    assert validate(back) == []


def test_estimate_round_trip():
    est = SourceEstimate(np.eye(2), "mne", 3, False, 0.5, {"gamma": np.array([1.0, 2.0])})
    back = _roundtrip(est)
    assert np.array_equal(back.amplitudes, est.amplitudes)
    assert (back.solver_name, back.iterations_used, back.converged, back.residual_norm) == ("mne", 3, False, 0.5)
    assert back.extras["gamma"] == [1.0, 2.0]


def test_measurements_round_trip():
    m = Measurements(np.arange(6.0).reshape(2, 3), 250.0, "file.csv")
    back = _roundtrip(m)
    assert np.array_equal(back.data, m.data) and back.fs == 250.0 and back.provenance == "file.csv"


def test_duplicate_active_indices_rejected():
    sc = Scenario(np.array([1, 1]), "fixed", np.ones((2, 3)), 10.0)
    assert "active indices not distinct" in validate(sc)
