import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from eegsparse.headmodel import (SphereSpec, dipole_potential, generate_sphere_leadfield, grid_adjacency,
                                 leadfield_info, load_leadfield, normalize_columns, save_leadfield)
from eegsparse.model import DataError, ElectrodeArray, LeadField, SourceSpace, validate


def test_shape_contract_dof3():
    lf = generate_sphere_leadfield(SphereSpec(85, 0.33, 10, 64, 120), dof=3)
    assert lf.gain.shape == (64, 3 * lf.n_sources) and lf.n_sources > 0
    assert validate(lf) == []


def test_deterministic(small_lf):
    again = generate_sphere_leadfield(SphereSpec(grid_spacing=15.0))
    assert np.array_equal(again.gain, small_lf.gain)


def test_coarse_grid_keeps_only_the_origin():
    # an origin-centred grid never comes out empty
    lf = generate_sphere_leadfield(SphereSpec(head_radius=10.0, grid_spacing=100.0))
    assert lf.n_sources == 1 and np.array_equal(lf.source_space.positions, np.zeros((1, 3)))


def test_origin_dipole_toward_electrode_peaks_there(small_lf):
    el = small_lf.electrodes.positions
    for e in (0, 17, 40):
        moment = el[e] / np.linalg.norm(el[e])
        v = dipole_potential(el, np.zeros(3), moment, 0.33)
        assert int(np.argmax(np.abs(v))) == e


def test_dipole_potential_closed_form():
    # unit nA.m dipole along z, electrode 0.1 m above: 1e-9 / (4 pi 0.33 0.01) V
    v = dipole_potential(np.array([[0.0, 0, 100]]), np.zeros(3), np.array([0.0, 0, 1]), 0.33)
    assert v[0] == pytest.approx(1e-9 / (4 * np.pi * 0.33 * 0.01) * 1e6, rel=1e-12)


def test_depth_correlates_with_column_norm(small_lf):
    rho = stats.spearmanr(small_lf.source_space.depth, np.linalg.norm(small_lf.gain, axis=0)).statistic
    assert rho > 0


def _lf_from(gain):
    n, m = gain.shape
    ss = SourceSpace(np.zeros((m, 3)), np.tile([0.0, 0, 1], (m, 1)), 1, ())
    el = ElectrodeArray(np.array([[0, 0, 1.0]] * n) * 50 if n == 1 else
                        50 * np.eye(3)[np.arange(n) % 3] * np.where(np.arange(n) < 3, 1, -1)[:, None])
    return LeadField(gain, ss, el)


def test_normalize_closed_form():
    lf = normalize_columns(_lf_from(np.array([[3.0], [4.0]])))
    assert np.allclose(lf.gain[:, 0], [0.6, 0.8]) and lf.column_weights[0] == pytest.approx(5.0)


def test_normalize_unit_columns_unchanged():
    g = np.array([[1.0, 0.0], [0.0, 1.0]])
    lf = normalize_columns(_lf_from(g))
    assert np.array_equal(lf.gain, g) and np.array_equal(lf.column_weights, [1.0, 1.0])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_normalize_random_and_idempotent(seed):
    g = np.random.default_rng(seed).standard_normal((6, 12))
    lf = normalize_columns(_lf_from(g))
    assert np.allclose(np.linalg.norm(lf.gain, axis=0), 1.0, atol=1e-12)
    assert np.allclose(lf.gain * lf.column_weights, g, atol=1e-12)
    assert normalize_columns(lf) is lf


def test_normalize_rejects_zero_column():
    with pytest.raises(ValueError, match="degenerate source column 1"):
        normalize_columns(_lf_from(np.array([[1.0, 0.0], [1.0, 0.0]])))


def test_grid_adjacency_counts(small_lf):
    ss = small_lf.source_space
    adj = grid_adjacency(ss, 1)
    interior = int(np.argmin(ss.depth))
    assert len(adj[interior]) == 26
    cube = np.array([[x, y, z] for x in (0, 10.0) for y in (0, 10.0) for z in (0, 10.0)])
    cs = SourceSpace(cube, np.tile([0.0, 0, 1], (8, 1)), 1, (), spacing=10.0)
    assert all(len(nb) == 7 for nb in grid_adjacency(cs, 1))


def test_grid_adjacency_levels_nested_and_symmetric(small_lf):
    ss = small_lf.source_space
    a1, a2 = grid_adjacency(ss, 1), grid_adjacency(ss, 2)
    for i in range(ss.n_sources):
        assert set(a1[i]) <= set(a2[i]) and i not in a2[i]
        assert all(i in a2[j] for j in a2[i])


@pytest.mark.parametrize("fmt", ["bin", "csv"])
def test_save_load_round_trip(tmp_path, small_nlf, fmt):
    save_leadfield(small_nlf, tmp_path / "lf", fmt)
    back = load_leadfield(tmp_path / "lf")
    assert np.array_equal(back.gain, small_nlf.gain)
    assert np.array_equal(back.column_weights, small_nlf.column_weights)
    assert back.normalized and back.source_space.adjacency == small_nlf.source_space.adjacency
    assert back.electrodes.adjacency == small_nlf.electrodes.adjacency
    info, ref = leadfield_info(back), leadfield_info(small_nlf)
    assert (info["N"], info["M"], info["dof"], info["depth_mm"]) == (ref["N"], ref["M"], ref["dof"], ref["depth_mm"])


def _write_manual(tmp_path, gain, n, m, dof):
    d = tmp_path / "manual"
    d.mkdir()
    (d / "gain.bin").write_bytes(np.asarray(gain, "<f8").tobytes(order="F"))
    ang = np.linspace(0, 2 * np.pi, n, endpoint=False)
    header = {
        "format_version": "1", "N": n, "M": m, "dof": dof, "units": {"position": "mm", "gain": "uV/(nA*m)"},
        "matrix": {"file": "gain.bin", "dtype": "<f8", "order": "F"},
        "source_positions": [[0, 0, 10.0 * k] for k in range(m)],
        "orientations": "free",
        "electrode_positions": [[50 * np.cos(a), 50 * np.sin(a), 0.0] for a in ang],
    }
    (d / "leadfield.json").write_text(json.dumps(header))
    return d


def test_load_well_formed_4x6(tmp_path):
    g = np.arange(24.0).reshape(4, 6) + 1
    lf = load_leadfield(_write_manual(tmp_path, g, 4, 2, 3))
    assert (lf.n_channels, lf.n_sources, lf.dof) == (4, 2, 3)
    assert np.array_equal(lf.gain, g)


def test_load_rejects_nan(tmp_path):
    g = np.ones((4, 6))
    g[1, 2] = np.nan
    with pytest.raises(DataError):
        load_leadfield(_write_manual(tmp_path, g, 4, 2, 3))


def test_load_rejects_shape_mismatch(tmp_path):
    d = _write_manual(tmp_path, np.ones((4, 6)), 4, 2, 3)
    h = json.loads((d / "leadfield.json").read_text())
    h["M"] = 3
    (d / "leadfield.json").write_text(json.dumps(h))
    with pytest.raises(DataError):
        load_leadfield(d)
