import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vbspin.config import PRESETS, ConfigError, load_config, load_preset, parse_config
from vbspin.spectrum import Spectrum, default_grid
from vbspin.tables import (DataTable, TableError, read_table, spectrum_from_table,
                           spectrum_table, write_table)

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 20), st.just(3)), elements=finite))
def test_table_round_trip_is_lossless(data):
    t = DataTable(["a_MHz", "b", "c_per_nm"], data, {"seed": "3", "note": "x: y"})
    back = DataTable.from_text(t.to_text())
    assert back.columns == t.columns
    assert back.metadata == t.metadata
    assert np.array_equal(back.data, t.data)


def test_table_units_and_columns():
    t = DataTable(["frequency_MHz", "normalized_PL"], np.zeros((2, 2)))
    assert t.units == ["MHz", "PL"]
    with pytest.raises(TableError):
        t.column("nope")


def test_table_rejects_ragged_rows():
    with pytest.raises(TableError, match="line 3"):
        DataTable.from_text("# k: v\na,b\n1,2,3\n")
    with pytest.raises(TableError):
        DataTable.from_text("# only: metadata\n")
    with pytest.raises(TableError):
        DataTable(["a"], np.zeros((2, 2)))


def test_write_is_atomic_and_readable(tmp_path):
    path = tmp_path / "sub" / "t.csv"
    write_table(path, DataTable(["x"], [[1.0], [2.0]]))
    assert read_table(path).data[:, 0].tolist() == [1.0, 2.0]
    assert [p.name for p in path.parent.iterdir()] == ["t.csv"]


def test_spectrum_table_round_trip():
    grid = default_grid()
    s = Spectrum(grid, 1 - 0.01 * np.sin(grid), {"seed": 1})
    back = spectrum_from_table(DataTable.from_text(spectrum_table(s).to_text()))
    assert np.array_equal(back.values, s.values)
    assert back.metadata["seed"] == "1"


def test_defaults_match_library_defaults():
    cfg = parse_config("")
    assert cfg.spin.D == 3460.0 and cfg.bath.rho_c == 0.054 and cfg.broadening.fwhm == 40.0
    assert cfg.grid == (3000.0, 3900.0, 1.0)


def test_full_config_parses():
    text = """
seed = 7
[spin]
D_MHz = 3450
d_perp_Hz_per_V_cm = 20.0
n_nuclei = 0
[bath]
geometry = "slab"
thickness_nm = 5.0
rho_c_per_nm3 = 0.06
[broadening]
profile = "gaussian"
fwhm_MHz = 30.0
[optics]
t_min_nm = 10
t_max_nm = 50
layers = [
  {name = "air", thickness_nm = inf, n_real = 1.0},
  {name = "film", thickness_nm = 10.0, n_real = 2.3, n_imag = 0.03},
  {name = "glass", thickness_nm = inf, n_real = 1.5},
]
[t1]
t1_total_us = 1.0
t1_phonon_us = 13.0
"""
    cfg = parse_config(text)
    assert cfg.seed == 7 and cfg.bath.seed == 7
    assert cfg.spin.D == 3450.0 and cfg.spin.n_nuclei == 0
    assert cfg.bath.geometry == "slab" and cfg.bath.thickness == 5.0
    assert cfg.broadening.profile == "gaussian"
    assert len(cfg.optics.stack.layers) == 3
    assert math.isinf(cfg.optics.stack.layers[0].thickness)
    assert cfg.t1_total == 1.0


@pytest.mark.parametrize("text, needle, line", [
    ("[bath]\nradius = 10\n", "missing its unit suffix", 2),
    ("[bath]\n\nradius_um = 10\n", "unsupported unit", 3),
    ("seed = 1\n[spin]\nD_MHz = 3460\nbogus = 1\n", "unknown key 'spin.bogus'", 4),
    ("[nope]\nx = 1\n", "unknown section", 1),
    ("[spin]\nD_MHz = \"big\"\n", "must be float", 2),
    ("[spin\n", "TOML syntax error", 1),
    ("[bath]\nrho_c_per_nm3 = -1\n", "rho_c", 1),
    ("[optics]\nlayers = [{thickness_nm = inf, n_real = 1.0, colour = 1}]\n", "colour", 2),
])
def test_config_errors_name_key_and_line(text, needle, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "run.toml")
    assert needle in str(info.value)
    assert info.value.line == line
    assert str(info.value).startswith(f"run.toml:{line}:")


def test_monolayer_density_conversion():
    cfg = parse_config('[bath]\ngeometry = "monolayer"\nrho_c_per_nm3 = 0.081\n')
    assert math.isclose(cfg.bath.rho_c, 0.081 * 0.33)
    cfg2 = parse_config('[bath]\ngeometry = "monolayer"\nrho_c_per_nm2 = 0.02\n')
    assert cfg2.bath.rho_c == 0.02
    with pytest.raises(ConfigError):
        parse_config('[bath]\nrho_c_per_nm2 = 0.02\nrho_c_per_nm3 = 0.02\n')


@pytest.mark.parametrize("name", PRESETS)
def test_presets_load(name):
    cfg = load_preset(name)
    assert cfg.n_configs == 10_000
    assert cfg.fit.n_refits == 15


def test_preset_geometries():
    assert load_preset("bulk").bath.geometry == "bulk-sphere"
    assert math.isclose(load_preset("flake2").bath.rho_c, 0.081 * 0.33)
    assert math.isclose(load_preset("flake3").bath.rho_c, 0.079 * 0.33)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
