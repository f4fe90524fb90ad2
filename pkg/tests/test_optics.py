import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vbspin.optics import (SEMI_INFINITE, Layer, LayerStack, OpticsError, absorption_profile,
                           energy_audit, layer_mean_absorption, mean_absorption_sweep,
                           hbn_stack, poynting_profile, transfer_matrix)


def two_media(n1, n2):
    return LayerStack([Layer(SEMI_INFINITE, n1), Layer(SEMI_INFINITE, n2)])


def test_fresnel_interface():
    for n2 in (1.5, 4.15 + 0.044j):
        res = transfer_matrix(two_media(1.0, n2))
        assert math.isclose(res.R, abs((1 - n2) / (1 + n2)) ** 2, rel_tol=1e-12)
        assert math.isclose(res.R + res.T_sub, 1.0, rel_tol=1e-12)


def test_quarter_wave_antireflection():
    n_sub, lam = 2.25, 600.0
    n1 = math.sqrt(n_sub)
    stack = LayerStack([Layer(SEMI_INFINITE, 1.0), Layer(lam / (4 * n1), n1),
                        Layer(SEMI_INFINITE, n_sub)], wavelength=lam)
    assert transfer_matrix(stack).R < 1e-24


def test_half_wave_layer_is_absent():
    lam, n = 532.0, 1.8
    bare = transfer_matrix(two_media(1.0, 1.46)).R
    stack = LayerStack([Layer(SEMI_INFINITE, 1.0), Layer(lam / (2 * n), n),
                        Layer(SEMI_INFINITE, 1.46)], wavelength=lam)
    assert math.isclose(transfer_matrix(stack).R, bare, rel_tol=1e-10)


def test_zero_thickness_layer_is_absent():
    a = transfer_matrix(hbn_stack(0.0)).R
    b = transfer_matrix(LayerStack([Layer(SEMI_INFINITE, 1.0), Layer(90.0, 1.46),
                                    Layer(SEMI_INFINITE, 4.15 + 0.044j)])).R
    assert math.isclose(a, b, rel_tol=1e-12)


def test_transmittance_continuous_across_interfaces():
    stack = hbn_stack(120.0)
    res = transfer_matrix(stack)
    for j in range(1, len(stack.layers)):
        z = res.tops[j]
        above = res.transmittance(z, layer=j - 1)
        below = res.transmittance(z, layer=j)
        assert abs(above - below) < 1e-9
        ea, ha = res.fields(z, layer=j - 1)
        eb, hb = res.fields(z, layer=j)
        assert abs(ea - eb) < 1e-9 and abs(ha - hb) < 1e-9


def test_transmittance_at_surface_is_one_minus_r():
    res = transfer_matrix(hbn_stack(50.0))
    assert math.isclose(res.transmittance(0.0)[0], 1 - res.R, rel_tol=1e-12)


def test_beer_lambert_half_space():
    n = 2.3 + 0.03j
    lam = 532.0
    # lossless index-matched incidence medium, then a single forward wave in the absorber
    stack = LayerStack([Layer(SEMI_INFINITE, n.real), Layer(400.0, n), Layer(SEMI_INFINITE, n)],
                       wavelength=lam, dz=2.0)
    prof = absorption_profile(stack)
    a0 = 4 * math.pi * n.imag / lam
    z = prof.z[1:]
    t0 = prof.T[0]
    assert np.allclose(prof.T, t0 * np.exp(-a0 * prof.z), rtol=1e-10)
    expected = t0 * (np.exp(-a0 * (z - 2.0)) - np.exp(-a0 * z)) / 2.0
    assert np.allclose(prof.alpha[1:], expected, rtol=1e-10)
    # the finite-difference alpha matches the absorption coefficient within 1 %
    assert abs(prof.alpha[1] / (t0 * math.exp(-a0 * 1.0)) - a0) / a0 < 0.01


def test_dz_refinement_converges():
    stack = hbn_stack(120.0)
    coarse = layer_mean_absorption(stack)
    fine = layer_mean_absorption(LayerStack(stack.layers, dz=0.25))
    # the mean absorption is an exact flux difference, independent of dz
    assert math.isclose(coarse, fine, rel_tol=1e-10)
    p2 = absorption_profile(stack)
    p1 = absorption_profile(LayerStack(stack.layers, dz=1.0))
    assert abs(p2.alpha[p2.z == 60.0][0] - p1.alpha[p1.z == 60.0][0]) < 0.05 * p1.alpha.max()


def test_mean_absorption_equals_layer_absorptance():
    stack = hbn_stack(75.0)
    res = transfer_matrix(stack)
    absorbed = res.transmittance(0.0, layer=1)[0] - res.transmittance(75.0, layer=1)[0]
    assert math.isclose(layer_mean_absorption(stack), absorbed / 75.0, rel_tol=1e-12)


def test_alpha_peaks_near_surface_for_120nm():
    prof = absorption_profile(hbn_stack(120.0))
    inside = prof.z > 0
    zpk = prof.z[inside][np.argmax(prof.alpha[inside])]
    assert zpk <= 10.0


def test_opaque_substrate_limit():
    stack = LayerStack([Layer(SEMI_INFINITE, 1.0), Layer(50.0, 2.3),
                        Layer(SEMI_INFINITE, 4.0 + 5.0j)])
    res = transfer_matrix(stack)
    audit = energy_audit(stack)
    assert audit.total_absorbed == pytest.approx(0.0, abs=1e-15)
    assert math.isclose(res.R + res.T_sub, 1.0, rel_tol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0.0, 300.0), st.floats(1.0, 4.5), st.floats(0.0, 0.5)),
                min_size=1, max_size=5),
       st.floats(1.0, 4.5), st.floats(0.0, 1.0), st.floats(300.0, 1000.0))
def test_energy_conservation(layers, ns, ks, lam):
    stack = LayerStack([Layer(SEMI_INFINITE, 1.0)]
                       + [Layer(t, complex(n, k)) for t, n, k in layers]
                       + [Layer(SEMI_INFINITE, complex(ns, ks))], wavelength=lam)
    audit = energy_audit(stack)
    assert abs(audit.residual) <= 1e-10
    assert all(a >= -1e-15 for a in audit.absorbed)


def test_lossless_stack_absorbs_nothing():
    stack = LayerStack([Layer(SEMI_INFINITE, 1.0), Layer(80.0, 2.0), Layer(SEMI_INFINITE, 1.5)])
    prof = poynting_profile(stack)
    assert np.allclose(prof.T, prof.T[0], rtol=1e-12)


def test_sweep_interference_period():
    ts, alpha = mean_absorption_sweep(20.0, 400.0, 0.5)
    interior = (alpha[1:-1] > alpha[:-2]) & (alpha[1:-1] > alpha[2:])
    peaks = ts[1:-1][interior]
    assert len(peaks) >= 3
    period = 532.0 / (2 * 2.3)
    assert np.all(np.abs(np.diff(peaks) - period) < 0.05 * period)
    assert np.argmax(alpha) == 0


@pytest.mark.parametrize("layers", [
    [Layer(SEMI_INFINITE, 1.0)],
    [Layer(10.0, 1.0), Layer(SEMI_INFINITE, 1.5)],
    [Layer(SEMI_INFINITE, 1.0), Layer(-1.0, 2.0), Layer(SEMI_INFINITE, 1.5)],
    [Layer(SEMI_INFINITE, 1.0), Layer(10.0, 2.0 - 0.1j), Layer(SEMI_INFINITE, 1.5)],
    [Layer(SEMI_INFINITE, 1.0 + 0.1j), Layer(SEMI_INFINITE, 1.5)],
    [Layer(SEMI_INFINITE, 1.0), Layer(10.0, 0.0), Layer(SEMI_INFINITE, 1.5)],
])
def test_invalid_stacks(layers):
    with pytest.raises(OpticsError):
        LayerStack(layers)


def test_sweep_validation():
    with pytest.raises(OpticsError):
        mean_absorption_sweep(0.0, 10.0, 1.0)
    with pytest.raises(OpticsError):
        layer_mean_absorption(hbn_stack(0.0))
