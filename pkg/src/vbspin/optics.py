"""Normal-incidence transfer-matrix optics of layered stacks.

Depth ``z`` (nm) runs downward from the top of the first finite layer; the
incidence medium occupies z < 0. Inside layer ``j`` the field is
``E = A_j exp(i k_j u) + B_j exp(-i k_j u)`` with ``u`` measured from the
layer's top, and the (vacuum-impedance normalised) magnetic field is
``H = n_j (A_j exp(i k_j u) - B_j exp(-i k_j u))``. The incident amplitude is
1, so the depth-resolved transmittance is ``T(z) = Re(E H*) / n_0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

SEMI_INFINITE = math.inf
CONSERVATION_TOL = 1e-10

# standard-table defaults at 532 nm; inputs, not fitted values
N_AIR = 1.0
N_HBN = 2.3 + 0.03j
N_SIO2 = 1.46 + 0.0j
N_SI = 4.15 + 0.044j


class OpticsError(ValueError):
    pass


@dataclass(frozen=True)
class Layer:
    thickness: float
    n: complex
    name: str = ""

    @property
    def semi_infinite(self):
        return math.isinf(self.thickness)


@dataclass
class LayerStack:
    layers: list
    wavelength: float = 532.0
    dz: float = 2.0

    def __post_init__(self):
        if len(self.layers) < 2:
            raise OpticsError("a stack needs an incidence medium and a substrate")
        first, last = self.layers[0], self.layers[-1]
        if not (first.semi_infinite and last.semi_infinite):
            raise OpticsError("first and last layers must be semi-infinite")
        for lay in self.layers[1:-1]:
            if lay.semi_infinite or not lay.thickness >= 0:
                raise OpticsError(f"inner layer {lay.name!r} needs a finite thickness >= 0")
        for lay in self.layers:
            n = complex(lay.n)
            if n == 0:
                raise OpticsError(f"layer {lay.name!r} has a zero refractive index")
            if n.imag < 0:
                raise OpticsError(f"layer {lay.name!r} has gain (Im n < 0)")
        n0 = complex(first.n)
        if n0.imag != 0 or n0.real <= 0:
            raise OpticsError("the incidence medium must be lossless with Re(n) > 0")
        if not self.wavelength > 0 or not self.dz > 0:
            raise OpticsError("wavelength and dz must be positive")

    @property
    def tops(self):
        """Depth of the top of every layer (incidence medium and first layer at 0)."""
        thick = [0.0] + [lay.thickness for lay in self.layers[1:-1]]
        return np.concatenate([[0.0], np.cumsum(thick)])

    @property
    def total_thickness(self):
        return float(sum(lay.thickness for lay in self.layers[1:-1]))

    def with_thickness(self, index, thickness):
        layers = list(self.layers)
        layers[index] = replace(layers[index], thickness=float(thickness))
        return replace(self, layers=layers)


def hbn_stack(t_hbn, n_hbn=N_HBN, sio2_thickness=90.0, n_sio2=N_SIO2, n_si=N_SI,
              wavelength=532.0, dz=2.0):
    """air / hBN(t) / SiO2(90 nm) / Si."""
    return LayerStack([
        Layer(SEMI_INFINITE, N_AIR, "air"),
        Layer(float(t_hbn), n_hbn, "hBN"),
        Layer(float(sio2_thickness), n_sio2, "SiO2"),
        Layer(SEMI_INFINITE, n_si, "Si"),
    ], wavelength, dz)


@dataclass
class TransferResult:
    stack: LayerStack
    r: complex
    t: complex
    amp_fwd: np.ndarray  # A_j at the top of layer j
    amp_bwd: np.ndarray  # B_j
    k: np.ndarray  # complex wavenumbers, 1/nm
    tops: np.ndarray
    n: np.ndarray = field(repr=False, default=None)

    @property
    def R(self):
        return abs(self.r) ** 2

    @property
    def T_sub(self):
        """Power flux entering the substrate, relative to the incident flux."""
        ns = self.n[-1]
        return float((ns * abs(self.amp_fwd[-1]) ** 2).real / self.n[0].real)

    def layer_of(self, z):
        z = np.asarray(z, dtype=float)
        idx = np.searchsorted(self.tops[1:], z, side="right")
        return np.where(z < 0, 0, idx)

    def fields(self, z, layer=None):
        """Complex E and normalised H at depths ``z``; ``layer`` forces the branch used."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        j = self.layer_of(z) if layer is None else np.full(z.shape, int(layer))
        u = z - self.tops[j]
        ph = np.exp(1j * self.k[j] * u)
        fwd = self.amp_fwd[j] * ph
        bwd = self.amp_bwd[j] / ph
        return fwd + bwd, self.n[j] * (fwd - bwd)

    def transmittance(self, z, layer=None):
        e, h = self.fields(z, layer)
        return (e * np.conj(h)).real / self.n[0].real


def transfer_matrix(stack):
    """Reflection/transmission amplitudes and the forward/backward field amplitudes."""
    n = np.array([complex(lay.n) for lay in stack.layers])
    k0 = 2.0 * math.pi / stack.wavelength
    k = k0 * n
    nl = len(n)
    fwd = np.zeros(nl, dtype=complex)
    bwd = np.zeros(nl, dtype=complex)

    # start in the substrate with a unit outgoing wave and walk to the top
    e, h = 1.0 + 0j, n[-1]
    fwd[-1], bwd[-1] = 1.0, 0.0
    for j in range(nl - 2, 0, -1):
        d = stack.layers[j].thickness
        delta = k[j] * d
        c, s = np.cos(delta), np.sin(delta)
        e, h = c * e - 1j * s * h / n[j], -1j * n[j] * s * e + c * h
        fwd[j] = 0.5 * (e + h / n[j])
        bwd[j] = 0.5 * (e - h / n[j])
    fwd[0] = 0.5 * (e + h / n[0])
    bwd[0] = 0.5 * (e - h / n[0])

    norm = fwd[0]
    fwd /= norm
    bwd /= norm
    return TransferResult(stack, complex(bwd[0]), complex(1.0 / norm), fwd, bwd, k,
                          stack.tops, n)


@dataclass
class DepthProfile:
    z: np.ndarray
    T: np.ndarray
    alpha: np.ndarray | None = None


def depth_grid(stack, z_max=None):
    z_max = stack.total_thickness if z_max is None else float(z_max)
    n = int(math.floor(z_max / stack.dz + 1e-9))
    z = stack.dz * np.arange(n + 1)
    if z_max - z[-1] > 1e-9 * max(z_max, 1.0):
        z = np.append(z, z_max)
    return z


def poynting_profile(stack, z_max=None, result=None):
    """T(z) on the dz grid from 0 to the bottom of the last finite layer (or ``z_max``)."""
    result = transfer_matrix(stack) if result is None else result
    z = depth_grid(stack, z_max)
    return DepthProfile(z, result.transmittance(z))


def absorption_profile(stack, z_max=None, result=None):
    """Absorption per unit length on the dz grid, positive for dissipation.

    ``alpha(z) = [T(z - dz) - T(z)] / dz`` is the mean absorption over the slab
    (z - dz, z]; at z = 0 that slab lies in the incidence medium.
    """
    result = transfer_matrix(stack) if result is None else result
    prof = poynting_profile(stack, z_max, result)
    t_prev = result.transmittance(prof.z - stack.dz)
    prof.alpha = (t_prev - prof.T) / stack.dz
    return prof


def layer_mean_absorption(stack, index=1, result=None):
    """Spatial mean of alpha over finite layer ``index``, nm^-1.

    alpha is sampled as backward differences on a grid of step <= dz that
    ends exactly at the layer's bottom; each sample sits at its slab midpoint
    and the samples are integrated with the trapezoid rule, the end slabs
    extended to the layer boundaries.
    """
    result = transfer_matrix(stack) if result is None else result
    lay = stack.layers[index]
    t = lay.thickness
    if not t > 0:
        raise OpticsError("mean absorption needs a layer with positive thickness")
    nseg = max(1, int(math.ceil(t / stack.dz - 1e-9)))
    top = stack.tops[index]
    nodes = top + np.linspace(0.0, t, nseg + 1)
    tz = result.transmittance(nodes, layer=index)
    h = t / nseg
    alpha = (tz[:-1] - tz[1:]) / h
    mids = 0.5 * (nodes[:-1] + nodes[1:]) - top
    xs = np.concatenate([[0.0], mids, [t]])
    ys = np.concatenate([[alpha[0]], alpha, [alpha[-1]]])
    return float(np.trapezoid(ys, xs)) / t


def mean_absorption_sweep(t_min, t_max, t_step, base_stack=None, index=1):
    """Table of (thickness, mean alpha) with layer ``index`` swept over thickness."""
    if not t_min > 0:
        raise OpticsError("t_min must be positive")
    if not t_step > 0 or t_max < t_min:
        raise OpticsError("need t_step > 0 and t_max >= t_min")
    base_stack = hbn_stack(t_min) if base_stack is None else base_stack
    n = int(math.floor((t_max - t_min) / t_step + 1e-9))
    ts = t_min + t_step * np.arange(n + 1)
    alpha = np.array([layer_mean_absorption(base_stack.with_thickness(index, t), index)
                      for t in ts])
    return ts, alpha


def _phi(x):
    """(exp(x) - 1) / x, stable near 0, real or complex."""
    x = complex(x)
    if abs(x) < 1e-6:
        return 1.0 + x / 2.0 + x * x / 6.0
    return (np.exp(x) - 1.0) / x


def layer_dissipation(result, index):
    """Power absorbed in finite layer ``index`` from the local dissipation integral.

    Independent of the flux bookkeeping: ``k0 Im(n^2) / n0 * int |E|^2 dz``.
    """
    n = result.n[index]
    d = result.stack.layers[index].thickness
    if d == 0 or (n * n).imag == 0:
        return 0.0
    k = result.k[index]
    a, b = result.amp_fwd[index], result.amp_bwd[index]
    kr, ki = k.real, k.imag
    i_fwd = abs(a) ** 2 * d * _phi(-2.0 * ki * d).real
    i_bwd = abs(b) ** 2 * d * _phi(2.0 * ki * d).real
    i_x = 2.0 * (a * np.conj(b) * d * _phi(2j * kr * d)).real
    k0 = 2.0 * math.pi / result.stack.wavelength
    return float(k0 * (n * n).imag / result.n[0].real * (i_fwd + i_bwd + i_x))


@dataclass
class EnergyAudit:
    R: float
    absorbed: list
    T_sub: float
    residual: float

    @property
    def total_absorbed(self):
        return float(sum(self.absorbed))


def energy_audit(stack, tol=CONSERVATION_TOL):
    """Check R + sum(absorbed) + T_sub = 1; raises OpticsError beyond ``tol``."""
    res = transfer_matrix(stack)
    absorbed = [layer_dissipation(res, j) for j in range(1, len(stack.layers) - 1)]
    residual = res.R + sum(absorbed) + res.T_sub - 1.0
    audit = EnergyAudit(res.R, absorbed, res.T_sub, float(residual))
    if abs(residual) > tol:
        raise OpticsError(f"energy not conserved: R + A + T - 1 = {residual:.3e}")
    return audit
