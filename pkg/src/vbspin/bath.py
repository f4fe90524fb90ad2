"""Random point-charge baths on hBN lattice sites and their field at the defect.

Lengths are in nm, fields in V/cm. The defect sits on a lattice site at the
origin; the c-axis is z. Each draw index ``j`` owns an independent random
stream derived from ``(seed, j)``, so draws can be produced in any order or in
parallel and still be bit-identical.

Within a draw, charges are taken from the front of a sequence of distinct
sites (positives on even slots, negatives on odd slots). A draw at a smaller
density is therefore a prefix of the draw at a larger density, which is what
makes common-random-number fits in ``rho_c`` well behaved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import stats

from . import kernels
from .spin import ElectricField

COULOMB_K = 1.43996  # e / (4 pi eps0), V nm
V_PER_NM_TO_V_PER_CM = 1e7
LOCALITY_RADIUS = 3.5  # nm, half of the d_c ~ 7 nm locality diameter

GEOMETRIES = ("bulk-sphere", "slab", "monolayer")
DENSITY_CONVENTIONS = ("combined", "per-species")
COUNT_MODES = ("poisson", "fixed")

_SITE_CHUNK = 256


class BathError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeSpec:
    in_plane_constant: float = 0.2504
    interlayer_spacing: float = 0.33

    def __post_init__(self):
        if not self.in_plane_constant > 0:
            raise BathError("in_plane_constant must be positive")
        if not self.interlayer_spacing > 0:
            raise BathError("interlayer_spacing must be positive")

    @property
    def basis(self):
        """In-plane honeycomb basis (two atoms), nm."""
        a = self.in_plane_constant
        return np.array([[0.0, 0.0], [0.5 * a, 0.5 * a / math.sqrt(3.0)]])

    @property
    def areal_site_density(self):
        """Atomic sites per nm^2 of one layer."""
        return 2.0 / (math.sqrt(3.0) / 2.0 * self.in_plane_constant ** 2)


@dataclass(frozen=True)
class BathParams:
    """Charge-bath settings.

    ``rho_c`` is volumetric (nm^-3) for ``bulk-sphere`` and ``slab`` and areal
    (nm^-2) for ``monolayer``; see :func:`areal_density`. With the default
    ``density_convention="combined"`` it counts both charge species together.
    """

    rho_c: float = 0.054
    radius: float = 10.0
    geometry: str = "bulk-sphere"
    thickness: float | None = None
    epsilon_r: float = 3.4
    seed: int = 0
    density_convention: str = "combined"
    count_mode: str = "poisson"

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise BathError(f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")
        if self.geometry == "slab" and (self.thickness is None or self.thickness <= 0):
            raise BathError("slab geometry needs a positive thickness")
        if not self.rho_c >= 0:
            raise BathError(f"rho_c must be >= 0, got {self.rho_c}")
        if not self.radius > 0:
            raise BathError("radius must be positive")
        if not self.epsilon_r >= 1:
            raise BathError(f"epsilon_r must be >= 1, got {self.epsilon_r}")
        if self.density_convention not in DENSITY_CONVENTIONS:
            raise BathError(f"density_convention must be one of {DENSITY_CONVENTIONS}")
        if self.count_mode not in COUNT_MODES:
            raise BathError(f"count_mode must be one of {COUNT_MODES}")

    def with_rho(self, rho_c):
        return replace(self, rho_c=float(rho_c))


@dataclass
class ChargeConfiguration:
    positions: np.ndarray  # (n, 3) nm
    signs: np.ndarray  # (n,) +1 / -1
    params: BathParams | None = None
    draw_index: int = 0
    site_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.signs)

    @classmethod
    def empty(cls, params=None):
        return cls(np.zeros((0, 3)), np.zeros(0, dtype=np.int64), params)

    def union(self, other):
        return ChargeConfiguration(np.vstack([self.positions, other.positions]),
                                   np.concatenate([self.signs, other.signs]))

    def subset(self, mask):
        return ChargeConfiguration(self.positions[mask], self.signs[mask], self.params,
                                   self.draw_index)


def areal_density(rho_volumetric, lattice=LatticeSpec()):
    """Volumetric density (nm^-3) -> areal density of one layer (nm^-2)."""
    return rho_volumetric * lattice.interlayer_spacing


def volumetric_density(rho_areal, lattice=LatticeSpec()):
    return rho_areal / lattice.interlayer_spacing


def _layer_indices(params, lattice):
    c = lattice.interlayer_spacing
    kmax = int(math.floor(params.radius / c + 1e-12))
    ks = np.arange(-kmax, kmax + 1)
    if params.geometry == "monolayer":
        return np.array([0])
    if params.geometry == "slab":
        half = 0.5 * params.thickness
        ks = ks[np.abs(ks * c) <= half + 1e-12]
    return ks


@lru_cache(maxsize=16)
def _sites_cached(geometry, radius, thickness, a, c):
    lattice = LatticeSpec(a, c)
    params = BathParams(rho_c=0.0, radius=radius, geometry=geometry, thickness=thickness)
    a1 = np.array([a, 0.0])
    a2 = np.array([0.5 * a, 0.5 * math.sqrt(3.0) * a])
    nmax = int(math.ceil(radius / (0.5 * math.sqrt(3.0) * a))) + 2
    i, j = np.meshgrid(np.arange(-nmax, nmax + 1), np.arange(-nmax, nmax + 1), indexing="ij")
    cells = i.reshape(-1, 1) * a1 + j.reshape(-1, 1) * a2
    plane = (cells[:, None, :] + lattice.basis[None, :, :]).reshape(-1, 2)
    r2_plane = (plane ** 2).sum(axis=1)
    layers = []
    for k in _layer_indices(params, lattice):
        z = k * c
        inside = r2_plane + z * z <= radius * radius + 1e-12
        pts = plane[inside]
        layers.append(np.column_stack([pts, np.full(len(pts), z)]))
    sites = np.vstack(layers)
    r2 = (sites ** 2).sum(axis=1)
    sites = sites[r2 > 1e-12]  # defect site
    # canonical order so enumeration is platform independent
    order = np.lexsort((sites[:, 1], sites[:, 0], sites[:, 2]))
    sites = np.ascontiguousarray(sites[order])
    sites.setflags(write=False)
    return sites


def enumerate_sites(params, lattice=LatticeSpec()):
    """All lattice sites inside the bath geometry, origin excluded, shape (n, 3)."""
    thickness = params.thickness if params.geometry == "slab" else None
    return _sites_cached(params.geometry, float(params.radius), thickness,
                         float(lattice.in_plane_constant), float(lattice.interlayer_spacing))


@lru_cache(maxsize=16)
def _unit_field_cached(geometry, radius, thickness, a, c):
    sites = _sites_cached(geometry, radius, thickness, a, c)
    r = np.sqrt((sites ** 2).sum(axis=1))
    # sign convention: sum_i q_i K r_i / |r_i|^3 (see field_at_origin)
    table = COULOMB_K * sites / r[:, None] ** 3
    table.setflags(write=False)
    return table


def unit_field_table(params, lattice=LatticeSpec()):
    """Per-site field (V/nm, vacuum) at the origin of a unit positive charge."""
    thickness = params.thickness if params.geometry == "slab" else None
    return _unit_field_cached(params.geometry, float(params.radius), thickness,
                              float(lattice.in_plane_constant), float(lattice.interlayer_spacing))


def bath_volume(params, lattice=LatticeSpec()):
    """Volume (nm^3) or, for monolayers, area (nm^2) the density refers to."""
    R = params.radius
    if params.geometry == "bulk-sphere":
        return 4.0 / 3.0 * math.pi * R ** 3
    if params.geometry == "monolayer":
        return math.pi * R ** 2
    c = lattice.interlayer_spacing
    z = _layer_indices(params, lattice) * c
    return float(c * np.sum(math.pi * (R * R - z * z)))


def mean_count_per_sign(params, lattice=LatticeSpec()):
    total = params.rho_c * bath_volume(params, lattice)
    return total / 2.0 if params.density_convention == "combined" else total


def draw_rng(seed, index):
    """Independent generator for draw ``index`` of the stream ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def _count_from_uniform(u, lam, mode):
    if mode == "fixed":
        return np.full(np.shape(u), int(round(lam)), dtype=np.int64)
    if lam <= 0:
        return np.zeros(np.shape(u), dtype=np.int64)
    return np.maximum(stats.poisson.ppf(u, lam), 0).astype(np.int64)


def _distinct_sites(rng, n_sites, count):
    """First ``count`` distinct indices of an i.i.d. uniform index stream.

    Equivalent to sampling without replacement, and prefix-stable: asking for
    more sites extends the sequence without changing its start.
    """
    if count > n_sites:
        raise BathError(f"need {count} distinct sites but only {n_sites} exist")
    seen = np.zeros(0, dtype=np.int64)
    while len(seen) < count:
        draws = rng.integers(0, n_sites, size=_SITE_CHUNK)
        merged = np.concatenate([seen, draws])
        _, first = np.unique(merged, return_index=True)
        seen = merged[np.sort(first)]
    return seen[:count]


def _check_capacity(lam_per_sign, n_sites):
    if 2.0 * lam_per_sign > n_sites:
        raise BathError(
            f"requested mean of {2 * lam_per_sign:.1f} charges exceeds the "
            f"{n_sites} available lattice sites")


def _draw(rng, lam, n_sites, mode):
    u = rng.random()
    n = int(_count_from_uniform(u, lam, mode))
    return u, _distinct_sites(rng, n_sites, 2 * n)


def sample_charges(params, lattice=LatticeSpec(), rng=None, draw_index=0):
    """One random configuration with equal numbers of + and - charges."""
    if rng is None:
        rng = draw_rng(params.seed, draw_index)
    sites = enumerate_sites(params, lattice)
    lam = mean_count_per_sign(params, lattice)
    _check_capacity(lam, len(sites))
    _, idx = _draw(rng, lam, len(sites), params.count_mode)
    signs = np.ones(len(idx), dtype=np.int64)
    signs[1::2] = -1
    return ChargeConfiguration(sites[idx], signs, params, draw_index, idx)


def field_at_origin(config, epsilon_r=1.0):
    """Coulomb field (V/cm) of the configuration at the defect site.

    Computed as ``sum_i sign_i * K / (epsilon_r r_i^2) * rhat_i`` with ``rhat_i``
    pointing from the defect to charge ``i``. Only |E_perp| and the relative
    orientation of fields enter the spectra, and the bath holds equal numbers
    of both signs, so this orientation convention has no observable effect.
    """
    if len(config) == 0:
        return ElectricField()
    r = config.positions
    d = np.sqrt((r ** 2).sum(axis=1))
    if np.any(d <= 0):
        raise BathError("a charge sits on the defect site")
    e = (config.signs[:, None] * COULOMB_K * r / d[:, None] ** 3).sum(axis=0)
    return ElectricField.from_array(e * V_PER_NM_TO_V_PER_CM / epsilon_r)


class ChargeEnsemble:
    """Frozen random draws ``0..n_configs-1`` reusable at any ``rho_c <= rho_max``.

    For a given draw index, :meth:`configuration` at density ``rho`` returns
    exactly what :func:`sample_charges` produces for ``params.with_rho(rho)``.
    """

    def __init__(self, params, n_configs, rho_max=None, lattice=LatticeSpec()):
        if n_configs < 1:
            raise BathError("n_configs must be >= 1")
        self.params = params
        self.lattice = lattice
        self.n_configs = int(n_configs)
        self.rho_max = float(params.rho_c if rho_max is None else max(rho_max, params.rho_c))
        self.sites = enumerate_sites(params, lattice)
        self.unit_field = unit_field_table(params, lattice)
        lam_max = mean_count_per_sign(params.with_rho(self.rho_max), lattice)
        _check_capacity(lam_max, len(self.sites))

        self.uniforms = np.empty(self.n_configs)
        rows = []
        for j in range(self.n_configs):
            u, idx = _draw(draw_rng(params.seed, j), lam_max, len(self.sites), params.count_mode)
            self.uniforms[j] = u
            rows.append(idx)
        width = max((len(r) for r in rows), default=0)
        self.pool = np.full((self.n_configs, max(width, 2)), -1, dtype=np.int64)
        for j, idx in enumerate(rows):
            self.pool[j, :len(idx)] = idx

    def _params(self, rho_c):
        rho_c = self.params.rho_c if rho_c is None else float(rho_c)
        if rho_c > self.rho_max * (1 + 1e-12):
            raise BathError(f"rho_c={rho_c} exceeds the ensemble's rho_max={self.rho_max}")
        return self.params.with_rho(max(rho_c, 0.0))

    def counts(self, rho_c=None):
        """Charges per sign for every draw."""
        p = self._params(rho_c)
        lam = mean_count_per_sign(p, self.lattice)
        return _count_from_uniform(self.uniforms, lam, p.count_mode)

    def fields(self, rho_c=None, epsilon_r=None):
        """(n_configs, 3) fields in V/cm."""
        eps = self.params.epsilon_r if epsilon_r is None else epsilon_r
        scale = V_PER_NM_TO_V_PER_CM / eps
        return kernels.pool_fields(self.unit_field, self.pool, self.counts(rho_c), scale)

    def slab_fields(self, thickness=None, rho_c=None, epsilon_r=None):
        """Fields from the same draws keeping only charges with |z| <= thickness/2.

        ``thickness=None`` keeps the z = 0 layer. Restricting a Poisson draw
        thins it, so each thickness is a valid ensemble on its own while all of
        them share random numbers; thickness sweeps then compare like with like.
        """
        if self.params.geometry != "bulk-sphere":
            raise BathError("slab_fields needs a bulk-sphere ensemble")
        z = np.abs(self.sites[:, 2])
        half = 0.0 if thickness is None else 0.5 * float(thickness)
        keep = z <= half + 1e-9
        eps = self.params.epsilon_r if epsilon_r is None else epsilon_r
        table = np.ascontiguousarray(self.unit_field * keep[:, None])
        return kernels.pool_fields(table, self.pool, self.counts(rho_c),
                                   V_PER_NM_TO_V_PER_CM / eps)

    def configuration(self, index, rho_c=None):
        p = self._params(rho_c)
        n = int(self.counts(p.rho_c)[index])
        idx = self.pool[index, :2 * n]
        signs = np.ones(len(idx), dtype=np.int64)
        signs[1::2] = -1
        return ChargeConfiguration(self.sites[idx], signs, p, index, idx.copy())


@dataclass
class LocalityStats:
    n_draws: int
    radius: float
    mean_close_count: float
    expected_close_count: float
    mean_close_fraction: float | None
    median_close_fraction: float | None


def locality_stats(params, n_draws, lattice=LatticeSpec(), radius=LOCALITY_RADIUS):
    """How much of the transverse field comes from charges within ``radius`` nm.

    The close fraction of a draw is |E_perp(close charges)| / |E_perp(all)|;
    draws without charges are left out of the fraction statistics.
    """
    if n_draws < 100:
        raise BathError("locality_stats needs at least 100 draws")
    ens = ChargeEnsemble(params, n_draws, lattice=lattice)
    counts = ens.counts()
    r = np.sqrt((ens.sites ** 2).sum(axis=1))
    close_table = np.where((r <= radius)[:, None], ens.unit_field, 0.0)
    scale = V_PER_NM_TO_V_PER_CM / params.epsilon_r
    full = kernels.pool_fields(ens.unit_field, ens.pool, counts, scale)
    close = kernels.pool_fields(close_table, ens.pool, counts, scale)

    close_count = np.zeros(n_draws)
    for j in range(n_draws):
        close_count[j] = np.count_nonzero(r[ens.pool[j, :2 * counts[j]]] <= radius)

    e_full = np.hypot(full[:, 0], full[:, 1])
    e_close = np.hypot(close[:, 0], close[:, 1])
    valid = (counts > 0) & (e_full > 0)
    if valid.any():
        frac = e_close[valid] / e_full[valid]
        mean_frac, median_frac = float(frac.mean()), float(np.median(frac))
    else:
        mean_frac = median_frac = None
    vol = 4.0 / 3.0 * math.pi * radius ** 3
    if params.geometry == "monolayer":
        vol = math.pi * radius ** 2
    return LocalityStats(n_draws, radius, float(close_count.mean()), params.rho_c * vol
                         if params.density_convention == "combined" else 2 * params.rho_c * vol,
                         mean_frac, median_frac)
