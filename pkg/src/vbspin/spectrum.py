"""Ensemble-averaged ESR spectra as normalised photoluminescence.

A spectrum is ``S(nu) = 1 - C * A(nu) / max(A)``, where ``A`` is the
configuration-averaged sum of broadened transition lines and ``C`` the ODMR
contrast, so the deepest point sits at ``1 - C``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from . import kernels
from .bath import ChargeEnsemble, LatticeSpec
from .spin import TransitionSet, hyperfine_blocks

PROFILES = {"lorentzian": kernels.LORENTZIAN, "gaussian": kernels.GAUSSIAN}
DEFAULT_CONTRAST = 0.06
SMOOTH_WINDOW = 5
NOISE_SIGMAS = 3.0
GRID_MARGIN_FWHM = 3.0


class SpectrumError(ValueError):
    pass


@dataclass(frozen=True)
class BroadeningSpec:
    profile: str = "lorentzian"
    fwhm: float = 40.0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise SpectrumError(f"profile must be one of {tuple(PROFILES)}, got {self.profile!r}")
        if not self.fwhm > 0:
            raise SpectrumError("fwhm must be positive")

    @property
    def kind(self):
        return PROFILES[self.profile]


@dataclass
class Spectrum:
    frequencies: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.frequencies.shape != self.values.shape or self.frequencies.ndim != 1:
            raise SpectrumError("frequencies and values must be 1-d arrays of equal length")
        check_grid(self.frequencies)

    @property
    def step(self):
        return float(self.frequencies[1] - self.frequencies[0])

    def resample(self, grid):
        """Linear interpolation onto ``grid``; outside points are rejected."""
        grid = np.asarray(grid, dtype=float)
        lo, hi = self.frequencies[0], self.frequencies[-1]
        if grid[0] < lo - 1e-9 or grid[-1] > hi + 1e-9:
            raise SpectrumError(
                f"grid [{grid[0]}, {grid[-1]}] is not covered by spectrum [{lo}, {hi}]")
        return Spectrum(grid, np.interp(grid, self.frequencies, self.values), dict(self.metadata))


def check_grid(grid, rtol=1e-9):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 3:
        raise SpectrumError("grid needs at least 3 points")
    d = np.diff(grid)
    if np.any(d <= 0):
        raise SpectrumError("grid must be strictly ascending")
    if np.ptp(d) > rtol * abs(grid).max():
        raise SpectrumError("grid spacing must be uniform")
    return grid


def default_grid(start=3000.0, stop=3900.0, step=1.0):
    n = int(round((stop - start) / step)) + 1
    return start + step * np.arange(n)


def convolve_lines(lines, broadening, grid):
    """Broadened line sum on ``grid``: unit-area profiles scaled by the weights.

    ``lines`` is a :class:`TransitionSet` or a ``(frequencies, weights)`` pair.
    """
    grid = check_grid(grid)
    if isinstance(lines, TransitionSet):
        freqs, weights = lines.frequencies, lines.weights
    else:
        freqs, weights = lines
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    weights = np.atleast_1d(np.asarray(weights, dtype=float))
    return kernels.accumulate_lines(freqs, weights, grid, broadening.fwhm, broadening.kind)


def folded_blocks(n_nuclei):
    """Hyperfine blocks with +m and -m merged; their lines coincide exactly."""
    ms, mults = hyperfine_blocks(n_nuclei)
    folded = {}
    for m, mult in zip(ms, mults):
        folded[abs(m)] = folded.get(abs(m), 0) + mult
    keys = sorted(folded)
    return keys, [folded[k] for k in keys]


def ensemble_lines(fields, params):
    """Per-configuration transition lines for an (n, 3) array of fields (V/cm)."""
    ms, mults = folded_blocks(params.n_nuclei)
    mults = np.asarray(mults, dtype=float)
    return kernels.block_lines(fields, params.D, params.d_perp_mhz, params.d_par_mhz,
                               params.A_zz, np.asarray(ms, dtype=float),
                               mults / mults.sum(), x_drive=params.drive == "sx")


def grid_coverage(freqs, weights, grid, fwhm):
    lo = grid[0] - GRID_MARGIN_FWHM * fwhm
    hi = grid[-1] + GRID_MARGIN_FWHM * fwhm
    outside = (freqs < lo) | (freqs > hi)
    total = weights.sum()
    frac = float(weights[outside].sum() / total) if total > 0 else 0.0
    return int(outside.sum()), frac


def ensemble_profile(ensemble, params, broadening, grid, rho_c=None):
    """Configuration-averaged absorption profile and the grid-coverage warning (or None)."""
    grid = check_grid(grid)
    fields = ensemble.fields(rho_c)
    freqs, weights = ensemble_lines(fields, params)
    profile = kernels.accumulate_lines(freqs, weights, grid, broadening.fwhm, broadening.kind)
    profile /= ensemble.n_configs
    n_out, frac = grid_coverage(freqs, weights, grid, broadening.fwhm)
    warning = None
    if n_out:
        warning = (f"{n_out} line(s) carrying {frac:.3%} of the weight lie outside "
                   f"grid +/- {GRID_MARGIN_FWHM:g} fwhm")
    return profile, warning


def to_pl(profile, contrast):
    """Absorption profile -> normalised PL with its deepest point at 1 - contrast."""
    peak = profile.max()
    if peak <= 0:
        return np.ones_like(profile)
    return 1.0 - contrast * profile / peak


def ensemble_spectrum(bath, params, broadening=BroadeningSpec(), n_configs=10_000, grid=None,
                      contrast=DEFAULT_CONTRAST, lattice=LatticeSpec(), ensemble=None):
    """Simulated zero-field ESR spectrum averaged over ``n_configs`` charge draws.

    Deterministic for a given ``bath.seed``. Pass a prebuilt ``ensemble`` (with
    ``rho_max >= bath.rho_c``) to reuse frozen draws across densities.
    """
    if n_configs < 1:
        raise SpectrumError("n_configs must be >= 1")
    grid = default_grid() if grid is None else check_grid(grid)
    if ensemble is None:
        ensemble = ChargeEnsemble(bath, n_configs, lattice=lattice)
    profile, warning = ensemble_profile(ensemble, params, broadening, grid, bath.rho_c)
    meta = {
        "n_configs": ensemble.n_configs,
        "seed": bath.seed,
        "rho_c": bath.rho_c,
        "geometry": bath.geometry,
        "epsilon_r": bath.epsilon_r,
        "profile": broadening.profile,
        "fwhm_MHz": broadening.fwhm,
        "contrast": contrast,
    }
    if warning:
        meta["warning"] = warning
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return Spectrum(grid, to_pl(profile, contrast), meta)


# --------------------------------------------------------------------------
# dip detection
# --------------------------------------------------------------------------

@dataclass
class SplittingEstimate:
    single: bool
    center: float
    nu_minus: float | None = None
    nu_plus: float | None = None
    two_e: float | None = None
    comb: bool = False
    dips: list = field(default_factory=list)
    noise: float = 0.0


def moving_average(values, window=SMOOTH_WINDOW):
    pad = window // 2
    padded = np.pad(values, pad, mode="edge")
    return np.convolve(padded, np.ones(window) / window, mode="valid")


def _refine_minimum(x, y, i):
    if i == 0 or i == len(y) - 1:
        return float(x[i])
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    denom = y0 - 2.0 * y1 + y2
    if denom <= 0:
        return float(x[i])
    shift = 0.5 * (y0 - y2) / denom
    return float(x[i] + np.clip(shift, -0.5, 0.5) * (x[1] - x[0]))


def splitting_estimate(spectrum, min_relative_prominence=0.15, comb_spacing_rtol=0.25):
    """Locate the dominant PL dips and the E-splitting between them.

    Dips are local minima of the 5-point moving average whose depth below the
    unit baseline and whose prominence exceed 3x the baseline noise. Dips with
    a prominence under ``min_relative_prominence`` of the deepest one are
    treated as ripple. Three or more evenly spaced dominant dips are reported
    as a single resonance with a hyperfine comb.
    """
    x, y = spectrum.frequencies, spectrum.values
    smooth = moving_average(y)
    resid = y - smooth
    noise = 1.4826 * float(np.median(np.abs(resid - np.median(resid))))
    threshold = max(NOISE_SIGMAS * noise, 1e-12)
    depth = 1.0 - smooth
    if depth.max() <= threshold:
        raise SpectrumError("no dip rises above the baseline noise")

    peaks, props = find_peaks(depth, height=threshold, prominence=threshold)
    if len(peaks) == 0:
        # monotone edge minimum only
        raise SpectrumError("no local minimum found below the baseline")
    prom = props["prominences"]
    dominant = peaks[prom >= min_relative_prominence * prom.max()]
    positions = [_refine_minimum(x, y, int(i)) for i in dominant]
    deepest = int(dominant[np.argmax(depth[dominant])])
    center = _refine_minimum(x, y, deepest)

    if len(dominant) == 1:
        return SplittingEstimate(True, center, dips=positions, noise=noise)
    if len(dominant) >= 3:
        gaps = np.diff(positions)
        if np.ptp(gaps) <= comb_spacing_rtol * gaps.mean():
            return SplittingEstimate(True, center, comb=True, dips=positions, noise=noise)
        # uneven structure: keep the two deepest
        order = np.argsort(-depth[dominant])[:2]
        dominant = np.sort(dominant[order])
        positions = [_refine_minimum(x, y, int(i)) for i in dominant]
    lo, hi = positions[0], positions[-1]
    return SplittingEstimate(False, 0.5 * (lo + hi), lo, hi, hi - lo, dips=positions, noise=noise)
