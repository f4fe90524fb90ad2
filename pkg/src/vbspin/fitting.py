"""Least-squares fitters for ESR spectra, PL time traces and rate models."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, stats

from .bath import BathParams, ChargeEnsemble, LatticeSpec
from .spectrum import (DEFAULT_CONTRAST, BroadeningSpec, Spectrum, default_grid,
                       ensemble_profile, to_pl)
from .spin import HamiltonianParams

MIN_TRACE_SAMPLES = 5
N_UNCERTAINTY_REFITS = 15


class FitError(ValueError):
    pass


@dataclass
class FitResult:
    params: dict
    uncertainties: dict
    rss: float
    iterations: int
    converged: bool
    diagnostics: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.params[key]

    def report(self):
        """Human-readable ``key: value`` block."""
        lines = []
        for k, v in self.params.items():
            u = self.uncertainties.get(k)
            lines.append(f"{k}: {_fmt(v)}" + (f" +/- {_fmt(u)}" if u is not None else ""))
        lines += [f"rss: {_fmt(self.rss)}", f"iterations: {self.iterations}",
                  f"converged: {str(self.converged).lower()}"]
        lines += [f"diagnostic: {d}" for d in self.diagnostics]
        return "\n".join(lines) + "\n"

    def record(self):
        """Single-line JSON record."""
        return json.dumps({
            "params": {k: _json_float(v) for k, v in self.params.items()},
            "uncertainties": {k: _json_float(v) for k, v in self.uncertainties.items()},
            "rss": _json_float(self.rss),
            "iterations": self.iterations,
            "converged": self.converged,
            "diagnostics": self.diagnostics,
        }, sort_keys=True)


def _fmt(v):
    return "inf" if v is not None and math.isinf(v) else f"{v:.10g}"


def _json_float(v):
    v = float(v)
    return v if math.isfinite(v) else str(v)


# --------------------------------------------------------------------------
# time traces
# --------------------------------------------------------------------------

@dataclass
class TimeTrace:
    times: np.ndarray  # us
    signal: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.signal = np.asarray(self.signal, dtype=float)
        if self.times.shape != self.signal.shape or self.times.ndim != 1:
            raise FitError("times and signal must be 1-d arrays of equal length")
        if len(self.times) < MIN_TRACE_SAMPLES:
            raise FitError(f"a trace needs at least {MIN_TRACE_SAMPLES} samples")
        if np.any(np.diff(self.times) <= 0):
            raise FitError("trace times must be strictly ascending")


def noise_from_second_differences(y):
    """Robust white-noise sigma from the MAD of second differences."""
    d2 = np.diff(y, n=2)
    if len(d2) == 0:
        return 0.0
    return 1.4826 * float(np.median(np.abs(d2 - np.median(d2)))) / math.sqrt(6.0)


def _linear_coeffs(t, z, k):
    basis = np.column_stack([np.ones_like(t), np.exp(-k * t)])
    coef, *_ = np.linalg.lstsq(basis, z, rcond=None)
    r = z - basis @ coef
    return coef, float(r @ r)


def _fit_exponential(t, y, n_grid=240):
    """Fit y = c0 + c1 exp(-k t); returns (c0, c1, k, cov, rss, nfev, diagnostics)."""
    diagnostics = []
    scale = float(np.std(y))
    if scale == 0.0:
        return float(y[0]), 0.0, math.nan, None, 0.0, 0, ["flat trace: amplitude is zero, rate unidentifiable"]
    shift = float(np.mean(y))
    z = (y - shift) / scale

    span = t[-1] - t[0]
    dt = float(np.min(np.diff(t)))
    k_grid = np.geomspace(0.05 / span, 20.0 / dt, n_grid)
    coarse = np.array([_linear_coeffs(t, z, k)[1] for k in k_grid])
    k0 = k_grid[int(np.argmin(coarse))]

    def objective(v):
        return _linear_coeffs(t, z, math.exp(v[0]))[1]

    step = math.log(k_grid[1] / k_grid[0])
    res = optimize.minimize(objective, [math.log(k0)], method="Nelder-Mead",
                            # 1-d search in log k: stop on the step size alone
                            options={"xatol": 1e-10, "fatol": math.inf, "maxiter": 2000,
                                     "initial_simplex": [[math.log(k0)], [math.log(k0) + step]]})
    k = math.exp(res.x[0])
    (a0, a1), rss_z = _linear_coeffs(t, z, k)
    c0, c1 = shift + scale * a0, scale * a1
    rss = rss_z * scale * scale
    if not res.success:
        diagnostics.append(f"simplex did not converge: {res.message}")

    # covariance of (c0, c1, k) from the Gauss-Newton Jacobian
    e = np.exp(-k * t)
    jac = np.column_stack([np.ones_like(t), e, -c1 * t * e])
    dof = len(t) - 3
    cov = None
    if dof > 0:
        sigma2 = rss / dof
        try:
            cov = sigma2 * np.linalg.inv(jac.T @ jac)
        except np.linalg.LinAlgError:
            diagnostics.append("singular Jacobian: uncertainties unavailable")
    return c0, c1, k, cov, rss, int(res.nfev + n_grid), diagnostics


def _trace_checks(y, c0, c1, k, t, cov, diagnostics):
    noise = noise_from_second_differences(y)
    resid = y - (c0 + c1 * np.exp(-k * t))
    rms = float(np.sqrt(np.mean(resid ** 2)))
    amp_floor = max(3.0 * noise, 1e-9 * max(abs(c0), 1e-300))
    span = t[-1] - t[0]
    dt = float(np.min(np.diff(t)))
    ok = True
    if abs(c1) <= amp_floor or (cov is not None and abs(c1) <= 3.0 * _sd(cov, 1)):
        diagnostics.append("amplitude indistinguishable from zero: rate unidentifiable")
        ok = False
    elif k * span < 0.1 or k * dt > 10.0:
        diagnostics.append(
            f"time constant {1.0 / k:.3g} is outside the window resolved by the sampling "
            f"({dt:.3g} to {span:.3g}): rate unidentifiable")
        ok = False
    elif rms > 2.0 * noise + 1e-9 * abs(c1):
        diagnostics.append(
            f"residual rms {rms:.3g} exceeds 2x the noise estimate {noise:.3g}: "
            "trace is not a single monotonic exponential")
        ok = False
    return ok, noise


def _sd(cov, i):
    if cov is None:
        return math.inf
    return float(math.sqrt(max(cov[i, i], 0.0)))


def fit_exponential_rise(trace):
    """Fit ``S(t) = S_ss - dS exp(-R_p t)``; ``R_p`` in inverse trace time units."""
    t, y = trace.times, trace.signal
    c0, c1, k, cov, rss, nfev, diag = _fit_exponential(t, y)
    if math.isnan(k):
        return FitResult({"steady_state": c0, "amplitude": 0.0, "rate": math.nan},
                         {"steady_state": 0.0, "amplitude": 0.0, "rate": math.inf},
                         rss, nfev, False, diag)
    ok, _ = _trace_checks(y, c0, c1, k, t, cov, diag)
    if ok and -c1 < 0:
        diag.append("signal decreases: trace is not rising")
        ok = False
    return FitResult({"steady_state": c0, "amplitude": -c1, "rate": k},
                     {"steady_state": _sd(cov, 0), "amplitude": _sd(cov, 1), "rate": _sd(cov, 2)},
                     rss, nfev, ok and not diag, diag)


def fit_exponential_decay(trace):
    """Fit ``S(tau) = S_inf + dS exp(-tau / T1)``; ``T1`` in trace time units."""
    t, y = trace.times, trace.signal
    c0, c1, k, cov, rss, nfev, diag = _fit_exponential(t, y)
    if math.isnan(k):
        return FitResult({"offset": c0, "amplitude": 0.0, "T1": math.nan},
                         {"offset": 0.0, "amplitude": 0.0, "T1": math.inf},
                         rss, nfev, False, diag)
    ok, _ = _trace_checks(y, c0, c1, k, t, cov, diag)
    return FitResult({"offset": c0, "amplitude": c1, "T1": 1.0 / k},
                     {"offset": _sd(cov, 0), "amplitude": _sd(cov, 1), "T1": _sd(cov, 2) / k ** 2},
                     rss, nfev, ok and not diag, diag)


# --------------------------------------------------------------------------
# linear slope and the two-channel relaxation model
# --------------------------------------------------------------------------

def fit_linear_slope(points):
    """Ordinary least squares ``rate = slope * power + intercept``.

    ``extra["residuals"]`` and ``extra["studentized"]`` help spot outliers;
    ``extra["worst_point"]`` is the index with the largest |studentized residual|.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise FitError("points must be a sequence of (power, rate) pairs")
    x, y = pts[:, 0], pts[:, 1]
    if len(x) < 2:
        raise FitError("a slope needs at least two points")
    if np.ptp(x) == 0:
        raise FitError("all powers are identical: slope undefined")
    reg = stats.linregress(x, y)
    resid = y - (reg.slope * x + reg.intercept)
    diag = []
    if len(x) == 2:
        se_slope = se_icept = math.inf
        diag.append("two points: no residual degrees of freedom, uncertainties unbounded")
        student = np.zeros(2)
    else:
        se_slope, se_icept = float(reg.stderr), float(reg.intercept_stderr)
        s = math.sqrt(float(resid @ resid) / (len(x) - 2))
        lev = 1.0 / len(x) + (x - x.mean()) ** 2 / ((x - x.mean()) ** 2).sum()
        with np.errstate(divide="ignore", invalid="ignore"):
            student = np.where(s > 0, resid / (s * np.sqrt(np.clip(1.0 - lev, 1e-300, None))), 0.0)
    return FitResult({"slope": float(reg.slope), "intercept": float(reg.intercept)},
                     {"slope": se_slope, "intercept": se_icept},
                     float(resid @ resid), 1, True, diag,
                     {"residuals": resid, "studentized": student,
                      "worst_point": int(np.argmax(np.abs(student)))})


def t1_two_channel(t1_total, t1_phonon, rtol=1e-9):
    """Noise-limited T1 from ``1/T1 = 1/T1_phonon + 1/T1_noise``.

    Returns ``math.inf`` when the phonon channel alone explains ``t1_total``.
    """
    if not (t1_total > 0 and t1_phonon > 0):
        raise FitError("relaxation times must be positive")
    if math.isinf(t1_phonon):
        return float(t1_total)
    if t1_total > t1_phonon * (1 + rtol):
        raise FitError(
            f"T1={t1_total} exceeds the phonon-limited T1={t1_phonon}: negative noise rate")
    rate = 1.0 / t1_total - 1.0 / t1_phonon
    if rate <= (rtol / t1_phonon):
        return math.inf
    return 1.0 / rate


# --------------------------------------------------------------------------
# ESR spectra: (rho_c, contrast) with common random numbers
# --------------------------------------------------------------------------

class EsrModel:
    """Simulated ESR spectrum as a function of (rho_c, contrast) for a fixed seed.

    Draws are frozen per seed (common random numbers), so the model is a
    deterministic function of its arguments. ``rho_c`` is volumetric
    (nm^-3); for the monolayer geometry it is converted to the areal density
    of one layer before sampling.
    """

    def __init__(self, bath=BathParams(), params=HamiltonianParams(),
                 broadening=BroadeningSpec(), n_configs=10_000, grid=None,
                 rho_max=0.2, lattice=LatticeSpec()):
        self.bath = bath
        self.params = params
        self.broadening = broadening
        self.n_configs = int(n_configs)
        self.grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
        self.rho_max = float(rho_max)
        self.lattice = lattice
        self._ensembles = {}
        self._profiles = {}

    def _bath_rho(self, rho_c):
        if self.bath.geometry == "monolayer":
            return rho_c * self.lattice.interlayer_spacing
        return rho_c

    def ensemble(self, seed):
        seed = int(seed)
        if seed not in self._ensembles:
            bath = replace(self.bath, seed=seed, rho_c=self._bath_rho(self.rho_max))
            self._ensembles[seed] = ChargeEnsemble(bath, self.n_configs, lattice=self.lattice)
        return self._ensembles[seed]

    def profile(self, rho_c, seed=None):
        seed = self.bath.seed if seed is None else int(seed)
        rho_c = float(min(max(rho_c, 0.0), self.rho_max))
        key = (seed, rho_c)
        if key not in self._profiles:
            ens = self.ensemble(seed)
            prof, _ = ensemble_profile(ens, self.params, self.broadening, self.grid,
                                       self._bath_rho(rho_c))
            peak = prof.max()
            self._profiles[key] = prof / peak if peak > 0 else prof
        return self._profiles[key]

    def __call__(self, rho_c, contrast=DEFAULT_CONTRAST, seed=None):
        prof = self.profile(rho_c, seed)
        return Spectrum(self.grid, to_pl(prof, contrast),
                        {"rho_c": rho_c, "contrast": contrast,
                         "seed": self.bath.seed if seed is None else seed,
                         "n_configs": self.n_configs})

    def forget(self, seed):
        """Drop cached draws and profiles for ``seed``."""
        self._ensembles.pop(int(seed), None)
        self._profiles = {k: v for k, v in self._profiles.items() if k[0] != int(seed)}


def refit_seeds(seed, n):
    """``n`` independent RNG seeds derived from ``seed``."""
    return [int(s) for s in np.random.SeedSequence(int(seed)).generate_state(n)]


def _best_contrast(depth, prof, lo, hi):
    den = float(prof @ prof)
    c = float(depth @ prof) / den if den > 0 else 0.0
    return min(max(c, lo), hi)


def _fit_esr_single(target, model, seed, bounds, n_coarse, float_baseline, maxiter, xatol):
    (rlo, rhi), (clo, chi) = bounds
    depth = 1.0 - target

    def shape(rho):
        return model.profile(rho, seed)

    def rss_of(rho, c, b=1.0):
        r = target - (b - c * shape(rho))
        return float(r @ r)

    rho_grid = np.linspace(rlo, rhi, n_coarse)
    coarse = []
    for rho in rho_grid:
        c = _best_contrast(depth, shape(rho), clo, chi)
        coarse.append((rss_of(rho, c), rho, c))
    rss0, rho0, c0 = min(coarse)

    rho_scale = max(rhi - rlo, 1e-12)
    c_scale = max(chi - clo, 1e-12)
    history = []

    def unpack(v):
        rho = min(max(rlo + v[0] * rho_scale, rlo), rhi)
        c = min(max(clo + v[1] * c_scale, clo), chi)
        b = 1.0 + v[2] * 0.01 if float_baseline else 1.0
        return rho, c, b

    def objective(v):
        return rss_of(*unpack(v))

    x0 = [(rho0 - rlo) / rho_scale, (c0 - clo) / c_scale] + ([0.0] if float_baseline else [])
    dim = len(x0)
    steps = [0.5 / (n_coarse - 1), 0.1 * max(c0, 0.01) / c_scale, 0.1][:dim]
    simplex = [list(x0)]
    for i in range(dim):
        v = list(x0)
        v[i] += steps[i] if v[i] + steps[i] <= 1.0 or i == 2 else -steps[i]
        simplex.append(v)

    def record(intermediate_result):
        history.append(float(intermediate_result.fun))

    res = optimize.minimize(objective, x0, method="Nelder-Mead", callback=record,
                            options={"initial_simplex": np.array(simplex), "xatol": xatol,
                                     "fatol": 1e-6 * max(rss0, 1e-30), "maxiter": maxiter})
    rho, c, b = unpack(res.x)
    return rho, c, b, float(res.fun), int(res.nit), bool(res.success), res.message, history, coarse


def fit_esr(measured, model, bounds=((0.0, 0.15), (0.0, 1.0)), seed=0,
            n_refits=N_UNCERTAINTY_REFITS, n_coarse=9, float_baseline=False, maxiter=400,
            xatol=1e-3):
    """Fit (rho_c, contrast) of an :class:`EsrModel` to a measured spectrum.

    A coarse scan over ``rho_c`` (contrast solved linearly at each point)
    seeds a Nelder-Mead simplex. The fit is repeated with ``n_refits``
    independent seeds derived from ``seed``; the reported values are the
    refit means and the uncertainties their standard deviations.
    """
    if bounds[0][1] > model.rho_max:
        raise FitError(f"rho_c upper bound {bounds[0][1]} exceeds model.rho_max={model.rho_max}")
    lo, hi = measured.frequencies[0], measured.frequencies[-1]
    if model.grid[-1] < lo or model.grid[0] > hi:
        raise FitError("measured and model frequency grids do not overlap")
    target = measured.resample(model.grid).values if not np.array_equal(
        measured.frequencies, model.grid) else measured.values

    diagnostics = []
    noise = 1.4826 * float(np.median(np.abs(np.diff(target)))) / math.sqrt(2.0)
    flat_input = float((1.0 - target).max()) <= max(3.0 * noise, 1e-12)

    seeds = refit_seeds(seed, max(n_refits, 1))
    fits = [_fit_esr_single(target, model, s, bounds, n_coarse, float_baseline, maxiter, xatol)
            for s in seeds]
    rhos = np.array([f[0] for f in fits])
    cs = np.array([f[1] for f in fits])
    bs = np.array([f[2] for f in fits])
    first = fits[0]
    converged = all(f[5] for f in fits)
    for s, f in zip(seeds, fits):
        if not f[5]:
            diagnostics.append(f"seed {s}: {f[6]}")

    # flat residual: rho_c has no leverage on the objective
    coarse_rss = np.array([row[0] for row in first[8]])
    spread = float(np.ptp(coarse_rss))
    if flat_input or spread <= 1e-9 * max(float(coarse_rss.max()), 1e-300):
        converged = False
        diagnostics.append("flat residual: the spectrum has no resolvable dip, rho_c unidentifiable")

    params = {"rho_c": float(rhos.mean()), "contrast": float(cs.mean())}
    if len(fits) > 1:
        unc = {"rho_c": float(rhos.std(ddof=1)), "contrast": float(cs.std(ddof=1))}
    else:
        unc = {"rho_c": math.inf, "contrast": math.inf}
    if float_baseline:
        params["baseline"] = float(bs.mean())
        unc["baseline"] = float(bs.std(ddof=1)) if len(fits) > 1 else math.inf
    best = model(params["rho_c"], params["contrast"], seeds[0])
    if float_baseline:
        best.values = best.values + (params["baseline"] - 1.0)
        best.metadata["baseline"] = params["baseline"]
    return FitResult(params, unc, first[3], first[4], converged, diagnostics,
                     {"seeds": seeds, "rho_c_refits": rhos, "contrast_refits": cs,
                      "history": first[7], "best_fit": best})
