"""Time the numba kernels against the numpy fallback on a bulk ensemble.

    python benchmarks/bench_kernels.py --configs 10000 --repeat 3
"""

import argparse
import time
import warnings

import numpy as np

from vbspin import kernels
from vbspin._backend import HAS_NUMBA, set_backend
from vbspin.bath import V_PER_NM_TO_V_PER_CM, BathParams, ChargeEnsemble
from vbspin.spectrum import BroadeningSpec, default_grid, ensemble_lines, ensemble_spectrum
from vbspin.spin import HamiltonianParams


def best_of(fn, repeat):
    fn()  # warm-up, includes numba compilation or cache load
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def flat(result):
    if hasattr(result, "values"):
        return result.values
    parts = result if isinstance(result, tuple) else (result,)
    return np.concatenate([np.ravel(x) for x in parts])


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--configs", type=int, default=10_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--rho", type=float, default=0.054)
    args = ap.parse_args()
    # the 3 fwhm coverage warning is irrelevant for timing
    warnings.simplefilter("ignore", RuntimeWarning)
    if not HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    params = HamiltonianParams()
    bath = BathParams(rho_c=args.rho, seed=1)
    grid = default_grid()
    broad = BroadeningSpec()
    ens = ChargeEnsemble(bath, args.configs)
    fields = ens.fields()
    freqs, weights = ensemble_lines(fields, params)
    counts = ens.counts()
    scale = V_PER_NM_TO_V_PER_CM / bath.epsilon_r

    cases = {
        "pool_fields": lambda: kernels.pool_fields(ens.unit_field, ens.pool, counts, scale),
        "block_lines": lambda: ensemble_lines(fields, params),
        "accumulate_lines": lambda: kernels.accumulate_lines(freqs, weights, grid, broad.fwhm,
                                                             broad.kind),
        "ensemble_spectrum": lambda: ensemble_spectrum(bath, params, broad, args.configs, grid),
    }
    print(f"{args.configs} configurations, rho_c = {args.rho} nm^-3, "
          f"{freqs.size} lines on {grid.size} grid points")
    print(f"{'kernel':<20}{'numpy s':>10}{'numba s':>10}{'speedup':>9}{'max rel diff':>14}")
    for name, fn in cases.items():
        set_backend("numpy")
        t_np = best_of(fn, args.repeat)
        ref = fn()
        set_backend("numba")
        t_nb = best_of(fn, args.repeat)
        out = fn()
        a, b = flat(ref), flat(out)
        diff = float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))
        print(f"{name:<20}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>9.1f}{diff:>14.1e}")


if __name__ == "__main__":
    main()
