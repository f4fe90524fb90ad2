"""Inner loops of the Monte-Carlo ESR ensemble.

Every kernel exists twice: a numba-compiled loop and a vectorised numpy
equivalent. The public wrappers dispatch on :func:`vbspin._backend.active_backend`.
Both paths consume identical inputs (all random draws happen upstream), so
they agree to floating-point summation order.
"""

import numpy as np

from ._backend import active_backend, njit

LORENTZIAN = 0
GAUSSIAN = 1

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))

_CHUNK = 2048


# --------------------------------------------------------------------------
# net Coulomb field of nested +/- charge pools
# --------------------------------------------------------------------------

@njit(cache=True)
def _pool_fields_numba(unit_field, pool, counts, scale):
    n = pool.shape[0]
    out = np.zeros((n, 3))
    for j in range(n):
        fx = 0.0
        fy = 0.0
        fz = 0.0
        for i in range(counts[j]):
            p = pool[j, 2 * i]
            q = pool[j, 2 * i + 1]
            fx += unit_field[p, 0] - unit_field[q, 0]
            fy += unit_field[p, 1] - unit_field[q, 1]
            fz += unit_field[p, 2] - unit_field[q, 2]
        out[j, 0] = fx * scale
        out[j, 1] = fy * scale
        out[j, 2] = fz * scale
    return out


def _pool_fields_numpy(unit_field, pool, counts, scale):
    n = pool.shape[0]
    out = np.zeros((n, 3))
    kmax = int(counts.max()) if n else 0
    if kmax == 0:
        return out
    step = max(1, _CHUNK * 64 // kmax)
    slots = np.arange(kmax)
    for start in range(0, n, step):
        stop = min(n, start + step)
        mask = slots[None, :] < counts[start:stop, None]
        pos = pool[start:stop, 0:2 * kmax:2]
        neg = pool[start:stop, 1:2 * kmax:2]
        contrib = unit_field[np.where(mask, pos, 0)] - unit_field[np.where(mask, neg, 0)]
        contrib[~mask] = 0.0
        out[start:stop] = contrib.sum(axis=1) * scale
    return out


def pool_fields(unit_field, pool, counts, scale):
    """Net field of ``counts[j]`` (+, -) pairs taken from the front of each pool row.

    ``pool[j, 2i]`` holds positive charges, ``pool[j, 2i + 1]`` negative ones;
    ``unit_field`` is the per-site field of a unit positive charge.
    """
    unit_field = np.ascontiguousarray(unit_field, dtype=np.float64)
    pool = np.ascontiguousarray(pool, dtype=np.int64)
    counts = np.ascontiguousarray(counts, dtype=np.int64)
    if pool.shape[0] and counts.max(initial=0) * 2 > pool.shape[1]:
        raise ValueError("pool rows are shorter than the requested charge counts")
    if active_backend() == "numba":
        return _pool_fields_numba(unit_field, pool, counts, float(scale))
    return _pool_fields_numpy(unit_field, pool, counts, float(scale))


# --------------------------------------------------------------------------
# closed-form transition lines of the S=1 hyperfine blocks
# --------------------------------------------------------------------------
# In every block |m_s=0> is an exact eigenstate with energy 0 and the
# {|+1>, |-1>} pair forms the 2x2 block [[D'+a, g], [g*, D'-a]] with
# a = A_zz m, g = -d_perp (ex + i ey), D' = D + d_par ez.

@njit(cache=True)
def _block_lines_numba(fields, D, d_perp, d_par, a_zz, m_eff, weight_norm, x_drive):
    n = fields.shape[0]
    nb = m_eff.shape[0]
    freqs = np.empty((n, 2 * nb))
    weights = np.empty((n, 2 * nb))
    for j in range(n):
        ex = fields[j, 0]
        ey = fields[j, 1]
        dc = D + d_par * fields[j, 2]
        g2 = d_perp * d_perp * (ex * ex + ey * ey)
        re_g = -d_perp * ex
        for b in range(nb):
            a = a_zz * m_eff[b]
            r = np.sqrt(a * a + g2)
            if x_drive and r > 0.0:
                c = re_g / r
            else:
                c = 0.0
            freqs[j, 2 * b] = dc - r
            freqs[j, 2 * b + 1] = dc + r
            weights[j, 2 * b] = weight_norm[b] * 0.5 * (1.0 - c)
            weights[j, 2 * b + 1] = weight_norm[b] * 0.5 * (1.0 + c)
    return freqs, weights


def _block_lines_numpy(fields, D, d_perp, d_par, a_zz, m_eff, weight_norm, x_drive):
    ex, ey, ez = fields[:, 0:1], fields[:, 1:2], fields[:, 2:3]
    dc = D + d_par * ez
    g2 = d_perp * d_perp * (ex * ex + ey * ey)
    a = a_zz * m_eff[None, :]
    r = np.sqrt(a * a + g2)
    if x_drive:
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where(r > 0.0, -d_perp * ex / r, 0.0)
    else:
        c = np.zeros_like(r)
    n, nb = r.shape
    freqs = np.empty((n, 2 * nb))
    weights = np.empty((n, 2 * nb))
    freqs[:, 0::2] = dc - r
    freqs[:, 1::2] = dc + r
    weights[:, 0::2] = weight_norm * 0.5 * (1.0 - c)
    weights[:, 1::2] = weight_norm * 0.5 * (1.0 + c)
    return freqs, weights


def block_lines(fields, D, d_perp, d_par, a_zz, m_eff, weight_norm, x_drive=True):
    """Transition frequencies and weights for a batch of fields.

    ``fields`` is (n, 3) in V/cm, ``d_perp``/``d_par`` in MHz per V/cm.
    Returns two (n, 2 * len(m_eff)) arrays, lines ordered (lower, upper)
    per block.
    """
    fields = np.ascontiguousarray(fields, dtype=np.float64).reshape(-1, 3)
    m_eff = np.ascontiguousarray(m_eff, dtype=np.float64)
    weight_norm = np.ascontiguousarray(weight_norm, dtype=np.float64)
    args = (fields, float(D), float(d_perp), float(d_par), float(a_zz), m_eff,
            weight_norm, bool(x_drive))
    if active_backend() == "numba":
        return _block_lines_numba(*args)
    return _block_lines_numpy(*args)


# --------------------------------------------------------------------------
# analytic line-shape accumulation on a frequency grid
# --------------------------------------------------------------------------

@njit(cache=True)
def _accumulate_numba(freqs, weights, grid, fwhm, kind):
    out = np.zeros(grid.shape[0])
    flat_f = freqs.ravel()
    flat_w = weights.ravel()
    if kind == 0:
        hw = 0.5 * fwhm
        hw2 = hw * hw
        pref = hw / np.pi
        for i in range(flat_f.shape[0]):
            w = flat_w[i] * pref
            if w == 0.0:
                continue
            f0 = flat_f[i]
            for k in range(grid.shape[0]):
                x = grid[k] - f0
                out[k] += w / (x * x + hw2)
    else:
        sigma = fwhm * (1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0))))
        inv2s2 = 0.5 / (sigma * sigma)
        pref = 1.0 / (sigma * np.sqrt(2.0 * np.pi))
        for i in range(flat_f.shape[0]):
            w = flat_w[i] * pref
            if w == 0.0:
                continue
            f0 = flat_f[i]
            for k in range(grid.shape[0]):
                x = grid[k] - f0
                out[k] += w * np.exp(-x * x * inv2s2)
    return out


def _accumulate_numpy(freqs, weights, grid, fwhm, kind):
    flat_f = freqs.ravel()
    flat_w = weights.ravel()
    out = np.zeros(grid.shape[0])
    if kind == LORENTZIAN:
        hw = 0.5 * fwhm
        for s in range(0, flat_f.size, _CHUNK):
            x = grid[None, :] - flat_f[s:s + _CHUNK, None]
            out += (flat_w[s:s + _CHUNK, None] * (hw / np.pi) / (x * x + hw * hw)).sum(axis=0)
    else:
        sigma = fwhm * FWHM_TO_SIGMA
        pref = 1.0 / (sigma * np.sqrt(2.0 * np.pi))
        for s in range(0, flat_f.size, _CHUNK):
            x = grid[None, :] - flat_f[s:s + _CHUNK, None]
            out += (flat_w[s:s + _CHUNK, None] * pref * np.exp(-0.5 * x * x / sigma**2)).sum(axis=0)
    return out


def accumulate_lines(freqs, weights, grid, fwhm, kind=LORENTZIAN):
    """Sum of unit-area line shapes (``kind``: LORENTZIAN or GAUSSIAN) on ``grid``."""
    freqs = np.ascontiguousarray(freqs, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    if freqs.shape != weights.shape:
        raise ValueError("freqs and weights must have the same shape")
    if active_backend() == "numba":
        return _accumulate_numba(freqs, weights, grid, float(fwhm), int(kind))
    return _accumulate_numpy(freqs, weights, grid, float(fwhm), int(kind))
