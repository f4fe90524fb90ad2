"""Ground-state spin Hamiltonian of the boron-vacancy centre.

Electron spin S=1 in the {|+1>, |0>, |-1>} basis, optionally coupled to the
three nearest-neighbour 14N nuclei (I=1) through the secular term
A_zz * Sz * Iz. Energies are in MHz, electric fields in V/cm and the Stark
susceptibilities in Hz/(V/cm).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

HZ_TO_MHZ = 1e-6
DEGENERACY_TOL = 1e-6
HERMITIAN_TOL = 1e-9

# basis order |+1>, |0>, |-1>
_R2 = 1.0 / np.sqrt(2.0)
SX = _R2 * np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex)
SY = _R2 * np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex)
SZ = np.diag([1.0, 0.0, -1.0]).astype(complex)
I3 = np.eye(3, dtype=complex)
MS0 = 1  # index of |m_s = 0>

DRIVES = ("sx", "uniform")


class NonHermitianError(ValueError):
    pass


@dataclass(frozen=True)
class HamiltonianParams:
    """Spin-Hamiltonian constants.

    ``drive`` selects the transition weights: ``"sx"`` uses |<f|Sx|i>|^2,
    ``"uniform"`` averages Sx and Sy drives, which gives every allowed
    transition out of |0> the same weight for this Hamiltonian.
    """

    D: float = 3460.0
    d_perp: float = 21.0
    d_par: float = 0.0
    A_zz: float = 47.0
    n_nuclei: int = 3
    drive: str = "sx"

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError(f"D must be positive, got {self.D}")
        if self.n_nuclei not in (0, 3):
            raise ValueError(f"n_nuclei must be 0 or 3, got {self.n_nuclei}")
        if not np.isreal(self.A_zz):
            raise ValueError("A_zz must be real")
        if self.drive not in DRIVES:
            raise ValueError(f"drive must be one of {DRIVES}, got {self.drive!r}")

    @property
    def d_perp_mhz(self):
        return self.d_perp * HZ_TO_MHZ

    @property
    def d_par_mhz(self):
        return self.d_par * HZ_TO_MHZ


@dataclass(frozen=True)
class ElectricField:
    ex: float = 0.0
    ey: float = 0.0
    ez: float = 0.0

    @property
    def transverse(self):
        return float(np.hypot(self.ex, self.ey))

    def as_array(self):
        return np.array([self.ex, self.ey, self.ez])

    @classmethod
    def from_array(cls, v):
        return cls(float(v[0]), float(v[1]), float(v[2]))


@dataclass
class TransitionSet:
    frequencies: np.ndarray
    weights: np.ndarray
    m_eff: np.ndarray
    multiplicity: np.ndarray
    degenerate: bool = False
    notes: list = field(default_factory=list)

    def __len__(self):
        return len(self.frequencies)

    def merged(self, tol=1e-6, min_weight=1e-12):
        """Lines sorted by frequency with coincident ones (within ``tol`` MHz) summed."""
        order = np.argsort(self.frequencies, kind="stable")
        f = self.frequencies[order]
        w = self.weights[order]
        keep = w > min_weight
        f, w = f[keep], w[keep]
        out_f, out_w = [], []
        for fi, wi in zip(f, w):
            if out_f and fi - out_f[-1][-1] <= tol:
                out_f[-1].append(fi)
                out_w[-1] += wi
            else:
                out_f.append([fi])
                out_w.append(wi)
        freqs = np.array([np.mean(group) for group in out_f])
        return freqs, np.array(out_w)


@lru_cache(maxsize=None)
def hyperfine_blocks(n_nuclei):
    """Total nuclear projections and their multiplicities for ``n_nuclei`` I=1 spins."""
    if n_nuclei == 0:
        return (0,), (1,)
    counts = {}
    for combo in itertools.product((-1, 0, 1), repeat=n_nuclei):
        m = sum(combo)
        counts[m] = counts.get(m, 0) + 1
    ms = tuple(sorted(counts))
    return ms, tuple(counts[m] for m in ms)


def electron_block_hamiltonian(efield, params, m_eff=0):
    """3x3 electron Hamiltonian of the hyperfine block with nuclear projection ``m_eff``."""
    if not -3 <= m_eff <= 3:
        raise ValueError(f"m_eff must lie in [-3, 3], got {m_eff}")
    dp = params.d_perp_mhz
    sx2, sy2, sz2 = SX @ SX, SY @ SY, SZ @ SZ
    h = (params.D * sz2
         + dp * (efield.ex * (sy2 - sx2) + efield.ey * (SX @ SY + SY @ SX))
         + params.d_par_mhz * efield.ez * sz2
         + params.A_zz * m_eff * SZ)
    # exact Hermitian symmetrisation; the products above are already Hermitian
    # up to rounding
    return 0.5 * (h + h.conj().T)


def diagonalize_hermitian(h, tol=HERMITIAN_TOL):
    """Eigenvalues (ascending) and orthonormal eigenvectors (columns) of ``h``."""
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    scale = np.linalg.norm(h)
    asym = np.linalg.norm(h - h.conj().T)
    if asym > tol * max(scale, np.finfo(float).tiny):
        raise NonHermitianError(
            f"matrix is not Hermitian: |H - H^dagger| = {asym:.3e} vs |H| = {scale:.3e}")
    return np.linalg.eigh(0.5 * (h + h.conj().T))


def _drive_weight(bra, ket, sx, sy, drive):
    wx = abs(np.vdot(bra, sx @ ket)) ** 2
    if drive == "sx":
        return wx
    wy = abs(np.vdot(bra, sy @ ket)) ** 2
    return 0.5 * (wx + wy)


def block_transitions(efield, params):
    """ESR lines of one defect: 7 hyperfine blocks (or one without nuclei), weights sum to 1."""
    ms, mults = hyperfine_blocks(params.n_nuclei)
    freqs, weights, m_out, mult_out = [], [], [], []
    degenerate = False
    notes = []
    for m, mult in zip(ms, mults):
        vals, vecs = diagonalize_hermitian(electron_block_hamiltonian(efield, params, m))
        overlap = np.abs(vecs[MS0, :]) ** 2
        ranked = np.argsort(-overlap, kind="stable")
        if overlap[ranked[0]] - overlap[ranked[1]] < DEGENERACY_TOL:
            # tie: lowest-energy candidate wins; eigh returns ascending energies
            tied = [k for k in range(3) if overlap[ranked[0]] - overlap[k] < DEGENERACY_TOL]
            i0 = min(tied)
            degenerate = True
            notes.append(f"block m={m}: no eigenstate with dominant |0> character")
        else:
            i0 = int(ranked[0])
        for f in range(3):
            if f == i0:
                continue
            freqs.append(vals[f] - vals[i0])
            weights.append(mult * _drive_weight(vecs[:, f], vecs[:, i0], SX, SY, params.drive))
            m_out.append(m)
            mult_out.append(mult)
    weights = np.array(weights)
    total = weights.sum()
    if total > 0:
        weights = weights / total
    return TransitionSet(np.array(freqs), weights, np.array(m_out), np.array(mult_out),
                         degenerate, notes)


def _nuclear_iz(n_nuclei):
    iz = np.diag([1.0, 0.0, -1.0])
    ops = []
    for k in range(n_nuclei):
        mats = [np.eye(3)] * n_nuclei
        mats[k] = iz
        op = mats[0]
        for m in mats[1:]:
            op = np.kron(op, m)
        ops.append(op)
    return ops


def full_hilbert_transitions(efield, params, ms0_threshold=0.5):
    """Brute-force reference: diagonalise the full electron x nuclei Hamiltonian.

    Slow (81x81 for three nuclei); intended as an oracle for
    :func:`block_transitions`.
    """
    n = params.n_nuclei
    dim_n = 3 ** n
    h_e = electron_block_hamiltonian(efield, params, 0)
    h = np.kron(h_e, np.eye(dim_n))
    for iz in _nuclear_iz(n):
        h = h + params.A_zz * np.kron(SZ, iz)
    vals, vecs = diagonalize_hermitian(h)

    p0 = np.kron(np.diag([0.0, 1.0, 0.0]), np.eye(dim_n))
    ms0_char = np.real(np.einsum("ij,ik,kj->j", vecs.conj(), p0, vecs))
    initial = np.flatnonzero(ms0_char > ms0_threshold)
    final = np.flatnonzero(ms0_char <= ms0_threshold)

    sx = np.kron(SX, np.eye(dim_n))
    sy = np.kron(SY, np.eye(dim_n))
    mx = vecs[:, final].conj().T @ sx @ vecs[:, initial]
    w = np.abs(mx) ** 2
    if params.drive == "uniform":
        my = vecs[:, final].conj().T @ sy @ vecs[:, initial]
        w = 0.5 * (w + np.abs(my) ** 2)
    df = vals[final][:, None] - vals[initial][None, :]
    freqs = df.ravel()
    weights = w.ravel()
    keep = weights > 1e-14
    weights = weights[keep]
    total = weights.sum()
    if total > 0:
        weights = weights / total
    # block labels are not defined for mixed eigenstates
    unknown = np.full(int(keep.sum()), -1)
    return TransitionSet(freqs[keep], weights, unknown, unknown)
