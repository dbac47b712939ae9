"""Exact quantum state solver for the electron chain.

For classical phonons the electron problem is quadratic, so "exact
diagonalization" reduces to the L x L single-particle matrix: build the
Hamiltonian for a phonon configuration, diagonalize, fill the Fermi sea,
and read densities, correlations and linear responses off the orbitals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "EigensolverError",
    "GroundState",
    "ResponseProbe",
    "build_hamiltonian",
    "ground_state",
    "density",
    "correlation",
    "cdw_of",
    "gs_energy",
    "response",
    "solve",
]

#: eigenvalue gaps below this are treated as exact degeneracies
DEGENERACY_TOL = 1e-12


class EigensolverError(RuntimeError):
    """Eigensolver failed to converge; message carries matrix diagnostics."""


def build_hamiltonian(Q: np.ndarray, g: float) -> np.ndarray:
    """Single-particle matrix: H[i][i] = -g*Q_i, H[i][(i+-1) mod L] = -1.

    The scalar +g*Q_i/2 shift from the coupling is dropped here; it only
    offsets the total energy and is restored in :func:`gs_energy`.
    """
    Q = np.asarray(Q, dtype=float)
    L = len(Q)
    H = np.zeros((L, L))
    idx = np.arange(L)
    H[idx, (idx + 1) % L] = -1.0
    H[idx, (idx - 1) % L] = -1.0
    H[idx, idx] = -g * Q
    return H


@dataclass(frozen=True)
class GroundState:
    """Filled Fermi sea of one Hamiltonian.

    Carries the full spectrum so degenerate Fermi shells can be occupied
    fractionally. ``weights`` holds the occupation of every eigenvector:
    1 below the shell, the uniform fraction inside a degenerate shell, 0
    above. Summing |orbital|^2 against ``weights`` conserves the electron
    count exactly and keeps the density basis-independent (it is the
    diagonal of a projector), hence translation-covariant even at Q = 0.
    """

    evals: np.ndarray
    evecs: np.ndarray
    filling: int
    weights: np.ndarray
    gap: float
    degenerate_fermi: bool

    @property
    def orbitals(self) -> np.ndarray:
        """Occupied eigenvectors, columns orthonormal, ascending eigenvalue."""
        return self.evecs[:, : self.filling]

    @property
    def energies(self) -> np.ndarray:
        return self.evals[: self.filling]

    @property
    def L(self) -> int:
        return len(self.evals)


def ground_state(H: np.ndarray, filling: int) -> GroundState:
    L = len(H)
    if not 0 < filling < L:
        raise ValueError(f"filling must lie in (0, {L}), got {filling}")
    try:
        evals, evecs = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        d = np.abs(np.diag(H))
        raise EigensolverError(
            f"eigh failed for L={L}: {exc}; max|diag|={d.max():.3e}, "
            f"finite={np.all(np.isfinite(H))}"
        ) from exc

    gap = float(evals[filling] - evals[filling - 1])
    degenerate = gap < DEGENERACY_TOL

    weights = np.zeros(L)
    weights[:filling] = 1.0
    if degenerate:
        # Chain outward over sub-tolerance gaps so multiplets wider than a
        # single pair stay together.
        lo = filling - 1
        while lo > 0 and evals[lo] - evals[lo - 1] < DEGENERACY_TOL:
            lo -= 1
        hi = filling
        while hi < L - 1 and evals[hi + 1] - evals[hi] < DEGENERACY_TOL:
            hi += 1
        shell = slice(lo, hi + 1)
        weights[shell] = (filling - lo) / (hi + 1 - lo)

    return GroundState(
        evals=evals,
        evecs=evecs,
        filling=filling,
        weights=weights,
        gap=gap,
        degenerate_fermi=degenerate,
    )


def density(gs: GroundState) -> np.ndarray:
    """n_i = sum_m w_m |evec(i, m)|^2; sums to filling exactly."""
    if gs.degenerate_fermi:
        return (gs.evecs**2 * gs.weights).sum(axis=1)
    occ = gs.orbitals
    return (occ * occ).sum(axis=1)


def correlation(gs: GroundState, i: int, j: int) -> float:
    """<c_i^dag c_j> = sum_m w_m evec(i,m) evec(j,m); real by symmetry."""
    if gs.degenerate_fermi:
        return float((gs.evecs[i] * gs.evecs[j] * gs.weights).sum())
    return float(gs.evecs[i, : gs.filling] @ gs.evecs[j, : gs.filling])


def cdw_of(n: np.ndarray) -> float:
    """Staggered sum sum_i (-1)^i n_i."""
    n = np.asarray(n, dtype=float)
    signs = np.where(np.arange(len(n)) % 2 == 0, 1.0, -1.0)
    return float(signs @ n)


def gs_energy(gs: GroundState, Q: np.ndarray, g: float) -> float:
    """Sum of occupied eigenvalues plus the dropped constant (g/2) sum Q_i."""
    return float(gs.weights @ gs.evals) + 0.5 * g * float(np.sum(Q))


def solve(Q: np.ndarray, g: float, filling: int) -> GroundState:
    """Convenience: build the Hamiltonian and fill the Fermi sea."""
    return ground_state(build_hamiltonian(Q, g), filling)


@dataclass(frozen=True)
class ResponseProbe:
    """Central-difference response with a degenerate-Fermi flag."""

    value: float
    degenerate: bool


def response(
    Q: np.ndarray,
    g: float,
    site: int,
    h: float = 1e-4,
    filling: int | None = None,
) -> ResponseProbe:
    """dn_site/dQ_site by central differences, fresh solve on each side.

    The default h = 1e-4 balances O(h^2) truncation against eigensolver
    noise at the 1e-10 orthonormality level. A degenerate Fermi level at
    either displaced configuration is flagged, not raised.
    """
    if h <= 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    Q = np.asarray(Q, dtype=float)
    if filling is None:
        filling = len(Q) // 2
    Qp = Q.copy()
    Qp[site] += h
    Qm = Q.copy()
    Qm[site] -= h
    gp = solve(Qp, g, filling)
    gm = solve(Qm, g, filling)
    val = (density(gp)[site] - density(gm)[site]) / (2.0 * h)
    return ResponseProbe(value=float(val), degenerate=gp.degenerate_fermi or gm.degenerate_fermi)
