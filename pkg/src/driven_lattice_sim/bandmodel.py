"""Band-model contract and the one-dimensional dimer chain.

Hamiltonians are returned as complex arrays of shape ``(..., n, n)`` so that a
whole k-grid is evaluated in one call.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from . import units


def hermiticity_error(m):
    """Largest entry of ``|M - M^dagger|`` over the whole stack."""
    m = np.asarray(m)
    return float(np.max(np.abs(m - np.conj(np.swapaxes(m, -1, -2))), initial=0.0))


class BandModel(ABC):
    """Band-space Hamiltonian h(kappa) of a periodic lattice.

    ``bz_embedding`` is the constant unitary V with
    ``H(kappa + 2 pi / a) = V H(kappa) V^dagger``. It is the identity for
    models written in a periodic basis; tight-binding forms that keep the
    intracell positions in the phase factors (like the dimer chain) need a
    nontrivial V. Spectra are always BZ-periodic.
    """

    n_bands: int
    lattice_constant: float

    @abstractmethod
    def hamiltonian(self, kappa):
        ...

    @abstractmethod
    def hamiltonian_derivative(self, kappa):
        ...

    @property
    def bz_embedding(self):
        return np.eye(self.n_bands, dtype=complex)

    @property
    def reciprocal_length(self):
        return 2.0 * np.pi / self.lattice_constant


@dataclass(frozen=True)
class DimerChainParams:
    """Dimer-chain parameters in atomic units.

    Defaults reproduce the GaAs-like chain: a_L = 5.65 A, gap 1.52 eV,
    hopping 1.58 eV.
    """

    a_L: float = units.angstrom_to_au(5.65)
    delta: float = units.ev_to_au(1.52)
    t_H: float = units.ev_to_au(1.58)

    def __post_init__(self):
        if not self.a_L > 0:
            raise ValueError(f"a_L must be positive, got {self.a_L}")
        if not self.t_H > 0:
            raise ValueError(f"t_H must be positive, got {self.t_H}")
        if not self.delta >= 0:
            raise ValueError(f"delta must be non-negative, got {self.delta}")

    @classmethod
    def from_lab_units(cls, a_L_angstrom=5.65, delta_ev=1.52, t_H_ev=1.58):
        return cls(
            a_L=units.angstrom_to_au(a_L_angstrom),
            delta=units.ev_to_au(delta_ev),
            t_H=units.ev_to_au(t_H_ev),
        )


def dimer_hamiltonian(params: DimerChainParams, kappa):
    kappa = np.asarray(kappa, dtype=float)
    off = -2.0 * params.t_H * np.cos(0.5 * params.a_L * kappa)
    h = np.zeros(kappa.shape + (2, 2), dtype=complex)
    h[..., 0, 0] = -0.5 * params.delta
    h[..., 1, 1] = 0.5 * params.delta
    h[..., 0, 1] = off
    h[..., 1, 0] = off
    return h


def dimer_hamiltonian_derivative(params: DimerChainParams, kappa):
    kappa = np.asarray(kappa, dtype=float)
    off = params.t_H * params.a_L * np.sin(0.5 * params.a_L * kappa)
    h = np.zeros(kappa.shape + (2, 2), dtype=complex)
    h[..., 0, 1] = off
    h[..., 1, 0] = off
    return h


class DimerChain(BandModel):
    """Two-band dimer chain H = [[-D/2, -2t cos(a k/2)], [-2t cos(a k/2), D/2]].

    The off-diagonal flips sign under kappa -> kappa + 2 pi / a, so the
    embedding matrix is sigma_z.
    """

    n_bands = 2

    def __init__(self, params: DimerChainParams | None = None):
        self.params = params if params is not None else DimerChainParams()

    @property
    def lattice_constant(self):
        return self.params.a_L

    @property
    def bz_embedding(self):
        return np.diag([1.0, -1.0]).astype(complex)

    def hamiltonian(self, kappa):
        return dimer_hamiltonian(self.params, kappa)

    def hamiltonian_derivative(self, kappa):
        return dimer_hamiltonian_derivative(self.params, kappa)

    def band_energies(self, kappa):
        """Closed-form (valence, conduction) energies."""
        p = self.params
        c = 2.0 * p.t_H * np.cos(0.5 * p.a_L * np.asarray(kappa, dtype=float))
        r = np.sqrt(0.25 * p.delta**2 + c**2)
        return np.stack([-r, r], axis=-1)

    def reduced_mass(self):
        """Band-edge electron-hole reduced mass, m_e units: Delta / (4 t^2 a^2)."""
        p = self.params
        return p.delta / (4.0 * p.t_H**2 * p.a_L**2)


def shifted_wavevector(k, A):
    """K = k + e A / hbar in atomic units; not folded back into the BZ.

    Folding would make H(K(t)) jump by the embedding unitary for models whose
    matrix is not strictly periodic, so callers that want a reduced wavevector
    use :func:`fold_to_bz` explicitly.
    """
    return np.asarray(k, dtype=float) + np.asarray(A, dtype=float)


def fold_to_bz(kappa, a_L):
    g = 2.0 * np.pi / a_L
    return np.mod(kappa, g)
