"""Bloch, Houston and polarized-Houston reference bases.

Snapshots are vectorized over a 1D array of (unshifted) k labels. ``states``
hold the gauge-tracked vectors: for Houston they are the adiabatic states
(parallel transported, i.e. carrying the geometric phase), for polarized
Houston they are ``u^A @ c^P`` with c^P transported in coefficient space.
The dynamical phase is kept separately in ``dyn_phase``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .bandmodel import shifted_wavevector
from .spectral import (
    DEGENERACY_TOL,
    dagger,
    stack_matmul,
    dipole_from_states,
    eigensystem,
    parallel_transport,
    polarized_2x2,
)


class BasisKind(enum.Enum):
    BLOCH = "bloch"
    HOUSTON = "houston"
    POLARIZED = "polarized"

    @classmethod
    def parse(cls, text):
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown basis {text!r}; expected one of bloch, houston, polarized"
            ) from None


@dataclass(frozen=True)
class BasisSnapshot:
    kind: BasisKind
    k: np.ndarray
    t: float
    states: np.ndarray
    energies: np.ndarray
    dyn_phase: np.ndarray
    geo_phase: np.ndarray
    adiabatic: np.ndarray | None = None  # u^A (polarized only)
    coeffs: np.ndarray | None = None  # c^P columns (polarized only)

    def full_states(self):
        """States including the accumulated dynamical phase."""
        return self.states * np.exp(1j * self.dyn_phase)[..., None, :]

    def orthonormality_error(self):
        n = self.states.shape[-1]
        g = dagger(self.states) @ self.states
        return float(np.max(np.abs(g - np.eye(n))))


def _wrap(x):
    return (x + np.pi) % (2.0 * np.pi) - np.pi


def _reference_angle(reference, states):
    return np.angle(np.einsum("...ib,...ib->...b", np.conj(reference), states))


def _advance_geo(geo_old, reference, states):
    theta = _reference_angle(reference, states)
    return geo_old + _wrap(theta - geo_old)


def effective_hamiltonian(states, energies, dh, E):
    """Length-gauge band Hamiltonian in the adiabatic basis ``states``.

    Diagonal: instantaneous band energies. Off-diagonal:
    i e E <u_a|d u_b/dk> = e E d_ab (energy units), with d_ab from
    Hellmann-Feynman so it is expressed in the gauge of ``states``.
    """
    d = dipole_from_states(dh, states, energies)
    E = np.asarray(E, dtype=float)
    heff = np.asarray(E)[..., None, None] * d
    n = energies.shape[-1]
    idx = np.arange(n)
    heff[..., idx, idx] = energies
    return heff


def bloch_snapshot(model, k, degeneracy_tol=DEGENERACY_TOL):
    k = np.asarray(k, dtype=float)
    es = eigensystem(model.hamiltonian(k), degeneracy_tol=degeneracy_tol)
    zeros = np.zeros(es.energies.shape)
    return BasisSnapshot(BasisKind.BLOCH, k, 0.0, es.states, es.energies, zeros, zeros.copy())


def adiabatic_eigensystem(model, k, A, gauge="analytic", degeneracy_tol=DEGENERACY_TOL, check=False):
    K = shifted_wavevector(k, A)
    return eigensystem(model.hamiltonian(K), gauge=gauge, degeneracy_tol=degeneracy_tol, check=check)


def houston_snapshot(model, k, waveform, t):
    """Start a Houston track at time t (phases zero, analytic gauge)."""
    k = np.asarray(k, dtype=float)
    es = adiabatic_eigensystem(model, k, waveform.A(t))
    zeros = np.zeros(es.energies.shape)
    return BasisSnapshot(BasisKind.HOUSTON, k, float(t), es.states, es.energies, zeros, zeros.copy())


def houston_step(snapshot: BasisSnapshot, model, waveform, dt):
    if snapshot.kind is not BasisKind.HOUSTON:
        raise ValueError(f"expected a Houston snapshot, got {snapshot.kind.value}")
    t1 = snapshot.t + dt
    mid = adiabatic_eigensystem(model, snapshot.k, waveform.A(snapshot.t + 0.5 * dt))
    new = adiabatic_eigensystem(model, snapshot.k, waveform.A(t1))
    states, _ = parallel_transport(snapshot.states, new.states)
    geo = _advance_geo(snapshot.geo_phase, new.states, states)
    dyn = snapshot.dyn_phase - mid.energies * dt
    return replace(snapshot, t=t1, states=states, energies=new.energies, dyn_phase=dyn, geo_phase=geo)


def polarized_eigensystem(model, k, A, E, adiabatic_states=None):
    """Eigenpairs of the effective Hamiltonian at wavevector k + A, field E.

    Returns ``(energies, coeffs, adiabatic_states, adiabatic_energies)``;
    the polarized states are ``adiabatic_states @ coeffs``.
    """
    K = shifted_wavevector(k, A)
    ad = eigensystem(model.hamiltonian(K), gauge="analytic", degeneracy_tol=DEGENERACY_TOL, check=False)
    ustates = ad.states if adiabatic_states is None else adiabatic_states
    heff = effective_hamiltonian(ustates, ad.energies, model.hamiltonian_derivative(K), E)
    pe = eigensystem(heff, gauge="analytic", degeneracy_tol=DEGENERACY_TOL, check=False)
    return pe.energies, pe.states, ustates, ad.energies


def polarized_snapshot(model, k, waveform, t):
    k = np.asarray(k, dtype=float)
    energies, coeffs, ustates, _ = polarized_eigensystem(model, k, waveform.A(t), waveform.E(t))
    zeros = np.zeros(energies.shape)
    return BasisSnapshot(
        BasisKind.POLARIZED, k, float(t), ustates @ coeffs, energies, zeros, zeros.copy(),
        adiabatic=ustates, coeffs=coeffs,
    )


def polarized_step(snapshot: BasisSnapshot, model, waveform, dt):
    if snapshot.kind is not BasisKind.POLARIZED:
        raise ValueError(f"expected a polarized snapshot, got {snapshot.kind.value}")
    t1 = snapshot.t + dt
    tm = snapshot.t + 0.5 * dt
    mid_energies = polarized_eigensystem(model, snapshot.k, waveform.A(tm), waveform.E(tm))[0]
    ad = adiabatic_eigensystem(model, snapshot.k, waveform.A(t1))
    ustates, _ = parallel_transport(snapshot.adiabatic, ad.states)
    energies, coeffs, _, _ = polarized_eigensystem(
        model, snapshot.k, waveform.A(t1), waveform.E(t1), adiabatic_states=ustates
    )
    raw = coeffs
    coeffs, _ = parallel_transport(snapshot.coeffs, raw)
    geo = _advance_geo(snapshot.geo_phase, raw, coeffs)
    dyn = snapshot.dyn_phase - mid_energies * dt
    return replace(
        snapshot, t=t1, states=ustates @ coeffs, energies=energies, dyn_phase=dyn,
        geo_phase=geo, adiabatic=ustates, coeffs=coeffs,
    )


def reference_states(kind: BasisKind, model, k, A, E):
    """Phase-free reference states and energies at one instant.

    Projectors do not see the gauge, so populations and the relaxation
    operator only need these; no time history is involved.
    """
    kind = BasisKind.parse(kind.value if isinstance(kind, BasisKind) else kind)
    if kind is BasisKind.BLOCH:
        es = eigensystem(model.hamiltonian(np.asarray(k, dtype=float)),
                         degeneracy_tol=DEGENERACY_TOL, check=False)
        return es.states, es.energies
    if kind is BasisKind.HOUSTON:
        es = adiabatic_eigensystem(model, k, A)
        return es.states, es.energies
    if model.n_bands == 2:
        K = shifted_wavevector(k, A)
        energies, states, _, _, _ = polarized_2x2(
            model.hamiltonian(K), model.hamiltonian_derivative(K), E)
        return states, energies
    energies, coeffs, ustates, _ = polarized_eigensystem(model, k, A, E)
    return stack_matmul(ustates, coeffs), energies
