"""Band populations in a chosen reference basis, current, and BZ averages."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bandmodel import shifted_wavevector
from .errors import LengthMismatch, MismatchedTime
from .spectral import dipole_elements, eigensystem

POPULATION_CHANNELS = ("n_B", "n_H", "n_PH")


@dataclass
class ObservableSeries:
    """Time series sampled on a common grid; times in fs, channels real."""

    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    channels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.channels = {k: np.asarray(v, dtype=float) for k, v in self.channels.items()}
        self.validate()

    def validate(self):
        n = len(self.times)
        for name, v in self.channels.items():
            if len(v) != n:
                raise LengthMismatch(f"channel {name} has {len(v)} samples, expected {n}")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __getitem__(self, name):
        return self.channels[name]

    def __len__(self):
        return len(self.times)

    def names(self):
        return list(self.channels)


def _check_time(snapshot_t, state_t, dt):
    if snapshot_t is None or state_t is None:
        return
    if abs(snapshot_t - state_t) > 0.5 * dt:
        raise MismatchedTime(f"snapshot at t={snapshot_t} but state at t={state_t}")


def project_population(state, states, band=None, *, state_t=None, snapshot_t=None, dt=0.0):
    """Occupation of reference band(s) for a pure state or a density matrix.

    ``state`` is ``(..., n)`` (wavefunction of the single occupied band) or
    ``(..., n, n)`` (density matrix); ``states`` holds reference vectors as
    columns (a :class:`BasisSnapshot` is accepted too). Returns all bands
    ``(..., n)`` or the requested ``band``.
    """
    if hasattr(states, "states"):
        snapshot_t = states.t if snapshot_t is None else snapshot_t
        states = states.states
    _check_time(snapshot_t, state_t, dt)
    state = np.asarray(state)
    if state.ndim == states.ndim:
        occ = np.einsum("...ib,...ij,...jb->...b", np.conj(states), state, states).real
    else:
        amp = np.einsum("...ib,...i->...b", np.conj(states), state)
        occ = np.abs(amp) ** 2
    return occ if band is None else occ[..., band]


def bz_average(values, grid=None):
    """(1/N_k) sum over the grid, the uniform-grid form of (a_L/2pi) int dk.

    Sums in fixed (index) order so the result does not depend on threading.
    """
    values = np.asarray(values)
    if grid is not None and values.shape[0] != grid.n_k:
        raise LengthMismatch(f"{values.shape[0]} values for a {grid.n_k}-point grid")
    return np.sum(values, axis=0) / values.shape[0]


def current_operator(model, k, A):
    """J-hat = -dH/dkappa at kappa = k + A (electron charge -e, e = 1)."""
    return -model.hamiltonian_derivative(shifted_wavevector(k, A))


def current(state, model, k, A):
    """Per-k current Tr[J rho] (or <psi|J|psi>) in atomic units."""
    j = current_operator(model, k, A)
    state = np.asarray(state)
    if state.ndim == j.ndim:
        return np.einsum("...ij,...ji->...", j, state).real
    return np.einsum("...i,...ij,...j->...", np.conj(state), j, state).real


def static_perturbation_population(model, k, E_dc):
    """First-order virtual conduction population |E d_cv / (e_c - e_v)|^2 per k."""
    k = np.asarray(k, dtype=float)
    d = dipole_elements(model, k)
    e = eigensystem(model.hamiltonian(k)).energies
    gap = e[..., 1] - e[..., 0]
    return np.abs(E_dc * d[..., 1, 0] / gap) ** 2
