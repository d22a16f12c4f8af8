"""Propagators: velocity-gauge TDSE, relaxation-time master equation, SBE.

State arrays carry the k-grid on the leading axis: wavefunctions are
``(n_k, n)``, density matrices ``(n_k, n, n)``. Everything is in atomic units.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit
from scipy.special import expit

from . import units
from .bandmodel import shifted_wavevector
from .bases import BasisKind, BasisSnapshot, effective_hamiltonian, reference_states
from .errors import GridTooCoarse
from .spectral import (
    adjoint_matmul, dagger, eigensystem, parallel_transport, sandwich, transported_frame_2x2,
    transported_grid_gauge,
)

log = logging.getLogger(__name__)

SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class KGrid:
    """Uniform grid on [0, 2 pi / a_L), endpoint excluded."""

    n_k: int
    a_L: float
    offset: float = 0.0

    def __post_init__(self):
        if self.n_k < 2:
            raise ValueError(f"n_k must be at least 2, got {self.n_k}")

    @property
    def spacing(self):
        return 2.0 * np.pi / (self.a_L * self.n_k)

    @property
    def points(self):
        return self.offset + self.spacing * np.arange(self.n_k)


@dataclass(frozen=True)
class RelaxationParams:
    """T1/T2 in atomic time units (None disables that channel); mu, Te in Hartree."""

    T1: float | None = units.fs_to_au(20.0)
    T2: float | None = units.fs_to_au(20.0)
    mu: float = 0.0
    Te: float = 0.0

    def __post_init__(self):
        for name in ("T1", "T2"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.Te < 0:
            raise ValueError(f"Te must be non-negative, got {self.Te}")

    @property
    def rate1(self):
        return 0.0 if self.T1 is None or np.isinf(self.T1) else 1.0 / self.T1

    @property
    def rate2(self):
        return 0.0 if self.T2 is None or np.isinf(self.T2) else 1.0 / self.T2


NO_RELAXATION = RelaxationParams(T1=None, T2=None)


def fermi_dirac(energy, mu=0.0, Te=0.0):
    energy = np.asarray(energy, dtype=float)
    if Te == 0.0:
        return np.where(energy < mu, 1.0, np.where(energy > mu, 0.0, 0.5))
    with np.errstate(over="ignore"):  # tiny Te gives +-inf, which expit maps to 0 or 1
        return expit(-(energy - mu) / Te)


def expm_hermitian(h, dt):
    """exp(-i h dt) for stacked Hermitian h; closed form for 2x2."""
    n = h.shape[-1]
    if n == 2:
        a = h[..., 0, 0].real
        d = h[..., 1, 1].real
        b = h[..., 0, 1]
        mean = 0.5 * (a + d)
        half = 0.5 * (a - d)
        r = np.hypot(half, np.abs(b))
        c = np.cos(r * dt)
        s = dt * np.sinc(r * dt / np.pi)  # sin(r dt) / r
        ph = np.exp(-1j * mean * dt)
        u = np.empty(h.shape, dtype=complex)
        u[..., 0, 0] = ph * (c - 1j * s * half)
        u[..., 1, 1] = ph * (c + 1j * s * half)
        u[..., 0, 1] = ph * (-1j * s * b)
        u[..., 1, 0] = ph * (-1j * s * np.conj(b))
        return u
    e, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * e * dt)[..., None, :]) @ dagger(v)


def _apply(u, psi):
    return np.einsum("...ij,...j->...i", u, psi)


def _magnus4_generator(h1, h2, dt):
    # Fourth-order Magnus with two Gauss points, written as exp(-i H dt)
    comm = h2 @ h1 - h1 @ h2
    return 0.5 * (h1 + h2) - 1j * (SQRT3 / 12.0) * dt * comm


GAUSS = (0.5 - SQRT3 / 6.0, 0.5 + SQRT3 / 6.0)


def tdse_step(psi, k, t, dt, model, waveform, method="midpoint"):
    """One step of i d(psi)/dt = H(k + A(t)) psi.

    ``midpoint``: exponential midpoint rule (second order, exactly unitary).
    ``magnus4``: two-point Gauss Magnus integrator (fourth order, unitary).
    """
    if method == "midpoint":
        h = model.hamiltonian(shifted_wavevector(k, waveform.A(t + 0.5 * dt)))
    elif method == "magnus4":
        h1 = model.hamiltonian(shifted_wavevector(k, waveform.A(t + GAUSS[0] * dt)))
        h2 = model.hamiltonian(shifted_wavevector(k, waveform.A(t + GAUSS[1] * dt)))
        h = _magnus4_generator(h1, h2, dt)
    else:
        raise ValueError(f"unknown TDSE method {method!r}")
    return _apply(expm_hermitian(h, dt), psi)


def rk4_tdse_step(psi, k, t, dt, model, waveform):
    """Classical RK4 for the TDSE; not norm preserving, used as a reference."""

    def f(tt, y):
        h = model.hamiltonian(shifted_wavevector(k, waveform.A(tt)))
        return -1j * _apply(h, y)

    k1 = f(t, psi)
    k2 = f(t + 0.5 * dt, psi + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, psi + 0.5 * dt * k2)
    k4 = f(t + dt, psi + dt * k3)
    return psi + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def relaxation_apply(rho, basis, p: RelaxationParams):
    """Relaxation-time dissipator D[rho] in the given reference basis.

    ``basis`` is a :class:`BasisSnapshot` or a ``(states, energies)`` pair.
    Populations relax to Fermi-Dirac at 1/T1, coherences decay at 1/T2.
    """
    if isinstance(basis, BasisSnapshot):
        states, energies = basis.states, basis.energies
    else:
        states, energies = basis
    rt = dagger(states) @ rho @ states
    n = rt.shape[-1]
    idx = np.arange(n)
    target = fermi_dirac(energies, p.mu, p.Te)
    out = -p.rate2 * rt
    out[..., idx, idx] = -p.rate1 * (rt[..., idx, idx] - target)
    return states @ out @ dagger(states)


def hermitize(rho):
    return 0.5 * (rho + dagger(rho))


def master_rhs(rho, h, basis, p):
    comm = h @ rho - rho @ h
    return -1j * comm + relaxation_apply(rho, basis, p)


class ReferenceBasis:
    """Phase-free reference states at arbitrary times, with a small cache.

    RK4 evaluates the basis at t, t + dt/2 (twice) and t + dt; the end point
    is reused as the next start, so each step diagonalizes only twice.
    """

    def __init__(self, kind, model, k, waveform):
        self.kind = BasisKind.parse(kind.value if isinstance(kind, BasisKind) else kind)
        self.model = model
        self.k = np.asarray(k, dtype=float)
        self.waveform = waveform
        self._cache = {}
        self._bloch = None

    def __call__(self, t):
        if self.kind is BasisKind.BLOCH:
            if self._bloch is None:
                self._bloch = reference_states(self.kind, self.model, self.k, 0.0, 0.0)
            return self._bloch
        hit = self._cache.get(t)
        if hit is None:
            hit = reference_states(self.kind, self.model, self.k,
                                   self.waveform.A(t), self.waveform.E(t))
            if len(self._cache) > 3:
                self._cache.clear()
            self._cache[t] = hit
        return hit


@njit(cache=True, inline="always")
def _rhs_generic(out, rho, h, u, target, rate1, rate2, n):
    # out = -i [h, rho] + U D~(U^+ rho U) U^+ for one stack of n x n matrices
    n_k = rho.shape[0]
    tmp = np.empty((n, n), dtype=np.complex128)
    rt = np.empty((n, n), dtype=np.complex128)
    for j in range(n_k):
        for a in range(n):
            for b in range(n):
                acc = 0j
                for c in range(n):
                    acc += h[j, a, c] * rho[j, c, b] - rho[j, a, c] * h[j, c, b]
                out[j, a, b] = -1j * acc
        # rt = U^+ rho U
        for a in range(n):
            for b in range(n):
                acc = 0j
                for c in range(n):
                    acc += rho[j, a, c] * u[j, c, b]
                tmp[a, b] = acc
        for a in range(n):
            for b in range(n):
                acc = 0j
                for c in range(n):
                    acc += np.conj(u[j, c, a]) * tmp[c, b]
                if a == b:
                    rt[a, b] = -rate1 * (acc - target[j, a])
                else:
                    rt[a, b] = -rate2 * acc
        # out += U rt U^+
        for a in range(n):
            for b in range(n):
                acc = 0j
                for c in range(n):
                    acc += u[j, a, c] * rt[c, b]
                tmp[a, b] = acc
        for a in range(n):
            for b in range(n):
                acc = 0j
                for c in range(n):
                    acc += tmp[a, c] * np.conj(u[j, b, c])
                out[j, a, b] += acc


@njit(cache=True)
def _rhs_into(out, rho, h, u, target, rate1, rate2):
    # literal size for the two-band case lets LLVM unroll the inner loops
    if rho.shape[1] == 2:
        _rhs_generic(out, rho, h, u, target, rate1, rate2, 2)
    else:
        _rhs_generic(out, rho, h, u, target, rate1, rate2, rho.shape[1])


@njit(cache=True)
def _master_rk4(rho, h0, hm, h1, u0, um, u1, f0, fm, f1, rate1, rate2, dt):
    k1 = np.empty_like(rho)
    k2 = np.empty_like(rho)
    k3 = np.empty_like(rho)
    k4 = np.empty_like(rho)
    _rhs_into(k1, rho, h0, u0, f0, rate1, rate2)
    _rhs_into(k2, rho + 0.5 * dt * k1, hm, um, fm, rate1, rate2)
    _rhs_into(k3, rho + 0.5 * dt * k2, hm, um, fm, rate1, rate2)
    _rhs_into(k4, rho + dt * k3, h1, u1, f1, rate1, rate2)
    new = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    n_k, n, _ = rho.shape
    out = np.empty_like(rho)
    for j in range(n_k):
        for a in range(n):
            for b in range(n):
                out[j, a, b] = 0.5 * (new[j, a, b] + np.conj(new[j, b, a]))
    return out


def master_step(rho, k, t, dt, model, waveform, kind, p, basis=None, backend="numba"):
    """RK4 step of d(rho)/dt = -i [H(k + A), rho] + D[rho].

    ``backend="numba"`` runs the fused compiled kernel, ``"numpy"`` the
    array-expression version; both evaluate the same right-hand side.
    """
    basis = basis if basis is not None else ReferenceBasis(kind, model, k, waveform)
    times = (t, t + 0.5 * dt, t + dt)
    hs = [model.hamiltonian(shifted_wavevector(k, waveform.A(tt))) for tt in times]
    refs = [basis(tt) for tt in times]
    if backend == "numba":
        us = [np.ascontiguousarray(np.broadcast_to(r[0], rho.shape), dtype=complex) for r in refs]
        fs = [np.ascontiguousarray(np.broadcast_to(fermi_dirac(r[1], p.mu, p.Te), rho.shape[:-1]),
                                   dtype=complex) for r in refs]
        return _master_rk4(np.ascontiguousarray(rho, dtype=complex), *hs, *us, *fs,
                           p.rate1, p.rate2, dt)
    if backend != "numpy":
        raise ValueError(f"unknown backend {backend!r}")

    def f(i, r):
        return master_rhs(r, hs[i], refs[i], p)

    k1 = f(0, rho)
    k2 = f(1, rho + 0.5 * dt * k1)
    k3 = f(1, rho + 0.5 * dt * k2)
    k4 = f(2, rho + dt * k3)
    return hermitize(rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))


def ground_state_density(model, k):
    """Valence-band projector at each k (field off)."""
    es = eigensystem(model.hamiltonian(np.asarray(k, dtype=float)))
    v = es.states[..., :, 0]
    return np.einsum("...i,...j->...ij", v, np.conj(v))


def ground_state_vector(model, k):
    return eigensystem(model.hamiltonian(np.asarray(k, dtype=float))).states[..., :, 0].copy()


# --- length-gauge coefficient propagation ---------------------------------


class FrameData(NamedTuple):
    t: float
    dh: np.ndarray
    energies: np.ndarray
    states: np.ndarray
    heff: np.ndarray
    pol_energies: np.ndarray
    coeffs: np.ndarray


class AdiabaticFrame:
    """Instantaneous eigenbasis along K(t) = k + A(t), parallel transported in time.

    States expressed in this frame obey the length-gauge equations:
    i dc/dt = H_eff c and d rho/dt = -i [H_eff, rho] + D[rho]. A small
    conduction amplitude is then updated only by products of small
    quantities and keeps full relative precision, whereas in the orbital
    basis it is the difference of O(1) components and carries their rounding.
    """

    def __init__(self, model, k, waveform, t0=0.0):
        self.model = model
        self.k = np.asarray(k, dtype=float)
        self.waveform = waveform
        K = shifted_wavevector(self.k, waveform.A(t0))
        self.states = eigensystem(model.hamiltonian(K), gauge="analytic").states
        self.t = float(t0)
        self._bloch = None
        self._cache = {}
        self.now = self.data(t0)

    def data(self, t):
        """Frame quantities at t, gauge-aligned to the frame at ``self.t``."""
        hit = self._cache.get(t)
        if hit is not None:
            return hit
        K = shifted_wavevector(self.k, self.waveform.A(t))
        E = self.waveform.E(t)
        h = self.model.hamiltonian(K)
        dh = self.model.hamiltonian_derivative(K)
        if self.model.n_bands == 2:
            energies, states, heff, pol_energies, coeffs = transported_frame_2x2(h, dh, E, self.states)
        else:
            es = eigensystem(h, gauge="analytic", check=False)
            energies = es.energies
            states, _ = parallel_transport(self.states, es.states)
            heff = effective_hamiltonian(states, energies, dh, E)
            pol_energies, coeffs = eigensystem(heff, gauge="analytic", check=False)
        hit = FrameData(float(t), dh, energies, states, heff, pol_energies, coeffs)
        self._cache[t] = hit
        return hit

    def heff(self, t):
        d = self.data(t)
        return d.heff, d.states

    def advance(self, t):
        self.now = self.data(t)
        self.states = self.now.states
        self.t = self.now.t
        self._cache = {self.t: self.now}

    def bloch(self):
        if self._bloch is None:
            self._bloch = reference_states(BasisKind.BLOCH, self.model, self.k, 0.0, 0.0)
        return self._bloch

    def reference(self, kind, data=None):
        """Reference states of ``kind`` in frame components, with their energies."""
        data = data if data is not None else self.now
        if kind is BasisKind.HOUSTON:
            return np.broadcast_to(np.eye(self.model.n_bands, dtype=complex), data.heff.shape), data.energies
        if kind is BasisKind.POLARIZED:
            return data.coeffs, data.pol_energies
        states, energies = self.bloch()
        return adjoint_matmul(data.states, states), energies

    def initial_coefficients(self):
        """Bloch valence state (the field-free ground state) in the frame."""
        c = np.zeros(self.now.energies.shape, dtype=complex)
        if np.all(self.waveform.A(self.t) == 0.0):
            # the frame is the Bloch eigenbasis here; a rounded overlap would
            # seed spurious 1e-17 admixtures
            c[..., 0] = 1.0
            return c
        states, _ = self.reference(BasisKind.BLOCH)
        return states[..., :, 0].copy()

    def initial_density(self):
        c = self.initial_coefficients()
        return np.einsum("...i,...j->...ij", c, np.conj(c))

    def populations(self, state, kind):
        """Occupations of every ``kind`` band for frame coefficients or density."""
        states, _ = self.reference(kind)
        state = np.asarray(state)
        if state.ndim == states.ndim:
            return np.einsum("...ib,...ij,...jb->...b", np.conj(states), state, states).real
        return np.abs(np.einsum("...ib,...i->...b", np.conj(states), state)) ** 2

    def current(self, state):
        j = -sandwich(self.now.states, self.now.dh)
        state = np.asarray(state)
        if state.ndim == j.ndim:
            return np.einsum("...ab,...ba->...", j, state).real
        return np.einsum("...a,...ab,...b->...", np.conj(state), j, state).real

    def lab_density(self, rho):
        return sandwich(dagger(self.now.states), rho)

    def lab_state(self, c):
        return _apply(self.now.states, c)


def coefficient_step(c, frame: AdiabaticFrame, dt, method="midpoint"):
    """Advance i dc/dt = H_eff c by one step and move the frame to t + dt."""
    t = frame.t
    if method == "midpoint":
        h, _ = frame.heff(t + 0.5 * dt)
    elif method == "magnus4":
        h1, _ = frame.heff(t + GAUSS[0] * dt)
        h2, _ = frame.heff(t + GAUSS[1] * dt)
        h = _magnus4_generator(h1, h2, dt)
    else:
        raise ValueError(f"unknown method {method!r}")
    c = _apply(expm_hermitian(h, dt), c)
    frame.advance(t + dt)
    return c


def frame_master_step(rho, frame: AdiabaticFrame, dt, kind, p: RelaxationParams):
    """RK4 step of the master equation for a frame density; moves the frame to t + dt.

    Same right-hand side as :func:`master_step`, written in the frame.
    """
    kind = BasisKind.parse(kind.value if isinstance(kind, BasisKind) else kind)
    data = (frame.now, frame.data(frame.t + 0.5 * dt), frame.data(frame.t + dt))
    hs, us, fs = [], [], []
    for d in data:
        u, e = frame.reference(kind, d)
        hs.append(np.ascontiguousarray(d.heff, dtype=complex))
        us.append(np.ascontiguousarray(u, dtype=complex))
        fs.append(np.ascontiguousarray(np.broadcast_to(fermi_dirac(e, p.mu, p.Te), rho.shape[:-1]),
                                       dtype=complex))
    rho = _master_rk4(np.ascontiguousarray(rho, dtype=complex), *hs, *us, *fs, p.rate1, p.rate2, dt)
    frame.advance(data[2].t)
    return rho


# --- semiconductor Bloch equations -----------------------------------------

STENCILS = {
    2: {1: 0.5},
    4: {1: 2.0 / 3.0, 2: -1.0 / 12.0},
    6: {1: 0.75, 2: -0.15, 3: 1.0 / 60.0},
}


class SBEGrid:
    """Band-basis data on a periodic k-grid for the length-gauge SBE.

    The grid gauge is parallel transported along k; the leftover phase when
    closing the zone (``twist``) is applied to ghost points of the stencil.
    """

    def __init__(self, model, grid: KGrid, stencil_order=4):
        if stencil_order not in STENCILS:
            raise ValueError(f"stencil order must be one of {sorted(STENCILS)}")
        self.model = model
        self.grid = grid
        self.order = stencil_order
        k = grid.points
        self.energies, self.states, self.twist = transported_grid_gauge(model, k)
        dh = model.hamiltonian_derivative(k)
        self.dh_band = dagger(self.states) @ dh @ self.states
        n = model.n_bands
        diff = self.energies[:, None, :] - self.energies[:, :, None]
        eye = np.eye(n, dtype=bool)
        d = np.where(eye, 0.0, 1j * self.dh_band / np.where(eye, 1.0, diff))
        # diagonal Berry connection of the transported gauge (small, O(dk^2))
        dstates = self._derivative_vectors(self.states)
        berry = 1j * np.einsum("kib,kib->kb", np.conj(self.states), dstates)
        idx = np.arange(n)
        d[:, idx, idx] = berry.real
        self.dipoles = d
        self.wrap = np.conj(self.twist)[:, None] * self.twist[None, :]
        self.omega = self.energies[:, :, None] - self.energies[:, None, :]

    def _derivative_vectors(self, u):
        # central 2nd-order difference of the gauge itself, twisted at the wrap
        n_k = len(u)
        v = self.model.bz_embedding
        fwd = np.roll(u, -1, axis=0)
        fwd[n_k - 1] = (v @ u[0]) * self.twist[None, :]
        bwd = np.roll(u, 1, axis=0)
        bwd[0] = (dagger(v) @ u[n_k - 1]) * np.conj(self.twist)[None, :]
        return (fwd - bwd) / (2.0 * self.grid.spacing)

    def shifted(self, rho, m):
        """rho at k_{j+m} for every j, with twisted ghost values."""
        n_k = len(rho)
        out = np.roll(rho, -m, axis=0)
        if m > 0:
            out[n_k - m:] = out[n_k - m:] * self.wrap
        elif m < 0:
            out[:-m] = out[:-m] * np.conj(self.wrap)
        return out

    def k_derivative(self, rho):
        acc = np.zeros_like(rho)
        for m, c in STENCILS[self.order].items():
            acc += c * (self.shifted(rho, m) - self.shifted(rho, -m))
        return acc / self.grid.spacing

    def equilibrium(self, p: RelaxationParams):
        f = fermi_dirac(self.energies, p.mu, p.Te)
        n = self.model.n_bands
        rho = np.zeros((self.grid.n_k, n, n), dtype=complex)
        idx = np.arange(n)
        rho[:, idx, idx] = f
        return rho

    def rhs(self, rho, E, p: RelaxationParams):
        d = self.dipoles
        out = E * self.k_derivative(rho)
        out += -1j * E * (d @ rho - rho @ d)
        out += -1j * self.omega * rho
        n = self.model.n_bands
        idx = np.arange(n)
        target = fermi_dirac(self.energies, p.mu, p.Te)
        relax = -p.rate2 * rho
        relax[:, idx, idx] = -p.rate1 * (rho[:, idx, idx] - target)
        return out + relax

    def current_per_k(self, rho):
        return -np.einsum("kab,kba->k", self.dh_band, rho).real


def sbe_step(rho, t, dt, grid: SBEGrid, waveform, p: RelaxationParams, courant_limit=0.5):
    """RK4 step of the length-gauge SBE on the whole grid at once."""
    fields = waveform.E(np.array([t, t + 0.5 * dt, t + dt]))
    courant = float(np.max(np.abs(fields))) * dt / grid.grid.spacing
    if courant > courant_limit:
        raise GridTooCoarse(
            f"field step E*dt/dk = {courant:.3f} exceeds {courant_limit}; refine dt or coarsen k"
        )
    e0, em, e1 = fields
    k1 = grid.rhs(rho, e0, p)
    k2 = grid.rhs(rho + 0.5 * dt * k1, em, p)
    k3 = grid.rhs(rho + 0.5 * dt * k2, em, p)
    k4 = grid.rhs(rho + dt * k3, e1, p)
    return hermitize(rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))


def density_diagnostics(rho):
    """(max non-Hermiticity, trace per k, min eigenvalue) for monitoring."""
    herm = float(np.max(np.abs(rho - dagger(rho))))
    trace = np.trace(rho, axis1=-2, axis2=-1).real
    min_eig = float(np.min(np.linalg.eigvalsh(hermitize(rho))))
    if min_eig < -1e-6:
        log.warning("density matrix eigenvalue %.3e below -1e-6", min_eig)
    return herm, trace, min_eig
