"""Small dense Hermitian eigenproblems, gauge fixing and dipole elements.

All routines act on stacks of matrices ``(..., n, n)``; eigenvectors are the
columns of ``states``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numba import njit

from .bandmodel import hermiticity_error
from .errors import BandMatchingFailure, DegenerateSpectrum, NonHermitianInput

DEGENERACY_TOL = 1e-10
HERMITICITY_TOL = 1e-12


class EigenSystem(NamedTuple):
    energies: np.ndarray  # (..., n), ascending
    states: np.ndarray  # (..., n, n), columns


def dagger(m):
    return np.conj(np.swapaxes(m, -1, -2))


@njit(cache=True)
def _matmul_kernel(a, b, out, conj_a):
    n_k, n, m = out.shape
    inner = b.shape[1]
    for j in range(n_k):
        for r in range(n):
            for c in range(m):
                acc = 0j
                for i in range(inner):
                    x = np.conj(a[j, i, r]) if conj_a else a[j, r, i]
                    acc += x * b[j, i, c]
                out[j, r, c] = acc


def _stacked(a, b, conj_a):
    a, b = np.broadcast_arrays(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))
    shape = a.shape[:-2]
    fa = np.ascontiguousarray(a.reshape((-1,) + a.shape[-2:]))
    fb = np.ascontiguousarray(b.reshape((-1,) + b.shape[-2:]))
    rows = fa.shape[2] if conj_a else fa.shape[1]
    out = np.empty((fa.shape[0], rows, fb.shape[2]), dtype=complex)
    _matmul_kernel(fa, fb, out, conj_a)
    return out.reshape(shape + out.shape[1:])


def stack_matmul(a, b):
    """a @ b for stacks of small matrices (much faster than np.matmul here)."""
    return _stacked(a, b, False)


def adjoint_matmul(a, b):
    """a^dagger @ b over a stack."""
    return _stacked(a, b, True)


def sandwich(u, m):
    """u^dagger m u over a stack."""
    return _stacked(u, stack_matmul(m, u), True)


@njit(cache=True)
def _eig2(a, d, b, v):
    """Analytic-gauge eigenpairs of [[a, b], [b*, d]] into columns of v."""
    mean = 0.5 * (a + d)
    half = 0.5 * (a - d)
    babs = abs(b)
    r = np.hypot(half, babs)
    # half <= 0: v+ = (b, r - half), v- = (r - half, -b*)
    # half  > 0: v+ = (r + half, b*), v- = (-b, r + half)
    if half <= 0.0:
        m = r - half
        norm = np.sqrt(babs * babs + m * m)
        if norm == 0.0:
            v[0, 0] = 1.0
            v[1, 0] = 0.0
            v[0, 1] = 0.0
            v[1, 1] = 1.0
        else:
            v[0, 1] = b / norm
            v[1, 1] = m / norm
            v[0, 0] = m / norm
            v[1, 0] = -np.conj(b) / norm
    else:
        m = r + half
        norm = np.sqrt(babs * babs + m * m)
        v[0, 1] = m / norm
        v[1, 1] = np.conj(b) / norm
        v[0, 0] = -b / norm
        v[1, 0] = m / norm
    return mean - r, mean + r


@njit(cache=True)
def _eigh_2x2_kernel(h, energies, states):
    for j in range(h.shape[0]):
        e0, e1 = _eig2(h[j, 0, 0].real, h[j, 1, 1].real, h[j, 0, 1], states[j])
        energies[j, 0] = e0
        energies[j, 1] = e1


@njit(cache=True)
def _polarized_2x2_kernel(h, dh, field, energies, states, ad_states, ad_energies, coeffs):
    for j in range(h.shape[0]):
        u = ad_states[j]
        e0, e1 = _eig2(h[j, 0, 0].real, h[j, 1, 1].real, h[j, 0, 1], u)
        ad_energies[j, 0] = e0
        ad_energies[j, 1] = e1
        # m01 = <u_0| dH |u_1>; d01 = i m01 / (e1 - e0)
        m01 = 0j
        for a in range(2):
            for b in range(2):
                m01 += np.conj(u[a, 0]) * dh[j, a, b] * u[b, 1]
        c01 = field[j] * 1j * m01 / (e1 - e0)
        c = coeffs[j]
        p0, p1 = _eig2(e0, e1, c01, c)
        energies[j, 0] = p0
        energies[j, 1] = p1
        for a in range(2):
            for b in range(2):
                states[j, a, b] = u[a, 0] * c[0, b] + u[a, 1] * c[1, b]


def polarized_2x2(h, dh, field):
    """Fused 2-band polarized eigenproblem over a stack.

    Returns ``(energies, states, adiabatic_states, adiabatic_energies, coeffs)``
    with states = adiabatic_states @ coeffs, all in the analytic gauge.
    """
    shape = h.shape[:-2]
    fh = np.ascontiguousarray(h.reshape(-1, 2, 2), dtype=complex)
    fd = np.ascontiguousarray(np.broadcast_to(dh, h.shape).reshape(-1, 2, 2), dtype=complex)
    fe = np.ascontiguousarray(np.broadcast_to(field, shape).reshape(-1), dtype=float)
    n = fh.shape[0]
    out = (np.empty((n, 2)), np.empty((n, 2, 2), dtype=complex), np.empty((n, 2, 2), dtype=complex),
           np.empty((n, 2)), np.empty((n, 2, 2), dtype=complex))
    _polarized_2x2_kernel(fh, fd, fe, out[0], out[1], out[2], out[3], out[4])
    return tuple(x.reshape(shape + x.shape[1:]) for x in out)


@njit(cache=True)
def _frame_2x2_kernel(h, dh, field, prev, energies, states, heff, pol_energies, coeffs):
    worst = 1.0
    for j in range(h.shape[0]):
        u = states[j]
        e0, e1 = _eig2(h[j, 0, 0].real, h[j, 1, 1].real, h[j, 0, 1], u)
        energies[j, 0] = e0
        energies[j, 1] = e1
        # rephase each column so that <prev_b|u_b> is real positive
        for b in range(2):
            o = np.conj(prev[j, 0, b]) * u[0, b] + np.conj(prev[j, 1, b]) * u[1, b]
            mag = abs(o)
            worst = min(worst, mag)
            if mag > 0.0:
                ph = np.conj(o) / mag
                u[0, b] *= ph
                u[1, b] *= ph
        m01 = 0j
        for a in range(2):
            for b in range(2):
                m01 += np.conj(u[a, 0]) * dh[j, a, b] * u[b, 1]
        c01 = field[j] * 1j * m01 / (e1 - e0)
        heff[j, 0, 0] = e0
        heff[j, 1, 1] = e1
        heff[j, 0, 1] = c01
        heff[j, 1, 0] = np.conj(c01)
        p0, p1 = _eig2(e0, e1, c01, coeffs[j])
        pol_energies[j, 0] = p0
        pol_energies[j, 1] = p1
    return worst


def transported_frame_2x2(h, dh, field, prev):
    """Fused 2-band frame data at one instant, gauge-aligned to ``prev``.

    Returns ``(energies, states, heff, pol_energies, coeffs)``: eigenpairs of
    ``h`` parallel transported from ``prev``, the length-gauge effective
    Hamiltonian in that gauge, and its eigenpairs (polarized coefficients).
    """
    n = h.shape[0]
    fe = np.ascontiguousarray(np.broadcast_to(field, (n,)), dtype=float)
    out = (np.empty((n, 2)), np.empty((n, 2, 2), dtype=complex), np.empty((n, 2, 2), dtype=complex),
           np.empty((n, 2)), np.empty((n, 2, 2), dtype=complex))
    worst = _frame_2x2_kernel(np.ascontiguousarray(h, dtype=complex), np.ascontiguousarray(dh, dtype=complex),
                              fe, np.ascontiguousarray(prev, dtype=complex), *out)
    # for 2 bands, a dominant diagonal overlap means |overlap|^2 > 1/2
    if n and worst <= np.sqrt(0.5):
        raise BandMatchingFailure(f"band overlap {worst:.3f} too small; time step too large or bands cross")
    return out


def _eigh_2x2(h):
    """Closed-form eigenpairs of stacked 2x2 Hermitian matrices.

    The returned vectors are in the analytic gauge: each one is a polynomial in
    the matrix entries (then normalized), so the gauge is smooth wherever the
    sign of (h00 - h11) does not change and the spectrum stays gapped. A fully
    degenerate matrix gets the identity basis.
    """
    shape = h.shape[:-2]
    flat = np.ascontiguousarray(h.reshape(-1, 2, 2), dtype=complex)
    energies = np.empty((flat.shape[0], 2))
    states = np.empty((flat.shape[0], 2, 2), dtype=complex)
    _eigh_2x2_kernel(flat, energies, states)
    return energies.reshape(shape + (2,)), states.reshape(shape + (2, 2))


def canonical_phase(states):
    """Make the largest-magnitude component of every column real positive."""
    idx = np.argmax(np.abs(states), axis=-2)
    pivot = np.take_along_axis(states, idx[..., None, :], axis=-2)
    phase = pivot / np.abs(pivot)
    return states * np.conj(phase)


def eigensystem(h, gauge="canonical", degeneracy_tol=None, check=True):
    """Ascending eigenpairs of Hermitian ``h``.

    gauge: ``"canonical"`` (largest component real positive, reproducible) or
    ``"analytic"`` (smooth closed-form gauge, 2x2 only; larger matrices fall
    back to canonical). ``degeneracy_tol`` turns a gap smaller than the
    tolerance into :class:`DegenerateSpectrum`; pass it when the caller
    depends on the eigenvector gauge.
    """
    h = np.asarray(h, dtype=complex)
    if check:
        err = hermiticity_error(h)
        if err > HERMITICITY_TOL * max(1.0, float(np.max(np.abs(h), initial=0.0))):
            raise NonHermitianInput(f"matrix is not Hermitian (max |H - H^+| = {err:.3e})")
    n = h.shape[-1]
    if n == 2:
        energies, states = _eigh_2x2(h)
    else:
        energies, states = np.linalg.eigh(h)
        gauge = "canonical"
    if degeneracy_tol is not None and n > 1:
        gap = np.min(np.diff(energies, axis=-1))
        if gap < degeneracy_tol:
            raise DegenerateSpectrum(f"band gap {gap:.3e} below tolerance {degeneracy_tol:.1e}")
    if gauge == "canonical":
        states = canonical_phase(states)
    elif gauge != "analytic":
        raise ValueError(f"unknown gauge {gauge!r}")
    return EigenSystem(energies, states)


def parallel_transport(prev_states, new_states, min_overlap=0.5):
    """Rephase ``new_states`` so that <prev_b|new_b> is real and positive.

    Returns ``(aligned, applied_phase)`` with ``aligned = new * exp(i phase)``.
    Bands are matched by index; every diagonal overlap must exceed
    ``min_overlap`` in modulus and dominate its row.
    """
    full = _stacked(prev_states, new_states, True)
    overlap = np.diagonal(full, axis1=-2, axis2=-1)
    mag = np.abs(overlap)
    full = np.abs(full)
    if np.any(mag <= min_overlap) or np.any(mag < np.max(full, axis=-1) - 1e-12):
        worst = float(np.min(mag))
        raise BandMatchingFailure(
            f"band overlap {worst:.3f} too small; time step too large or bands cross"
        )
    phase = -np.angle(overlap)
    return new_states * np.exp(1j * phase)[..., None, :], phase


def dipole_from_states(dh, states, energies):
    """d_ab = i <u_a|dH/dk|u_b> / (e_b - e_a) off the diagonal, zero on it.

    Equals i <u_a|d u_b/dk> for a != b in whatever gauge ``states`` carries.
    """
    m = sandwich(states, dh)
    diff = energies[..., None, :] - energies[..., :, None]
    n = energies.shape[-1]
    eye = np.eye(n, dtype=bool)
    safe = np.where(eye, 1.0, diff)
    return np.where(eye, 0.0, 1j * m / safe)


def dipole_elements(model, kappa, states=None, degeneracy_tol=DEGENERACY_TOL):
    """Interband dipole matrix (Hermitian, zero diagonal) at ``kappa``."""
    es = eigensystem(model.hamiltonian(kappa), degeneracy_tol=degeneracy_tol)
    if states is not None:
        es = EigenSystem(es.energies, states)
    return dipole_from_states(model.hamiltonian_derivative(kappa), es.states, es.energies)


def analytic_gauge(model, degeneracy_tol=DEGENERACY_TOL):
    """Callable kappa -> eigenvectors in the smooth closed-form gauge."""

    def states(kappa):
        return eigensystem(model.hamiltonian(kappa), gauge="analytic",
                           degeneracy_tol=degeneracy_tol).states

    return states


def berry_connection(model, kappa, gauge=None, step=None):
    """Per-band Berry connection i <u_b|d u_b/dk> by central differences.

    ``gauge`` maps kappa to states in a smooth gauge (default: the analytic
    gauge). Returns a real array ``(..., n)``.
    """
    gauge = gauge if gauge is not None else analytic_gauge(model)
    h = step if step is not None else 1e-5 / model.lattice_constant
    kappa = np.asarray(kappa, dtype=float)
    u0 = gauge(kappa)
    du = (gauge(kappa + h) - gauge(kappa - h)) / (2.0 * h)
    conn = 1j * np.einsum("...ib,...ib->...b", np.conj(u0), du)
    return conn.real


def transported_grid_gauge(model, kappa_points, degeneracy_tol=DEGENERACY_TOL):
    """Eigenvectors along an ascending uniform BZ grid, parallel transported.

    Returns ``(energies, states, twist)``. ``twist[b]`` is the phase picked up
    by band b when transported once around the zone and compared with the
    embedded start ``V u_b(k_0)``; its argument is the gauge-invariant Zak
    phase for that embedding.
    """
    kappa_points = np.asarray(kappa_points, dtype=float)
    es = eigensystem(model.hamiltonian(kappa_points), degeneracy_tol=degeneracy_tol)
    states = es.states.copy()
    for j in range(1, len(kappa_points)):
        states[j], _ = parallel_transport(states[j - 1], states[j])
    g = model.reciprocal_length
    closing = eigensystem(model.hamiltonian(kappa_points[0] + g)).states
    closing, _ = parallel_transport(states[-1], closing)
    start = model.bz_embedding @ states[0]
    twist = np.einsum("ib,ib->b", np.conj(start), closing)
    twist = twist / np.abs(twist)
    return es.energies, states, twist
