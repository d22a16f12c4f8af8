"""Independent reference implementations used as test oracles.

These re-code the dimer Hamiltonian and pulse from their closed forms in
scalar compiled loops, sharing no code with the package under test.
"""

import numpy as np
from numba import njit

HARTREE_EV = 27.211386245988
BOHR_A = 0.529177210903
FS_AU = 1.0 / 2.4188843265857e-2
VPM_AU = 1.0 / 5.14220674763e11

A_L = 5.65 / BOHR_A
DELTA = 1.52 / HARTREE_EV
T_H = 1.58 / HARTREE_EV


@njit(cache=True)
def _pulse_a(t, e0, w, tp):
    if t < 0.0 or t > tp:
        return 0.0
    x = t - 0.5 * tp
    return -(e0 / w) * np.sin(w * x) * np.cos(np.pi * x / tp) ** 4


@njit(cache=True)
def _rhs(t, y, k, e0, w, tp, out):
    kap = k + _pulse_a(t, e0, w, tp)
    off = -2.0 * T_H * np.cos(0.5 * A_L * kap)
    out[0] = -1j * (-0.5 * DELTA * y[0] + off * y[1])
    out[1] = -1j * (off * y[0] + 0.5 * DELTA * y[1])


@njit(cache=True)
def rk4_pulse(psi0, k, e0, w, tp, dt, n_steps):
    """Classical RK4 for one k under the cos^4 pulse; returns the final state."""
    y = psi0.copy()
    k1 = np.empty(2, dtype=np.complex128)
    k2 = np.empty(2, dtype=np.complex128)
    k3 = np.empty(2, dtype=np.complex128)
    k4 = np.empty(2, dtype=np.complex128)
    t = 0.0
    for n in range(n_steps):
        t = n * dt
        _rhs(t, y, k, e0, w, tp, k1)
        _rhs(t + 0.5 * dt, y + 0.5 * dt * k1, k, e0, w, tp, k2)
        _rhs(t + 0.5 * dt, y + 0.5 * dt * k2, k, e0, w, tp, k3)
        _rhs(t + dt, y + dt * k3, k, e0, w, tp, k4)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def dimer_eigen(kappa):
    """numpy.linalg.eigh of the dimer matrix (general-purpose solver)."""
    off = -2.0 * T_H * np.cos(0.5 * A_L * np.asarray(kappa, dtype=float))
    h = np.zeros(np.shape(kappa) + (2, 2))
    h[..., 0, 0] = -0.5 * DELTA
    h[..., 1, 1] = 0.5 * DELTA
    h[..., 0, 1] = off
    h[..., 1, 0] = off
    return np.linalg.eigh(h)
