import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import dimer_eigen

from driven_lattice_sim import units
from driven_lattice_sim.bandmodel import DimerChain
from driven_lattice_sim.errors import BandMatchingFailure, DegenerateSpectrum, NonHermitianInput
from driven_lattice_sim.spectral import (
    analytic_gauge, berry_connection, dagger, dipole_elements, eigensystem, parallel_transport,
    polarized_2x2, transported_grid_gauge,
)
from driven_lattice_sim.bases import effective_hamiltonian

MODEL = DimerChain()
A_L = MODEL.lattice_constant
G = 2.0 * np.pi / A_L

# t_H a_L / Delta at the zone edge: 1.58 * 5.65 / 1.52 Angstrom
DIPOLE_EDGE_A = 5.873026315789

reals = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False)


@st.composite
def hermitian(draw, n=2):
    re = np.array([[draw(reals) for _ in range(n)] for _ in range(n)])
    im = np.array([[draw(reals) for _ in range(n)] for _ in range(n)])
    m = re + 1j * im
    return 0.5 * (m + m.conj().T)


def test_diagonal_input():
    h = np.diag(units.ev_to_au(np.array([-0.76, 0.76]))).astype(complex)
    es = eigensystem(h)
    np.testing.assert_allclose(units.au_to_ev(es.energies), [-0.76, 0.76], rtol=1e-14)
    np.testing.assert_array_equal(es.states, np.eye(2))


def test_dimer_zone_center():
    es = eigensystem(MODEL.hamiltonian(0.0))
    np.testing.assert_allclose(units.au_to_ev(es.energies), [-3.250107690523, 3.250107690523], rtol=1e-10)


@settings(max_examples=200, deadline=None)
@given(hermitian(), st.sampled_from(["canonical", "analytic"]))
def test_random_hermitian_residual_and_orthonormality(h, gauge):
    es = eigensystem(h, gauge=gauge)
    scale = max(1.0, np.abs(h).max())
    assert np.all(np.diff(es.energies) >= 0)
    np.testing.assert_allclose(h @ es.states, es.states * es.energies, atol=1e-12 * scale)
    np.testing.assert_allclose(dagger(es.states) @ es.states, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(es.energies, np.linalg.eigvalsh(h), atol=1e-12 * scale)


@settings(max_examples=50, deadline=None)
@given(hermitian(n=3))
def test_larger_matrices_use_general_solver(h):
    es = eigensystem(h)
    np.testing.assert_allclose(h @ es.states, es.states * es.energies, atol=1e-11)
    pivot = np.take_along_axis(es.states, np.argmax(np.abs(es.states), axis=0)[None, :], axis=0)
    np.testing.assert_allclose(pivot.imag, 0.0, atol=1e-14)


def test_non_hermitian_and_degenerate_inputs_raise():
    with pytest.raises(NonHermitianInput):
        eigensystem(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(DegenerateSpectrum):
        eigensystem(np.eye(2), degeneracy_tol=1e-10)
    np.testing.assert_array_equal(eigensystem(np.eye(2)).energies, [1.0, 1.0])


def test_parallel_transport_identity_and_pure_gauge():
    prev = eigensystem(MODEL.hamiltonian(0.37)).states
    same, phase = parallel_transport(prev, prev)
    np.testing.assert_array_equal(phase, 0.0)
    np.testing.assert_allclose(same, prev, atol=1e-16)
    theta = np.array([0.4, -1.1])
    back, phase = parallel_transport(prev, prev * np.exp(1j * theta))
    np.testing.assert_allclose(back, prev, atol=1e-15)
    np.testing.assert_allclose(phase, -theta, atol=1e-15)


def test_parallel_transport_rejects_band_swap():
    prev = np.eye(2, dtype=complex)
    with pytest.raises(BandMatchingFailure):
        parallel_transport(prev, prev[:, ::-1])


def test_real_dimer_path_needs_only_sign_fixes():
    path = np.linspace(-G, G, 801)
    states = eigensystem(MODEL.hamiltonian(path)).states
    cur = states[0]
    for j in range(1, len(path)):
        cur, phase = parallel_transport(cur, states[j])
        assert np.allclose(np.abs(np.sin(phase)), 0.0, atol=1e-12)
    berry = berry_connection(MODEL, path)
    assert abs(np.trapezoid(berry[:, 0], path)) < 1e-12


def test_zone_edge_dipole():
    d = dipole_elements(MODEL, np.pi / A_L)
    assert units.au_to_angstrom(abs(d[1, 0])) == pytest.approx(DIPOLE_EDGE_A, rel=1e-10)


def _fd_dipole(kappa, h):
    # eigh at kappa, kappa +- h; align neighbours to the centre by sign, then difference
    _, u0 = dimer_eigen(kappa)
    _, up = dimer_eigen(kappa + h)
    _, um = dimer_eigen(kappa - h)
    up = up * np.sign(np.sum(u0 * up, axis=-2))[..., None, :]
    um = um * np.sign(np.sum(u0 * um, axis=-2))[..., None, :]
    du = (up - um) / (2 * h)
    return 1j * np.einsum("...ia,...ib->...ab", u0, du)


def test_dipole_matches_finite_difference_oracle():
    kappa = np.linspace(0.0, G, 256, endpoint=False)
    ref = _fd_dipole(kappa, 1e-5 / A_L)
    d = dipole_elements(MODEL, kappa)
    np.testing.assert_allclose(np.abs(d[:, 1, 0]), np.abs(ref[:, 1, 0]), rtol=1e-5)
    np.testing.assert_allclose(d, np.conj(np.swapaxes(d, -1, -2)), atol=1e-15)
    np.testing.assert_array_equal(np.diagonal(d, axis1=-2, axis2=-1), 0.0)


def test_berry_connection_vanishes_in_real_gauge():
    kappa = np.linspace(0.0, G, 64, endpoint=False)
    np.testing.assert_allclose(berry_connection(MODEL, kappa), 0.0, atol=1e-10)


def test_berry_connection_gauge_law():
    phi = lambda k: 0.3 * np.sin(A_L * k) + 0.2 * A_L * k
    dphi = lambda k: 0.3 * A_L * np.cos(A_L * k) + 0.2 * A_L
    base = analytic_gauge(MODEL)
    twisted = lambda k: base(k) * np.exp(1j * phi(np.asarray(k)))[..., None, None]
    kappa = np.linspace(0.0, G, 33)
    shift = berry_connection(MODEL, kappa, gauge=twisted) - berry_connection(MODEL, kappa)
    np.testing.assert_allclose(shift, -dphi(kappa)[:, None] * np.ones(2), rtol=1e-7, atol=1e-9)


def test_zone_loop_twist_is_quantized():
    kappa = np.linspace(0.0, G, 128, endpoint=False)
    energies, states, twist = transported_grid_gauge(MODEL, kappa)
    # valence returns to the embedded start, conduction picks up a Zak phase of pi
    np.testing.assert_allclose(twist, [1.0, -1.0], atol=1e-12)
    np.testing.assert_allclose(dagger(states) @ states, np.broadcast_to(np.eye(2), states.shape), atol=1e-13)
    np.testing.assert_allclose(energies, MODEL.band_energies(kappa), atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=0.0, max_value=2 * np.pi), st.floats(min_value=-1e-3, max_value=1e-3))
def test_fused_polarized_kernel_matches_composed_path(ak, field):
    kappa = np.array([ak / A_L])
    h, dh = MODEL.hamiltonian(kappa), MODEL.hamiltonian_derivative(kappa)
    energies, states, ad_states, ad_energies, coeffs = polarized_2x2(h, dh, field)
    ad = eigensystem(h, gauge="analytic")
    heff = effective_hamiltonian(ad.states, ad.energies, dh, field)
    ref = eigensystem(heff, gauge="analytic")
    np.testing.assert_allclose(energies, ref.energies, atol=1e-14)
    np.testing.assert_allclose(ad_energies, ad.energies, atol=1e-14)
    proj = lambda u: np.einsum("...ib,...jb->...bij", u, np.conj(u))
    np.testing.assert_allclose(proj(states), proj(ad.states @ ref.states), atol=1e-12)
    np.testing.assert_allclose(states, ad_states @ coeffs, atol=1e-14)
