import logging

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import rk4_pulse

from driven_lattice_sim import units
from driven_lattice_sim.bandmodel import DimerChain
from driven_lattice_sim.bases import BasisKind, reference_states
from driven_lattice_sim.dynamics import (
    NO_RELAXATION, AdiabaticFrame, KGrid, RelaxationParams, SBEGrid, density_diagnostics, expm_hermitian,
    fermi_dirac, frame_master_step, ground_state_density, ground_state_vector, master_step, relaxation_apply, sbe_step,
    tdse_step,
)
from driven_lattice_sim.errors import GridTooCoarse
from driven_lattice_sim.fields import NoField, Pulse, PulseParams, StaticRamp, StaticRampParams
from driven_lattice_sim.scenarios import (
    parse_config, run_length_chunk, run_master_chunk, run_tdse_chunk, sbe_mismatch,
)
from driven_lattice_sim.spectral import dagger, eigensystem

MODEL = DimerChain()
A_L = MODEL.lattice_constant
G = 2.0 * np.pi / A_L
K = np.linspace(0.0, G, 8, endpoint=False)
FIG2 = Pulse(PulseParams(units.mvcm_to_au(1.0), units.ev_to_au(0.1), units.fs_to_au(100.0)))
STRONG = Pulse(PulseParams(units.mvcm_to_au(4.0), units.ev_to_au(0.1), units.fs_to_au(100.0)))
RELAX = RelaxationParams()


def random_density(rng, shape=()):
    m = rng.normal(size=shape + (2, 2)) + 1j * rng.normal(size=shape + (2, 2))
    rho = m @ dagger(m)
    return rho / np.trace(rho, axis1=-2, axis2=-1)[..., None, None]


def test_kgrid():
    g = KGrid(4, A_L)
    np.testing.assert_allclose(g.points, [0, 0.25 * G, 0.5 * G, 0.75 * G])
    assert g.spacing == pytest.approx(G / 4)
    with pytest.raises(ValueError):
        KGrid(1, A_L)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(0.01, 50))
def test_closed_form_exponential_matches_scipy(a, d, br, bi, dt):
    h = np.array([[a, br + 1j * bi], [br - 1j * bi, d]])
    np.testing.assert_allclose(expm_hermitian(h, dt), scipy.linalg.expm(-1j * h * dt), atol=1e-12)


def test_stationary_state_without_field():
    es = eigensystem(MODEL.hamiltonian(K))
    psi = es.states[:, :, 0]
    dt = 0.7
    out = tdse_step(psi, K, 3.0, dt, MODEL, NoField())
    np.testing.assert_allclose(out, psi * np.exp(-1j * es.energies[:, :1] * dt), atol=1e-14)
    pops = np.abs(np.einsum("kib,ki->kb", np.conj(es.states), out)) ** 2
    np.testing.assert_allclose(pops, [[1.0, 0.0]] * len(K), atol=1e-14)


@pytest.mark.parametrize("method", ["midpoint", "magnus4"])
def test_norm_preserved_over_random_steps(method):
    # 100 k-points x 1000 steps of random length under a strong pulse
    rng = np.random.default_rng(1)
    k = rng.uniform(0, G, 100)
    psi = ground_state_vector(MODEL, k)
    t = 0.0
    worst = 0.0
    for dt in rng.uniform(0.01, 5.0, 1000):
        new = tdse_step(psi, k, t, dt, MODEL, STRONG, method)
        worst = max(worst, np.max(np.abs(np.linalg.norm(new, axis=-1) - np.linalg.norm(psi, axis=-1))))
        psi, t = new, t + dt
    assert worst < 1e-14
    assert np.max(np.abs(np.linalg.norm(psi, axis=-1) - 1.0)) < 1e-13


def test_unknown_tdse_method():
    with pytest.raises(ValueError):
        tdse_step(ground_state_vector(MODEL, K), K, 0.0, 0.1, MODEL, FIG2, "euler")


def test_tdse_matches_fine_rk4_oracle_over_pulse():
    p = FIG2.params
    n = int(round(p.T_pulse / 0.1))
    dt = p.T_pulse / n
    k = np.array([0.1, 0.294])
    psi0 = ground_state_vector(MODEL, k)
    mid, mag = psi0.copy(), psi0.copy()
    for i in range(n):
        mid = tdse_step(mid, k, i * dt, dt, MODEL, FIG2)
        mag = tdse_step(mag, k, i * dt, dt, MODEL, FIG2, "magnus4")
    ref = np.array([rk4_pulse(psi0[j], k[j], p.E_0, p.omega_0, p.T_pulse, dt / 100, 100 * n)
                    for j in range(len(k))])
    bloch = eigensystem(MODEL.hamiltonian(k)).states
    pops = lambda s: np.abs(np.einsum("kib,ki->kb", np.conj(bloch), s)) ** 2
    fidelity = lambda s: np.abs(np.einsum("ki,ki->k", np.conj(ref), s)) ** 2
    np.testing.assert_allclose(pops(mid), pops(ref), rtol=0, atol=1e-8)
    np.testing.assert_allclose(fidelity(mid), 1.0, rtol=0, atol=1e-8)
    # the fourth-order integrator also gets the global phase right
    np.testing.assert_allclose(mag, ref, rtol=0, atol=1e-8)


def test_fermi_dirac_limits():
    assert fermi_dirac(0.3, mu=0.3, Te=0.01) == 0.5
    assert fermi_dirac(0.3, mu=0.3, Te=0.0) == 0.5
    e = MODEL.band_energies(K)
    np.testing.assert_array_equal(fermi_dirac(e[:, 0]), 1.0)
    np.testing.assert_array_equal(fermi_dirac(e[:, 1]), 0.0)
    assert fermi_dirac(-1e4, Te=1e-3) == 1.0 and fermi_dirac(1e4, Te=1e-3) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=20), st.floats(0, 0.1), st.floats(-0.5, 0.5))
def test_fermi_dirac_non_increasing(energies, Te, mu):
    e = np.sort(np.array(energies))
    f = fermi_dirac(e, mu, Te)
    assert np.all(np.diff(f) <= 0.0)
    assert np.all((f >= 0) & (f <= 1))


def test_relaxation_fixed_point_and_coherence_decay():
    states, energies = reference_states(BasisKind.POLARIZED, MODEL, K, 0.01, 1e-3)
    p = RelaxationParams(mu=0.0, Te=0.05)
    f = fermi_dirac(energies, p.mu, p.Te)
    rho = np.einsum("kib,kb,kjb->kij", states, f, np.conj(states))
    np.testing.assert_allclose(relaxation_apply(rho, (states, energies), p), 0.0, atol=1e-15)
    c = 0.2 - 0.1j
    coh = np.zeros((len(K), 2, 2), dtype=complex)
    coh[:, 1, 0], coh[:, 0, 1] = c, np.conj(c)
    rho = states @ coh @ dagger(states) + np.einsum("kib,kb,kjb->kij", states, f, np.conj(states))
    d = dagger(states) @ relaxation_apply(rho, (states, energies), p) @ states
    np.testing.assert_allclose(d[:, 1, 0], -c / p.T2, rtol=1e-12)
    np.testing.assert_allclose(d[:, 0, 0], 0.0, atol=1e-15)


def test_relaxation_trace_identity():
    rng = np.random.default_rng(3)
    rho = 1.3 * random_density(rng, (len(K),))
    p = RelaxationParams(T1=500.0, T2=300.0, mu=0.02, Te=0.1)
    states, energies = reference_states(BasisKind.HOUSTON, MODEL, K, 0.2, 0.0)
    d = relaxation_apply(rho, (states, energies), p)
    np.testing.assert_allclose(d, dagger(d), atol=1e-16)
    expected = -(np.trace(rho, axis1=1, axis2=2).real - fermi_dirac(energies, p.mu, p.Te).sum(-1)) / p.T1
    np.testing.assert_allclose(np.trace(d, axis1=1, axis2=2), expected, rtol=1e-12)
    ground = ground_state_density(MODEL, K)
    bloch = reference_states(BasisKind.BLOCH, MODEL, K, 0.0, 0.0)
    assert np.max(np.abs(np.trace(relaxation_apply(ground, bloch, RELAX), axis1=1, axis2=2))) < 1e-17


def test_master_without_relaxation_matches_tdse():
    t0, dt = units.fs_to_au(45.0), 0.02
    n = int(round(units.fs_to_au(5.0) / dt))
    psi = ground_state_vector(MODEL, K)
    rho = ground_state_density(MODEL, K)
    for i in range(n):
        t = t0 + i * dt
        psi = tdse_step(psi, K, t, dt, MODEL, STRONG, "magnus4")
        rho = master_step(rho, K, t, dt, MODEL, STRONG, BasisKind.HOUSTON, NO_RELAXATION)
    np.testing.assert_allclose(rho, np.einsum("ki,kj->kij", psi, np.conj(psi)), rtol=0, atol=1e-10)


@pytest.mark.parametrize("kind", list(BasisKind))
def test_frame_master_matches_orbital_master(kind):
    dt = 0.1
    frame = AdiabaticFrame(MODEL, K, STRONG)
    rho_f = frame.initial_density()
    rho = ground_state_density(MODEL, K)
    for i in range(int(round(units.fs_to_au(10.0) / dt))):
        rho = master_step(rho, K, i * dt, dt, MODEL, STRONG, kind, RELAX)
        rho_f = frame_master_step(rho_f, frame, dt, kind, RELAX)
    np.testing.assert_allclose(frame.lab_density(rho_f), rho, rtol=0, atol=1e-13)


def test_length_engine_matches_velocity_tdse():
    out = np.arange(0, 2001, 200)
    kinds = list(BasisKind)
    a = run_length_chunk(MODEL, STRONG, K, 2000, 0.2, out, kinds, "magnus4")
    b = run_tdse_chunk(MODEL, STRONG, K, 2000, 0.2, out, kinds, "magnus4")
    for kind in kinds:
        np.testing.assert_allclose(a["pop"][kind], b["pop"][kind], rtol=0, atol=1e-15)
    np.testing.assert_allclose(a["J"], b["J"], rtol=0, atol=1e-13)


def test_frame_propagators_resolve_tiny_populations():
    # populations near 1e-20 sit far below the rounding of the O(1) valence
    # amplitude; the two frame propagators use different integrators
    ramp = StaticRamp(StaticRampParams(units.vpm_to_au(1.0), units.fs_to_au(20.0)))
    n = int(units.fs_to_au(30.0) / 0.1)
    out = np.array([n])
    a = run_length_chunk(MODEL, ramp, K, n, 0.1, out, [BasisKind.HOUSTON])
    b = run_master_chunk(MODEL, ramp, K, n, 0.1, out, [BasisKind.HOUSTON], BasisKind.HOUSTON, NO_RELAXATION)
    na, nb = a["pop"][BasisKind.HOUSTON], b["pop"][BasisKind.HOUSTON]
    assert 1e-21 < np.max(na) < 1e-18
    np.testing.assert_allclose(na, nb, rtol=1e-6)


@pytest.mark.parametrize("kind", list(BasisKind))
def test_ground_state_is_stationary_without_field(kind):
    rho0 = ground_state_density(MODEL, K)
    rho = rho0.copy()
    for i in range(200):
        rho = master_step(rho, K, i * 0.5, 0.5, MODEL, NoField(), kind, RELAX)
    np.testing.assert_allclose(rho, rho0, atol=1e-14)


def test_population_relaxes_with_T1():
    es = eigensystem(MODEL.hamiltonian(K))
    c = es.states[:, :, 1]
    rho = np.einsum("ki,kj->kij", c, np.conj(c))
    dt = 1.0
    times, occ = [], []
    for i in range(int(units.fs_to_au(60.0))):
        rho = master_step(rho, K, i * dt, dt, MODEL, NoField(), BasisKind.BLOCH, RELAX)
        if i % 50 == 49:
            times.append((i + 1) * dt)
            occ.append(np.einsum("ki,kij,kj->k", np.conj(c), rho, c).real[0])
    slope = np.polyfit(times, np.log(occ), 1)[0]
    assert units.au_to_fs(-1.0 / slope) == pytest.approx(20.0, rel=1e-2)


def test_numba_and_numpy_backends_agree():
    rng = np.random.default_rng(7)
    rho = random_density(rng, (len(K),))
    for kind in BasisKind:
        a = master_step(rho, K, 1000.0, 0.3, MODEL, STRONG, kind, RELAX, backend="numba")
        b = master_step(rho, K, 1000.0, 0.3, MODEL, STRONG, kind, RELAX, backend="numpy")
        np.testing.assert_allclose(a, b, atol=1e-15)
    with pytest.raises(ValueError):
        master_step(rho, K, 0.0, 0.1, MODEL, STRONG, BasisKind.BLOCH, RELAX, backend="fortran")


def test_master_trace_and_hermiticity():
    ramp = StaticRamp(StaticRampParams())
    rho = ground_state_density(MODEL, K)
    tr0 = np.trace(rho, axis1=1, axis2=2).real
    for i in range(1000):
        rho = master_step(rho, K, i * 0.1, 0.1, MODEL, ramp, BasisKind.POLARIZED, RELAX)
    assert np.max(np.abs(rho - dagger(rho))) == 0.0
    assert np.max(np.abs(np.trace(rho, axis1=1, axis2=2).real - tr0)) < 1e-10


def test_sbe_decoupled_limit():
    grid = SBEGrid(MODEL, KGrid(16, A_L))
    rho = grid.equilibrium(RELAX)
    c = 0.1 + 0.05j
    rho[:, 1, 0], rho[:, 0, 1] = c, np.conj(c)
    dt, n = 0.05, 2000
    for i in range(n):
        rho = sbe_step(rho, i * dt, dt, grid, NoField(), RELAX)
    t = n * dt
    np.testing.assert_allclose(rho[:, 0, 0].real, 1.0, atol=1e-14)
    np.testing.assert_allclose(rho[:, 1, 1].real, 0.0, atol=1e-14)
    gap = grid.energies[:, 1] - grid.energies[:, 0]
    np.testing.assert_allclose(rho[:, 1, 0], c * np.exp(-1j * gap * t - t / RELAX.T2), rtol=1e-8)


@pytest.mark.parametrize("order", [2, 4, 6])
def test_stencil_convergence_order(order):
    errs = []
    for n in (32, 64):
        sg = SBEGrid(MODEL, KGrid(n, A_L), order)
        k = sg.grid.points
        rho = np.zeros((n, 2, 2), dtype=complex)
        rho[:, 0, 0] = np.sin(A_L * k)
        errs.append(np.max(np.abs(sg.k_derivative(rho)[:, 0, 0] - A_L * np.cos(A_L * k))))
    assert errs[0] / errs[1] == pytest.approx(2.0**order, rel=0.05)


def test_sbe_courant_guard():
    grid = SBEGrid(MODEL, KGrid(64, A_L))
    ramp = StaticRamp(StaticRampParams(E_dc=1.0, T_dc=1.0))
    with pytest.raises(GridTooCoarse):
        sbe_step(grid.equilibrium(RELAX), 5.0, 0.1, grid, ramp, RELAX)


def test_sbe_converges_to_master_at_strong_field():
    # 1e8 V/m makes the finite-difference error visible above rounding
    cfg = parse_config("", preset="validate_sbe", overrides=[
        "field.Edc_Vpm=1e8", "field.Tdc_fs=5", "grid.t_end_fs=8"])
    coarse, _, _ = sbe_mismatch(cfg, 256)
    fine, _, _ = sbe_mismatch(cfg, 512)
    assert fine < 1e-5
    assert coarse / fine >= 8.0


def test_density_diagnostics_flags_negative_eigenvalue(caplog):
    bad = np.array([[[1.1, 0.0], [0.0, -0.1]]], dtype=complex)
    with caplog.at_level(logging.WARNING):
        herm, trace, min_eig = density_diagnostics(bad)
    assert min_eig == pytest.approx(-0.1)
    assert "below" in caplog.text
    np.testing.assert_allclose(trace, [1.0])
