"""Unit conversions between lab units and Hartree atomic units.

Everything inside the package works in atomic units (hbar = e = m_e = 1).
Only config parsing and CSV output touch eV, fs, Angstrom and V/m.
CODATA 2018 values.
"""

HARTREE_EV = 27.211386245988
BOHR_ANGSTROM = 0.529177210903
AU_TIME_FS = 2.4188843265857e-2
AU_FIELD_VPM = 5.14220674763e11
KB_EV_PER_K = 8.617333262e-5


def ev_to_au(x):
    return x / HARTREE_EV


def au_to_ev(x):
    return x * HARTREE_EV


def angstrom_to_au(x):
    return x / BOHR_ANGSTROM


def au_to_angstrom(x):
    return x * BOHR_ANGSTROM


def fs_to_au(x):
    return x / AU_TIME_FS


def au_to_fs(x):
    return x * AU_TIME_FS


def vpm_to_au(x):
    return x / AU_FIELD_VPM


def mvcm_to_au(x):
    # 1 MV/cm = 1e8 V/m
    return x * 1e8 / AU_FIELD_VPM
