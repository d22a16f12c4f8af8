"""Field waveforms A(t), E(t) = -dA/dt (atomic units, vectorized over t)."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from . import units


class Waveform(ABC):
    """Vector potential and electric field pair.

    Outside ``support`` the vector potential is constant and E vanishes
    (the static ramp keeps E = E_dc after its rise, so its support is open).
    """

    @abstractmethod
    def A(self, t):
        ...

    @abstractmethod
    def E(self, t):
        ...

    @property
    @abstractmethod
    def support(self) -> tuple[float, float]:
        ...


class NoField(Waveform):
    def A(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def E(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    @property
    def support(self):
        return (0.0, 0.0)


@dataclass(frozen=True)
class StaticRampParams:
    """Smooth-step switch-on to a constant field (atomic units)."""

    E_dc: float = units.vpm_to_au(1.0)
    T_dc: float = units.fs_to_au(20.0)

    def __post_init__(self):
        if not self.T_dc > 0:
            raise ValueError(f"T_dc must be positive, got {self.T_dc}")


@dataclass(frozen=True)
class PulseParams:
    """cos^4-envelope pulse (atomic units)."""

    E_0: float
    omega_0: float
    T_pulse: float

    def __post_init__(self):
        if not self.T_pulse > 0:
            raise ValueError(f"T_pulse must be positive, got {self.T_pulse}")
        if not self.omega_0 > 0:
            raise ValueError(f"omega_0 must be positive, got {self.omega_0}")


def static_ramp_A(p: StaticRampParams, t):
    t = np.asarray(t, dtype=float)
    s = t / p.T_dc
    ramp = -p.E_dc * p.T_dc * (s**3 - 0.5 * s**4)
    late = -p.E_dc * (t - p.T_dc) - 0.5 * p.E_dc * p.T_dc
    return np.where(t < 0.0, 0.0, np.where(t <= p.T_dc, ramp, late))


def static_ramp_E(p: StaticRampParams, t):
    t = np.asarray(t, dtype=float)
    s = t / p.T_dc
    ramp = p.E_dc * (3.0 * s**2 - 2.0 * s**3)
    return np.where(t < 0.0, 0.0, np.where(t <= p.T_dc, ramp, p.E_dc))


def _pulse_parts(p: PulseParams, t):
    t = np.asarray(t, dtype=float)
    x = t - 0.5 * p.T_pulse
    inside = (t >= 0.0) & (t <= p.T_pulse)
    return t, x, inside


def pulse_A(p: PulseParams, t):
    _, x, inside = _pulse_parts(p, t)
    env = np.cos(np.pi * x / p.T_pulse) ** 4
    a = -(p.E_0 / p.omega_0) * np.sin(p.omega_0 * x) * env
    return np.where(inside, a, 0.0)


def pulse_E(p: PulseParams, t):
    # -dA/dt by the product rule over carrier and envelope
    _, x, inside = _pulse_parts(p, t)
    phase = np.pi * x / p.T_pulse
    c = np.cos(phase)
    env = c**4
    denv = -4.0 * c**3 * np.sin(phase) * np.pi / p.T_pulse
    e = p.E_0 * np.cos(p.omega_0 * x) * env + (p.E_0 / p.omega_0) * np.sin(p.omega_0 * x) * denv
    return np.where(inside, e, 0.0)


class StaticRamp(Waveform):
    def __init__(self, params: StaticRampParams | None = None):
        self.params = params if params is not None else StaticRampParams()

    def A(self, t):
        return static_ramp_A(self.params, t)

    def E(self, t):
        return static_ramp_E(self.params, t)

    @property
    def support(self):
        return (0.0, float("inf"))


class Pulse(Waveform):
    def __init__(self, params: PulseParams):
        self.params = params

    def A(self, t):
        return pulse_A(self.params, t)

    def E(self, t):
        return pulse_E(self.params, t)

    @property
    def support(self):
        return (0.0, self.params.T_pulse)
