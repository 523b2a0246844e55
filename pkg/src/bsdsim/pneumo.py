"""IPAM gas dynamics: isothermal orifice flow between reservoir, muscle and atmosphere.

All pressures are absolute Pa internally; psig appears only at the edges via
:func:`psig_to_pa` / :func:`pa_to_psig`.  Volumes in m^3, masses in kg,
elongations in m.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

from .errors import DomainError, NoSolutionError

PSI = 6894.757  # Pa per psi
P_ATM = 101325.0
RESERVOIR_VOLUME = 3 * 115.53e-6  # three 115.53 cc bottles


def psig_to_pa(p_psig: float, p_atm: float = P_ATM) -> float:
    return p_psig * PSI + p_atm


def pa_to_psig(p_pa: float, p_atm: float = P_ATM) -> float:
    return (p_pa - p_atm) / PSI


@dataclass(frozen=True)
class GasConstants:
    gamma: float = 1.4
    R: float = 287.05  # J/(kg K), dry air
    T: float = 293.15  # K
    P_atm: float = P_ATM

    def __post_init__(self):
        if not self.gamma > 1:
            raise DomainError("gamma must exceed 1")
        if min(self.R, self.T, self.P_atm) <= 0:
            raise DomainError("R, T and P_atm must be positive")

    @property
    def critical_ratio(self) -> float:
        g = self.gamma
        return (2.0 / (g + 1.0)) ** (g / (g - 1.0))

    @property
    def transition_pressure(self) -> float:
        """Upstream pressure (Pa abs) below which exhaust to atmosphere is subsonic."""
        return self.P_atm / self.critical_ratio

    def mass(self, P: float, V: float) -> float:
        return P * V / (self.R * self.T)

    def pressure(self, m: float, V: float) -> float:
        return m * self.R * self.T / V


@dataclass(frozen=True)
class FlowPath:
    Cd: float = 0.8
    A_eff: float = 1.0e-6  # m^2

    def __post_init__(self):
        if not 0 < self.Cd <= 1:
            raise DomainError("Cd must lie in (0, 1]")
        if not self.A_eff > 0:
            raise DomainError("A_eff must be positive")

    @property
    def cda(self) -> float:
        return self.Cd * self.A_eff

    @classmethod
    def from_cda(cls, cda: float, Cd: float = 0.8) -> "FlowPath":
        return cls(Cd=Cd, A_eff=cda / Cd)


@dataclass(frozen=True)
class IpamGeometry:
    radius: float = 6.25e-3  # 12.5 mm inner diameter
    rest_length: float = 0.200

    def volume(self, elongation: float) -> float:
        return ipam_volume(self.radius, self.rest_length, elongation)


@dataclass(frozen=True)
class Valves:
    v1_inflate: bool = False
    v2_release: bool = False
    pump_on: bool = False


@dataclass(frozen=True)
class PneumaticState:
    P: float  # IPAM pressure, Pa abs
    m: float  # IPAM gas mass, kg
    V: float  # IPAM volume (both muscles), m^3
    P_res: float  # reservoir pressure, Pa abs
    valves: Valves = field(default_factory=Valves)
    V_res: float = RESERVOIR_VOLUME

    @classmethod
    def at(cls, P: float, V: float, P_res: float, gas: GasConstants | None = None,
           V_res: float = RESERVOIR_VOLUME, valves: Valves | None = None) -> "PneumaticState":
        """State with the IPAM mass fixed by the ideal gas law."""
        gas = gas or GasConstants()
        return cls(P=P, m=gas.mass(P, V), V=V, P_res=P_res, valves=valves or Valves(), V_res=V_res)

    def m_res(self, gas: GasConstants) -> float:
        return gas.mass(self.P_res, self.V_res)


def ipam_volume(radius: float, rest_length: float, elongation: float) -> float:
    """Internal volume of the two IPAM tubes, 2*pi*r^2*L."""
    if not radius > 0:
        raise DomainError("radius must be positive")
    length = rest_length + elongation
    if not length > 0:
        raise DomainError(f"total IPAM length must be positive, got {length}")
    return 2.0 * math.pi * radius**2 * length


def flow_regime(P: float, gas: GasConstants) -> str:
    if P < gas.P_atm:
        raise DomainError(f"pressure {P} Pa is below atmospheric; no outflow regime")
    return "choked" if gas.P_atm / P <= gas.critical_ratio else "subsonic"


def orifice_mass_flow(P_up: float, P_down: float, path: FlowPath, gas: GasConstants) -> float:
    """Isothermal compressible flow through an equivalent orifice, kg/s (>= 0)."""
    if P_up <= P_down:
        return 0.0
    g, RT = gas.gamma, gas.R * gas.T
    ratio = P_down / P_up
    if ratio <= gas.critical_ratio:
        return path.cda * P_up * math.sqrt(g / RT) * (2.0 / (g + 1.0)) ** ((g + 1.0) / (2.0 * (g - 1.0)))
    bracket = ratio ** (2.0 / g) - ratio ** ((g + 1.0) / g)
    return path.cda * P_up * math.sqrt(2.0 * g / (RT * (g - 1.0)) * max(bracket, 0.0))


def mass_flow_out(P: float, path: FlowPath, gas: GasConstants) -> float:
    flow_regime(P, gas)  # domain check
    return orifice_mass_flow(P, gas.P_atm, path, gas)


def step_deflate(
    state: PneumaticState,
    elongation_now: float,
    path: FlowPath,
    gas: GasConstants,
    dt: float,
    geometry: IpamGeometry = IpamGeometry(),
) -> PneumaticState:
    """One forward-Euler exhaust step through the release valve."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    mdot = orifice_mass_flow(state.P, gas.P_atm, path, gas)
    V = geometry.volume(elongation_now)
    # open exhaust: the muscle never drops below ambient
    m_floor = gas.mass(gas.P_atm, V)
    if state.m - mdot * dt <= m_floor:
        return replace(state, m=m_floor, V=V, P=gas.P_atm)
    m = state.m - mdot * dt
    return replace(state, m=m, V=V, P=gas.pressure(m, V))


def step_inflate(
    state: PneumaticState,
    elongation_now: float,
    path_in: FlowPath,
    gas: GasConstants,
    dt: float,
    geometry: IpamGeometry = IpamGeometry(),
) -> PneumaticState:
    """One forward-Euler step moving gas from the reservoir into the IPAM."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    if state.P_res <= state.P:
        return step_hold(state, elongation_now, gas, geometry)
    V = geometry.volume(elongation_now)
    m_res = state.m_res(gas)
    mdot = orifice_mass_flow(state.P_res, state.P, path_in, gas)
    dm = mdot * dt
    # do not overshoot pressure equalization within one step
    dm_eq = (m_res * V - state.m * state.V_res) / (state.V_res + V)
    dm = min(dm, max(dm_eq, 0.0))
    m = state.m + dm
    m_res -= dm
    return replace(state, m=m, V=V, P=gas.pressure(m, V), P_res=gas.pressure(m_res, state.V_res))


def step_hold(state: PneumaticState, elongation_now: float, gas: GasConstants,
              geometry: IpamGeometry = IpamGeometry()) -> PneumaticState:
    """Both valves closed: fixed mass, pressure follows the volume."""
    V = geometry.volume(elongation_now)
    if V == state.V:
        return state
    return replace(state, V=V, P=gas.pressure(state.m, V))


def step_pump(state: PneumaticState, rate: float, gas: GasConstants, dt: float) -> PneumaticState:
    """Add ``rate`` kg/s of air to the reservoir for ``dt`` seconds."""
    m_res = state.m_res(gas) + rate * dt
    return replace(state, P_res=gas.pressure(m_res, state.V_res))


@dataclass
class PneumaticStepper:
    """Owns one device's pneumatic state and advances it under valve commands."""

    state: PneumaticState
    path_out: FlowPath
    path_in: FlowPath
    gas: GasConstants = GasConstants()
    geometry: IpamGeometry = IpamGeometry()
    pump_rate: float = 6.0e-5  # kg/s with the pump running
    exhausted: float = 0.0  # cumulative mass vented, kg

    def step(self, valves: Valves, elongation: float, dt: float) -> PneumaticState:
        if valves.v1_inflate and valves.v2_release:
            raise DomainError("inflate and release valves may not open together")
        s = replace(self.state, valves=valves)
        if valves.v2_release:
            m_before = s.m
            s = step_deflate(s, elongation, self.path_out, self.gas, dt, self.geometry)
            self.exhausted += max(m_before - s.m, 0.0)
        elif valves.v1_inflate:
            s = step_inflate(s, elongation, self.path_in, self.gas, dt, self.geometry)
        else:
            s = step_hold(s, elongation, self.gas, self.geometry)
        if valves.pump_on:
            s = step_pump(s, self.pump_rate, self.gas, dt)
        self.state = s
        return s


@dataclass(frozen=True)
class DeflationTarget:
    P_start: float  # Pa abs
    P_end: float  # Pa abs
    duration: float  # s


def time_to_pressure(
    cda: float,
    P_start: float,
    P_end: float,
    gas: GasConstants,
    volume_trace: Callable[[float], float],
    dt: float = 1e-3,
    t_max: float = 60.0,
) -> float:
    """Time for an exhausting IPAM to fall from ``P_start`` to ``P_end``.

    The crossing is located inside the final step by linear interpolation, so
    the result varies continuously with ``cda``.  Returns ``inf`` if the
    target is not reached by ``t_max``.
    """
    path = FlowPath(Cd=1.0, A_eff=cda)
    V0 = volume_trace(0.0)
    m = gas.mass(P_start, V0)
    P = P_start
    t = 0.0
    while t < t_max:
        if P <= P_end:
            return t
        mdot = orifice_mass_flow(P, gas.P_atm, path, gas)
        V = volume_trace(t + dt)
        m_next = m - mdot * dt
        P_next = gas.pressure(m_next, V)
        if P_next <= P_end:
            return t + dt * (P - P_end) / (P - P_next)
        m_floor = gas.mass(gas.P_atm, V)
        m = max(m_next, m_floor)
        P = gas.pressure(m, V)
        t += dt
    return math.inf


def calibrate_orifice(
    target: DeflationTarget,
    gas: GasConstants,
    volume_trace: Callable[[float], float],
    Cd: float = 0.8,
    cda_bounds: tuple[float, float] = (1e-9, 1e-4),
    dt: float = 1e-3,
    rtol: float = 1e-4,
) -> FlowPath:
    """Find the lumped Cd*A_eff that vents ``P_start -> P_end`` in ``duration``.

    Bisection on log(Cd*A_eff); the result is split as ``Cd`` times an area.
    """
    if not target.P_start > target.P_end >= gas.P_atm:
        raise DomainError("need P_start > P_end >= P_atm")
    if not target.duration > 0:
        raise DomainError("duration must be positive")

    def t_of(cda):
        return time_to_pressure(cda, target.P_start, target.P_end, gas, volume_trace, dt,
                                t_max=target.duration * 4)

    lo, hi = cda_bounds
    if t_of(hi) > target.duration or t_of(lo) < target.duration:
        raise NoSolutionError(
            f"target {target} not bracketed by Cd*A_eff in [{lo:.3g}, {hi:.3g}] m^2"
        )
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if t_of(mid) > target.duration:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1.0 < rtol:
            break
    return FlowPath.from_cda(math.sqrt(lo * hi), Cd=Cd)
