"""Variable-elastic actuator: IPAM force surface plus clutched band, and bench scenarios.

Elongation is in mm and IPAM pressure in psi gauge at this level; the pneumatic
layer underneath works in SI.  Traces are pandas DataFrames with the columns
listed in :data:`TRACE_COLUMNS`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .band import BandModel, ClutchedBand, passive_force
from .errors import ConfigError, DomainError, FitError
from .pneumo import (
    FlowPath,
    GasConstants,
    IpamGeometry,
    PneumaticState,
    pa_to_psig,
    psig_to_pa,
    step_deflate,
    step_hold,
)

TRACE_COLUMNS = [
    "t_s", "elongation_mm", "force_N", "pressure_psig", "clutch", "phase",
    "force_passive_N", "force_active_N",
]

ELONGATION_RANGE = (0.0, 120.0)
PRESSURE_RANGE = (0.0, 50.0)


@dataclass(frozen=True)
class ForceSurface:
    """F = a + b*l + c*p + d*l^2 + e*p^2 + f*l*p  (N, mm, psig)."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d, self.e, self.f])

    def raw(self, elongation, pressure):
        l, p = elongation, pressure
        return self.a + self.b * l + self.c * p + self.d * l * l + self.e * p * p + self.f * l * p


# bench fit for the two-IPAM pair
PAPER_SURFACE = ForceSurface(a=-1.4318, b=1.2213, c=0.0100, d=0.0076, e=0.0022, f=-0.0348)


def active_force(surface: ForceSurface, elongation: float, pressure: float) -> float:
    """Combined IPAM contraction force, clamped at zero (a muscle cannot push)."""
    if not (ELONGATION_RANGE[0] <= elongation <= ELONGATION_RANGE[1]
            and PRESSURE_RANGE[0] <= pressure <= PRESSURE_RANGE[1]):
        warnings.warn(
            f"force surface evaluated outside its fitted domain at l={elongation:.3g} mm, "
            f"p={pressure:.3g} psig",
            RuntimeWarning,
            stacklevel=2,
        )
    return max(0.0, float(surface.raw(elongation, pressure)))


def _active_force_quiet(surface, elongation, pressure):
    return max(0.0, float(surface.raw(elongation, pressure)))


@dataclass(frozen=True)
class SurfaceFit:
    surface: ForceSurface
    rms: float
    n_samples: int


def fit_force_surface(samples) -> SurfaceFit:
    """Least-squares fit of the six quadratic coefficients to (l, p, F) samples."""
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[1] != 3:
        raise FitError("samples must be a sequence of (elongation, pressure, force)")
    if len(data) < 6:
        raise FitError(f"need at least 6 samples, got {len(data)}")
    l, p, F = data.T
    X = np.column_stack([np.ones_like(l), l, p, l * l, p * p, l * p])
    coef, _, rank, _ = np.linalg.lstsq(X, F, rcond=None)
    if rank < 6:
        raise FitError(f"design matrix is rank deficient (rank {rank})")
    rms = float(np.sqrt(np.mean((X @ coef - F) ** 2)))
    return SurfaceFit(ForceSurface(*map(float, coef)), rms, len(data))


@dataclass(frozen=True)
class DeviceConfig:
    band_profile: str = "measured"  # "measured" or "design"
    k_measured_disengaged: float = 0.875
    k_measured_engaged: float = 1.313
    k_design_disengaged: float = 0.8
    k_design_engaged: float = 1.6
    loss_factor: float = 0.0
    clutch_latency_ms: float = 300.0
    surface: ForceSurface = PAPER_SURFACE
    ipam: IpamGeometry = IpamGeometry()
    exhaust: FlowPath = FlowPath(Cd=0.8, A_eff=1.0533e-6)
    inflow: FlowPath = FlowPath(Cd=0.8, A_eff=1.0533e-6)
    gas: GasConstants = GasConstants()
    reservoir_psig: float = 90.0
    pump_rate: float = 6.0e-5
    inflate_psig: float = 50.0

    def band_model(self) -> BandModel:
        if self.band_profile == "measured":
            k_dis, k_eng = self.k_measured_disengaged, self.k_measured_engaged
        elif self.band_profile == "design":
            k_dis, k_eng = self.k_design_disengaged, self.k_design_engaged
        else:
            raise ConfigError(f"unknown band profile {self.band_profile!r}")
        return BandModel.from_stiffnesses(
            k_dis, k_eng, clutch_latency=self.clutch_latency_ms, loss_factor=self.loss_factor
        )

    def pneumatic_state(self, p_psig: float, elongation_mm: float = 0.0) -> PneumaticState:
        V = self.ipam.volume(elongation_mm / 1000.0)
        return PneumaticState.at(
            psig_to_pa(p_psig, self.gas.P_atm), V,
            psig_to_pa(self.reservoir_psig, self.gas.P_atm), self.gas,
        )


@dataclass
class DeviceState:
    elongation: float  # mm
    elongation_rate: float  # mm/min
    band: ClutchedBand | BandModel
    pneumo: PneumaticState
    slack_offset: float = 0.0  # mm of rest-length shift from the origami muscle
    brake_engaged: bool = False

    def __post_init__(self):
        if self.elongation < 0 or self.slack_offset < 0:
            raise DomainError("elongation and slack_offset must be non-negative")

    def set_slack(self, offset: float) -> None:
        if self.brake_engaged:
            raise DomainError("slack offset is frozen while the brake is engaged")
        if offset < 0:
            raise DomainError("slack offset must be non-negative")
        self.slack_offset = offset

    @property
    def effective_elongation(self) -> float:
        return max(0.0, self.elongation - self.slack_offset)


def force_components(state: DeviceState, surface: ForceSurface,
                     gas: GasConstants = GasConstants()) -> tuple[float, float]:
    """Return ``(passive, active)`` force in N at the state's effective elongation."""
    l_eff = state.effective_elongation
    unloading = state.elongation_rate < 0
    if isinstance(state.band, ClutchedBand):
        f_passive = state.band.force(l_eff, unloading)
    else:
        f_passive = passive_force(state.band, l_eff, unloading)
    p = max(0.0, pa_to_psig(state.pneumo.P, gas.P_atm))
    return f_passive, _active_force_quiet(surface, l_eff, p)


def total_force(state: DeviceState, surface: ForceSurface,
                gas: GasConstants = GasConstants()) -> float:
    f_passive, f_active = force_components(state, surface, gas)
    return f_passive + f_active


@dataclass(frozen=True)
class QuasiStaticScenario:
    peak: float = 110.0  # mm
    rate: float = 60.0  # mm/min
    hold: float = 2.0  # s at peak
    clutch_engage_at: float | str = "never"  # mm, "never" or "always"
    clutch_disengage_at: float | None = None  # mm on the return; defaults to the engage point
    pressure_hold: float = 50.0  # psig
    deflate_target: float | None = None  # psig, vent at peak and hold there while unloading
    dt: float = 0.01


@dataclass(frozen=True)
class DynamicScenario:
    peak: float = 100.0
    rate: float = 2000.0
    deflate_delay: float = 300.0  # ms after return onset
    deflate_target: float = 0.0  # psig
    inflate_psig: float = 50.0
    hold: float = 0.0
    dt: float = 1e-3


def triangle_profile(peak: float, rate: float, hold: float, dt: float):
    """Elongation ramp up, hold, ramp down.  Returns ``(t, l, phase)``."""
    if not peak > 0 or not rate > 0:
        raise ConfigError("peak and rate must be positive")
    speed = rate / 60.0  # mm/s
    t_ramp = peak / speed
    t_total = 2 * t_ramp + hold
    n = int(round(t_total / dt))
    t = np.arange(n + 1) * dt
    l = np.where(t <= t_ramp, speed * t,
                 np.where(t <= t_ramp + hold, peak, peak - speed * (t - t_ramp - hold)))
    l = np.clip(l, 0.0, peak)
    phase = np.where(t < t_ramp, "load", np.where(t < t_ramp + hold, "hold", "unload"))
    return t, l, phase


def _resolve_clutch(sc: QuasiStaticScenario):
    engage = sc.clutch_engage_at
    if engage in ("never", None):
        return False, None, None
    if engage == "always":
        return True, None, None
    engage = float(engage)
    disengage = sc.clutch_disengage_at if sc.clutch_disengage_at is not None else engage
    for v in (engage, disengage):
        if not 0.0 <= v <= sc.peak:
            raise ConfigError(f"clutch schedule point {v} mm outside [0, {sc.peak}]")
    return False, engage, float(disengage)


def simulate_quasistatic(config: DeviceConfig, scenario: QuasiStaticScenario) -> pd.DataFrame:
    sc = scenario
    initially_engaged, engage_at, disengage_at = _resolve_clutch(sc)
    t, l, phase = triangle_profile(sc.peak, sc.rate, sc.hold, sc.dt)
    band = ClutchedBand(config.band_model(), engaged=initially_engaged)
    gas = config.gas
    pneu = config.pneumatic_state(sc.pressure_hold, 0.0)
    p_target = None if sc.deflate_target is None else psig_to_pa(sc.deflate_target, gas.P_atm)
    venting = False
    engage_sent = disengage_sent = False

    rows = []
    for i in range(len(t)):
        ti, li, ph = t[i], l[i], phase[i]
        if engage_at is not None:
            if ph == "load" and not engage_sent and li >= engage_at:
                band.command(True, ti)
                engage_sent = True
            if ph == "unload" and engage_sent and not disengage_sent and li <= disengage_at:
                band.command(False, ti)
                disengage_sent = True
        clutch = band.update(ti, li)

        if p_target is not None and ph != "load" and not venting and pneu.P > p_target:
            venting = True
        if venting:
            pneu = step_deflate(pneu, li / 1000.0, config.exhaust, gas, sc.dt, config.ipam)
            if pneu.P <= p_target:
                venting = False
                sc_p = p_target
                pneu = PneumaticState.at(sc_p, pneu.V, pneu.P_res, gas)
        elif p_target is not None and ph == "unload":
            pneu = PneumaticState.at(max(p_target, gas.P_atm), config.ipam.volume(li / 1000.0),
                                     pneu.P_res, gas)
        else:
            # regulated at the hold pressure
            pneu = PneumaticState.at(pneu.P, config.ipam.volume(li / 1000.0), pneu.P_res, gas)

        rate = 0.0 if ph == "hold" else (sc.rate if ph == "load" else -sc.rate)
        state = DeviceState(elongation=li, elongation_rate=rate, band=band, pneumo=pneu)
        f_p, f_a = force_components(state, config.surface, gas)
        rows.append((ti, li, f_p + f_a, pa_to_psig(pneu.P, gas.P_atm), clutch, ph, f_p, f_a))
    df = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    df.attrs["scenario"] = "quasistatic"
    return df


def simulate_dynamic(config: DeviceConfig, scenario: DynamicScenario) -> pd.DataFrame:
    """Fast elongation cycle with IPAM venting after a detection delay on the return."""
    sc = scenario
    gas = config.gas
    t, l, phase = triangle_profile(sc.peak, sc.rate, sc.hold, sc.dt)
    t_return = sc.peak / (sc.rate / 60.0) + sc.hold
    t_vent = t_return + sc.deflate_delay / 1000.0
    p_target = psig_to_pa(sc.deflate_target, gas.P_atm)
    band = ClutchedBand(config.band_model())
    pneu = config.pneumatic_state(sc.inflate_psig, 0.0)
    p_inflate = psig_to_pa(sc.inflate_psig, gas.P_atm)

    rows = []
    for i in range(len(t)):
        ti, li, ph = t[i], l[i], phase[i]
        x = li / 1000.0
        if ti < t_vent - 1e-12:
            # regulated at the inflation pressure until the vent opens
            pneu = PneumaticState.at(p_inflate, config.ipam.volume(x), pneu.P_res, gas)
        elif ti >= t_vent - 1e-12 and pneu.P > p_target:
            pneu = step_deflate(pneu, x, config.exhaust, gas, sc.dt, config.ipam)
        else:
            pneu = step_hold(pneu, x, gas, config.ipam)
        rate = 0.0 if ph == "hold" else (sc.rate if ph == "load" else -sc.rate)
        state = DeviceState(elongation=li, elongation_rate=rate, band=band, pneumo=pneu)
        f_p, f_a = force_components(state, config.surface, gas)
        rows.append((ti, li, f_p + f_a, pa_to_psig(pneu.P, gas.P_atm), False, ph, f_p, f_a))
    df = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    df.attrs.update(scenario="dynamic", t_return=t_return, t_vent=t_vent,
                    return_duration=t[-1] - t_return)
    df.attrs["peak_active_return_percent"] = peak_return_percent(df)
    return df


def peak_return_percent(trace: pd.DataFrame, column: str = "force_active_N") -> float:
    """Where in the return phase (0-100 %) ``column`` peaks."""
    ret = trace[trace["phase"] == "unload"]
    if ret.empty:
        raise DomainError("trace has no return phase")
    t0, t1 = ret["t_s"].iloc[0], ret["t_s"].iloc[-1]
    t_peak = ret["t_s"].iloc[int(np.argmax(ret[column].to_numpy()))]
    return 100.0 * (t_peak - t0) / (t1 - t0)


def simulate_deflation(config: DeviceConfig, elongation_mm: float = 110.0,
                       p_from: float = 50.0, p_to: float = 0.0,
                       duration: float = 2.0, dt: float = 1e-3) -> pd.DataFrame:
    """Vent the IPAM at a fixed elongation and record pressure and device force."""
    if p_to > p_from:
        raise DomainError(f"venting cannot raise pressure ({p_from} -> {p_to} psig)")
    if not (duration > 0 and dt > 0):
        raise DomainError("duration and dt must be positive")
    gas = config.gas
    band = config.band_model()
    pneu = config.pneumatic_state(p_from, elongation_mm)
    p_target = psig_to_pa(p_to, gas.P_atm)
    x = elongation_mm / 1000.0
    n = int(round(duration / dt))
    rows = []
    for i in range(n + 1):
        if i > 0 and pneu.P > p_target:
            pneu = step_deflate(pneu, x, config.exhaust, gas, dt, config.ipam)
            if pneu.P < p_target:
                pneu = PneumaticState.at(p_target, pneu.V, pneu.P_res, gas)
        p_psig = pa_to_psig(pneu.P, gas.P_atm)
        f_p = passive_force(band, elongation_mm)
        f_a = _active_force_quiet(config.surface, elongation_mm, max(p_psig, 0.0))
        rows.append((i * dt, elongation_mm, f_p + f_a, p_psig, False, "hold", f_p, f_a,
                     pneu.P, pneu.m, pneu.V))
    df = pd.DataFrame(rows, columns=TRACE_COLUMNS + ["P_pa", "m_kg", "V_m3"])
    df.attrs["scenario"] = "deflation"
    return df


def fraction_of_peak_at(trace: pd.DataFrame, t: float) -> float:
    """Force added since t=0 at time ``t``, as a fraction of the peak added force."""
    added = trace["force_N"].to_numpy() - trace["force_N"].iloc[0]
    peak = added.max()
    if peak <= 0:
        return 0.0
    return float(np.interp(t, trace["t_s"].to_numpy(), added) / peak)


def cycle_energy(trace: pd.DataFrame) -> float:
    """Energy (J) the device returns to the wearer over one closed elongation cycle.

    Minus the line integral of F dl: the wearer does work stretching the device
    and gets work back on the return.  Positive means net energy added.
    """
    l = trace["elongation_mm"].to_numpy(dtype=float)
    F = trace["force_N"].to_numpy(dtype=float)
    if len(l) < 2:
        raise DomainError("trace too short for an energy integral")
    if abs(l[-1] - l[0]) > 1.0:
        raise DomainError(f"open cycle: elongation starts at {l[0]:.3f} mm, ends at {l[-1]:.3f} mm")
    work_in = np.sum(0.5 * (F[1:] + F[:-1]) * np.diff(l))  # N*mm
    return float(-work_in / 1000.0)


def loading_slope(trace: pd.DataFrame, lo: float, hi: float,
                  column: str = "force_passive_N", phase: str = "load") -> float:
    """Least-squares slope of ``column`` vs elongation over ``[lo, hi]`` mm."""
    sel = trace[(trace["phase"] == phase) & trace["elongation_mm"].between(lo, hi)]
    if len(sel) < 2:
        raise DomainError(f"fewer than two samples between {lo} and {hi} mm")
    return float(np.polyfit(sel["elongation_mm"], sel[column], 1)[0])


def slope_change_point(trace: pd.DataFrame, column: str = "force_passive_N",
                       phase: str = "load", tol: float = 1e-6) -> float | None:
    """Elongation at which the loading slope of ``column`` first changes."""
    sel = trace[trace["phase"] == phase]
    l = sel["elongation_mm"].to_numpy()
    F = sel[column].to_numpy()
    dl = np.diff(l)
    ok = dl > 0
    slope = np.diff(F)[ok] / dl[ok]
    if len(slope) < 2:
        return None
    jumps = np.nonzero(np.abs(np.diff(slope)) > tol * max(1.0, abs(slope[0])))[0]
    if len(jumps) == 0:
        return None
    return float(l[:-1][ok][jumps[0] + 1])
