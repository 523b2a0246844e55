"""Weight-adaptive assistance controller.

Classified trunk state and object weight drive two things: when the band
clutch engages while lowering, and what pressure the IPAM vents to while
lifting.  A bang-bang loop with a deadband regulates IPAM pressure through the
inflate (V1) and release (V2) valves; the pump keeps the reservoir topped up.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import DomainError, StreamError


class TrunkState(str, enum.Enum):
    STANDING = "standing"
    FLEXING = "flexing"
    STOOPED = "stooped"
    EXTENDING = "extending"


class WeightClass(str, enum.Enum):
    KG0 = "kg0"
    KG7_5 = "kg7_5"
    KG15 = "kg15"

    @property
    def kg(self) -> float:
        return {"kg0": 0.0, "kg7_5": 7.5, "kg15": 15.0}[self.value]


class Mode(str, enum.Enum):
    LOWERING = "lowering"
    LIFTING = "lifting"
    IDLE = "idle"


class Regulation(str, enum.Enum):
    OPEN_RELEASE = "open_release"
    HOLD = "hold"
    OPEN_INFLATE = "open_inflate"


# clutch engagement point in % of range of motion; None = stays disengaged
CLUTCH_SCHEDULE = {WeightClass.KG0: None, WeightClass.KG7_5: 50.0, WeightClass.KG15: 0.0}
# IPAM vent target in psig at the start of trunk extension
DEFLATE_TARGETS = {WeightClass.KG0: 30.0, WeightClass.KG7_5: 15.0, WeightClass.KG15: 0.0}


@dataclass(frozen=True)
class ProfileCommand:
    mode: Mode
    clutch_engage_at_percent_rom: float | None = None
    deflate_target: float | None = None  # psig
    inflate_target: float = 50.0  # psig

    def __post_init__(self):
        if self.mode is Mode.LOWERING and self.deflate_target is not None:
            raise DomainError("a lowering profile never commands deflation")
        if self.mode is Mode.LIFTING and self.clutch_engage_at_percent_rom is not None:
            raise DomainError("a lifting profile never commands clutch engagement")


IDLE = ProfileCommand(Mode.IDLE)


@dataclass(frozen=True)
class ValveCommand:
    v1_inflate: bool = False
    v2_release: bool = False
    pump_on: bool = False
    vacuum_v3: bool = False

    def __post_init__(self):
        if self.v1_inflate and self.v2_release:
            raise DomainError("V1 and V2 may not be open at the same time")


def select_profile(prev: TrunkState, now: TrunkState, weight: WeightClass) -> ProfileCommand | None:
    prev, now, weight = TrunkState(prev), TrunkState(now), WeightClass(weight)
    if prev is TrunkState.STANDING and now is TrunkState.FLEXING:
        return ProfileCommand(Mode.LOWERING, clutch_engage_at_percent_rom=CLUTCH_SCHEDULE[weight])
    if prev is TrunkState.STOOPED and now is TrunkState.EXTENDING:
        return ProfileCommand(Mode.LIFTING, deflate_target=DEFLATE_TARGETS[weight])
    return None


def bang_bang(p_now: float, p_ref: float, deadband: float = 1.0) -> Regulation:
    if not deadband > 0:
        raise DomainError("deadband must be positive")
    if p_now > p_ref + deadband:
        return Regulation.OPEN_RELEASE
    if p_now < p_ref - deadband:
        return Regulation.OPEN_INFLATE
    return Regulation.HOLD


def valve_logic(cmd: ProfileCommand | None, regulation: Regulation,
                reservoir_psig: float | None = None, reservoir_setpoint: float = 90.0) -> ValveCommand:
    """Map a regulation decision onto V1/V2 and the pump relay."""
    regulation = Regulation(regulation)
    v1 = regulation is Regulation.OPEN_INFLATE
    v2 = regulation is Regulation.OPEN_RELEASE
    pump = reservoir_psig is not None and reservoir_psig < reservoir_setpoint
    return ValveCommand(v1_inflate=v1, v2_release=v2, pump_on=pump)


@dataclass(frozen=True)
class ControllerConfig:
    rom_max: float = 90.0  # deg of trunk flexion taken as 100 % RoM
    deadband: float = 1.0  # psi
    inflate_psig: float = 50.0
    reservoir_setpoint: float = 90.0  # psig
    track_cycles: bool = True


@dataclass(frozen=True)
class ClassifiedFrame:
    t: float
    state: TrunkState
    weight: WeightClass
    trunk_angle: float  # deg
    p_psig: float | None = None
    reservoir_psig: float | None = None


@dataclass(frozen=True)
class ControlOutput:
    t: float
    state: TrunkState
    weight: WeightClass
    profile: ProfileCommand
    valves: ValveCommand
    clutch: bool
    p_ref: float | None
    issued: ProfileCommand | None = None  # set on the frame a new profile was selected


class Controller:
    """100 Hz assistance state machine.

    With ``track_cycles`` on, the controller follows the pick-up/put-down
    structure of a lifting task: a flexion that starts without an object in
    hand belongs to a lifting cycle (no clutch, vent on extension), a flexion
    that starts holding the object belongs to a lowering cycle (clutch per
    weight, no venting on the way back up).  With it off, every
    standing->flexing and stooped->extending transition selects a profile.
    """

    def __init__(self, config: ControllerConfig | None = None):
        self.config = config or ControllerConfig()
        self.prev_state: TrunkState | None = None
        self.profile = IDLE
        self.clutch = False
        self.holding = False
        self._cycle: str | None = None  # "lifting" / "lowering" while away from standing
        self._engage_angle: float | None = None
        self._clutch_used = False
        self._lift_issued = False
        self._vent_reached = False
        self._t_last: float | None = None

    def step(self, frame: ClassifiedFrame) -> ControlOutput:
        cfg = self.config
        if self._t_last is not None and frame.t <= self._t_last:
            raise StreamError(f"frame at t={frame.t} is not after t={self._t_last}")
        self._t_last = frame.t
        now = TrunkState(frame.state)
        weight = WeightClass(frame.weight)
        prev = self.prev_state if self.prev_state is not None else now
        issued = None

        if prev is not now:
            issued = self._on_transition(prev, now, weight)
            if issued is not None:
                self.profile = issued
                self._vent_reached = False

        # clutch
        if self.profile.mode is Mode.LOWERING and self._engage_angle is not None:
            if not self._clutch_used and now in (TrunkState.FLEXING, TrunkState.STOOPED) \
                    and frame.trunk_angle >= self._engage_angle:
                self.clutch = True
                self._clutch_used = True
        if self.clutch and self._engage_angle is not None:
            if now is TrunkState.EXTENDING and frame.trunk_angle < self._engage_angle:
                self.clutch = False
        if now is TrunkState.STANDING:
            self.clutch = False

        # pressure reference
        if now in (TrunkState.FLEXING, TrunkState.STOOPED):
            p_ref = cfg.inflate_psig
        elif self.profile.mode is Mode.LIFTING:
            p_ref = self.profile.deflate_target
        elif now is TrunkState.EXTENDING:
            p_ref = cfg.inflate_psig
        else:
            p_ref = None

        if p_ref is None or frame.p_psig is None:
            regulation = Regulation.HOLD
        elif self.profile.mode is Mode.LIFTING and now is TrunkState.EXTENDING:
            # vent all the way to the target once, then hold it within the deadband
            if not self._vent_reached and frame.p_psig <= p_ref:
                self._vent_reached = True
            if self._vent_reached:
                regulation = bang_bang(frame.p_psig, p_ref, cfg.deadband)
            else:
                regulation = Regulation.OPEN_RELEASE
        else:
            regulation = bang_bang(frame.p_psig, p_ref, cfg.deadband)
        if self.profile.mode is Mode.LIFTING and regulation is Regulation.OPEN_INFLATE:
            # a lifting profile never refills the IPAM while the user extends
            regulation = Regulation.HOLD
        valves = valve_logic(self.profile, regulation, frame.reservoir_psig, cfg.reservoir_setpoint)

        if now is TrunkState.STANDING and prev is not TrunkState.STANDING:
            self._end_cycle()
        self.prev_state = now
        return ControlOutput(frame.t, now, weight, self.profile, valves, self.clutch, p_ref, issued)

    def _on_transition(self, prev, now, weight) -> ProfileCommand | None:
        if not self.config.track_cycles:
            cmd = select_profile(prev, now, weight)
            if cmd is not None and cmd.mode is Mode.LOWERING:
                self._arm_clutch(cmd)
            return cmd

        if prev is TrunkState.STANDING and now is TrunkState.FLEXING:
            if self.holding:
                self._cycle = "lowering"
                cmd = select_profile(prev, now, weight)
                self._arm_clutch(cmd)
                return cmd
            self._cycle = "lifting"
            self._lift_issued = False
            self._engage_angle = None
            return IDLE
        if prev is TrunkState.STOOPED and now is TrunkState.EXTENDING:
            if self._cycle == "lifting" and not self._lift_issued:
                self._lift_issued = True
                return select_profile(prev, now, weight)
            return None
        return None

    def _arm_clutch(self, cmd: ProfileCommand) -> None:
        self._clutch_used = False
        pct = cmd.clutch_engage_at_percent_rom
        self._engage_angle = None if pct is None else pct / 100.0 * self.config.rom_max

    def _end_cycle(self) -> None:
        if self._cycle == "lifting":
            self.holding = True
        elif self._cycle == "lowering":
            self.holding = False
        self._cycle = None
        self._engage_angle = None
        self.profile = IDLE


def run_controller(frames: Iterable[ClassifiedFrame],
                   config: ControllerConfig | None = None) -> Iterator[ControlOutput]:
    ctl = Controller(config)
    for frame in frames:
        yield ctl.step(frame)
