import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsdsim.controller import (CLUTCH_SCHEDULE, DEFLATE_TARGETS, ClassifiedFrame, Controller,
                               ControllerConfig, Mode, ProfileCommand, Regulation, TrunkState,
                               ValveCommand, WeightClass, bang_bang, run_controller, select_profile,
                               valve_logic)
from bsdsim.errors import DomainError, StreamError
from bsdsim.pneumo import PneumaticStepper, Valves, pa_to_psig
from bsdsim.vea import DeviceConfig

S = TrunkState
W = WeightClass


def cycle_states(n_stand=20, n_move=40, n_stoop=20):
    return [S.STANDING] * n_stand + [S.FLEXING] * n_move + [S.STOOPED] * n_stoop \
        + [S.EXTENDING] * n_move + [S.STANDING] * n_stand


def cycle_angles(n_stand=20, n_move=40, n_stoop=20, rom=90.0):
    up = np.linspace(0.0, rom, n_move)
    return np.concatenate([np.zeros(n_stand), up, np.full(n_stoop, rom), up[::-1], np.zeros(n_stand)])


def frames(states, weights, angles, p=None, res=None, t0=0.0):
    out = []
    for i, (s, w, a) in enumerate(zip(states, weights, angles)):
        out.append(ClassifiedFrame(t=t0 + 0.01 * i, state=s, weight=w, trunk_angle=float(a),
                                   p_psig=None if p is None else p[i],
                                   reservoir_psig=None if res is None else res[i]))
    return out


class TestProfileTable:
    @pytest.mark.parametrize("weight", list(W))
    def test_lifting(self, weight):
        cmd = select_profile(S.STOOPED, S.EXTENDING, weight)
        assert cmd.mode is Mode.LIFTING
        assert cmd.deflate_target == {W.KG0: 30.0, W.KG7_5: 15.0, W.KG15: 0.0}[weight]
        assert cmd.clutch_engage_at_percent_rom is None

    @pytest.mark.parametrize("weight", list(W))
    def test_lowering(self, weight):
        cmd = select_profile(S.STANDING, S.FLEXING, weight)
        assert cmd.mode is Mode.LOWERING
        assert cmd.clutch_engage_at_percent_rom == {W.KG0: None, W.KG7_5: 50.0, W.KG15: 0.0}[weight]
        assert cmd.deflate_target is None

    def test_other_transitions(self):
        selecting = {(S.STANDING, S.FLEXING), (S.STOOPED, S.EXTENDING)}
        for prev, now, w in itertools.product(S, S, W):
            if (prev, now) not in selecting:
                assert select_profile(prev, now, w) is None

    def test_tables(self):
        assert DEFLATE_TARGETS == {W.KG0: 30.0, W.KG7_5: 15.0, W.KG15: 0.0}
        assert CLUTCH_SCHEDULE == {W.KG0: None, W.KG7_5: 50.0, W.KG15: 0.0}

    def test_profile_invariants(self):
        with pytest.raises(DomainError):
            ProfileCommand(Mode.LOWERING, deflate_target=0.0)
        with pytest.raises(DomainError):
            ProfileCommand(Mode.LIFTING, clutch_engage_at_percent_rom=0.0)


class TestBangBang:
    def test_release(self):
        assert bang_bang(50.0, 15.0, 1.0) is Regulation.OPEN_RELEASE

    def test_hold(self):
        assert bang_bang(15.5, 15.0, 1.0) is Regulation.HOLD

    def test_inflate(self):
        assert bang_bang(10.0, 15.0, 1.0) is Regulation.OPEN_INFLATE

    def test_bad_deadband(self):
        with pytest.raises(DomainError):
            bang_bang(1.0, 1.0, 0.0)

    def test_no_chatter_inside_deadband(self):
        sweep = np.concatenate([np.linspace(15.99, 14.01, 200), np.linspace(14.01, 15.99, 200)])
        assert {bang_bang(p, 15.0, 1.0) for p in sweep} == {Regulation.HOLD}


class TestValveLogic:
    @pytest.mark.parametrize("reg, v1, v2", [(Regulation.OPEN_INFLATE, True, False),
                                             (Regulation.HOLD, False, False),
                                             (Regulation.OPEN_RELEASE, False, True)])
    def test_truth_table(self, reg, v1, v2):
        v = valve_logic(None, reg)
        assert (v.v1_inflate, v.v2_release) == (v1, v2)

    def test_pump(self):
        assert valve_logic(None, Regulation.HOLD, reservoir_psig=85.0).pump_on
        assert not valve_logic(None, Regulation.HOLD, reservoir_psig=90.0).pump_on

    def test_interlock(self):
        with pytest.raises(DomainError):
            ValveCommand(v1_inflate=True, v2_release=True)


class TestRunController:
    def lifting_then_lowering(self, weight, rom=90.0):
        st_ = cycle_states() + cycle_states()[20:]
        ang = np.concatenate([cycle_angles(rom=rom), cycle_angles(rom=rom)[20:]])
        n = len(st_)
        n1 = len(cycle_states())
        hold = np.zeros(n, bool)
        hold[60 + 10:n1 + 60 + 10] = True  # grasp while stooped, release while stooped
        ws = [weight if h else W.KG0 for h in hold]
        return st_, ws, ang

    def test_deflation_on_extension_onset(self):
        st_, ws, ang = self.lifting_then_lowering(W.KG15)
        p = np.full(len(st_), 50.0)
        out = list(run_controller(frames(st_, ws, ang, p=p)))
        onset = next(i for i in range(1, len(st_)) if st_[i - 1] is S.STOOPED and st_[i] is S.EXTENDING)
        issued = [i for i, o in enumerate(out) if o.issued is not None and o.issued.mode is Mode.LIFTING]
        assert issued == [onset]
        assert out[onset].issued.deflate_target == 0.0
        assert out[onset].valves.v2_release

    def test_kg0_lowering_never_engages(self):
        st_, ws, ang = self.lifting_then_lowering(W.KG0)
        assert not any(o.clutch for o in run_controller(frames(st_, ws, ang)))

    @pytest.mark.parametrize("weight, pct", [(W.KG7_5, 50.0), (W.KG15, 0.0)])
    def test_clutch_engages_once_at_schedule(self, weight, pct):
        st_, ws, ang = self.lifting_then_lowering(weight)
        out = list(run_controller(frames(st_, ws, ang)))
        on = [i for i in range(1, len(out)) if out[i].clutch and not out[i - 1].clutch]
        assert len(on) == 1
        assert out[on[0]].profile.mode is Mode.LOWERING
        assert ang[on[0]] >= pct / 100.0 * 90.0
        assert ang[on[0] - 1] < pct / 100.0 * 90.0 or out[on[0] - 1].state is S.STANDING
        assert not out[-1].clutch

    def test_idle_standing(self):
        n = 50
        out = list(run_controller(frames([S.STANDING] * n, [W.KG0] * n, np.zeros(n),
                                         p=np.full(n, 50.0), res=np.full(n, 85.0))))
        assert all(not o.valves.v1_inflate and not o.valves.v2_release for o in out)
        assert all(o.valves.pump_on for o in out)

    def test_out_of_order(self):
        ctl = Controller()
        ctl.step(ClassifiedFrame(1.0, S.STANDING, W.KG0, 0.0))
        with pytest.raises(StreamError):
            ctl.step(ClassifiedFrame(0.5, S.STANDING, W.KG0, 0.0))

    def test_untracked_mode_selects_on_every_transition(self):
        st_ = cycle_states()
        out = list(run_controller(frames(st_, [W.KG15] * len(st_), cycle_angles()),
                                  ControllerConfig(track_cycles=False)))
        modes = [o.issued.mode for o in out if o.issued is not None]
        assert modes == [Mode.LOWERING, Mode.LIFTING]


state_streams = st.lists(st.tuples(st.sampled_from(list(S)), st.sampled_from(list(W)),
                                   st.floats(0.0, 100.0), st.floats(-1.0, 60.0), st.floats(70.0, 95.0)),
                         min_size=1, max_size=300)


@settings(max_examples=100)
@given(state_streams)
def test_determinism_and_interlock(stream):
    fr = [ClassifiedFrame(0.01 * i, s, w, a, p, r) for i, (s, w, a, p, r) in enumerate(stream)]
    a = list(run_controller(fr))
    b = list(run_controller(fr))
    assert a == b
    for o in a:
        assert not (o.valves.v1_inflate and o.valves.v2_release)
        assert not (o.profile.mode is Mode.LOWERING and o.profile.deflate_target is not None)


@settings(max_examples=100)
@given(state_streams)
def test_at_most_one_engagement_and_deflation_per_cycle(stream):
    fr = [ClassifiedFrame(0.01 * i, s, w, a, p, r) for i, (s, w, a, p, r) in enumerate(stream)]
    out = list(run_controller(fr))
    engagements = lifts = 0
    for i, o in enumerate(out):
        if o.state is S.STANDING:
            engagements = lifts = 0
            continue
        if o.clutch and (i == 0 or not out[i - 1].clutch):
            engagements += 1
        if o.issued is not None and o.issued.mode is Mode.LIFTING:
            lifts += 1
        assert engagements <= 1
        assert lifts <= 1


@pytest.mark.parametrize("start, ref", [(50.0, 15.0), (50.0, 30.0), (2.0, 50.0)])
def test_regulation_converges_with_pneumatics(start, ref):
    cfg = DeviceConfig()
    stepper = PneumaticStepper(cfg.pneumatic_state(start, 50.0), cfg.exhaust, cfg.inflow, cfg.gas)
    gas = cfg.gas
    for _ in range(3000):
        p = pa_to_psig(stepper.state.P, gas.P_atm)
        v = valve_logic(None, bang_bang(p, ref, 1.0), pa_to_psig(stepper.state.P_res, gas.P_atm))
        stepper.step(Valves(v.v1_inflate, v.v2_release, v.pump_on), 0.05, 1e-3)
    assert abs(pa_to_psig(stepper.state.P, gas.P_atm) - ref) <= 1.0 + 0.1
