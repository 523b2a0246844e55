"""Closed-loop replay of a sensor trace through classifier, controller and device.

Each 10 ms frame: window features -> forest -> dwell filter -> controller ->
clutch latch and pneumatic substeps -> device force.  Elongation is derived
from the trunk angle by a configurable map.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .band import ClutchedBand
from .controller import (ClassifiedFrame, Controller, ControllerConfig, Mode, TrunkState,
                         WeightClass)
from .errors import DomainError, SchemaError
from .estimator import ForestModel, classify_trace, dwell_filter
from .pneumo import PneumaticStepper, Valves, pa_to_psig
from .synth import SENSOR_CHANNELS
from .vea import DeviceConfig, DeviceState, force_components


@dataclass(frozen=True)
class ElongationMap:
    """Trunk angle (deg) to device elongation (mm) by piecewise-linear lookup.

    The default is the straight line 0 deg -> 0 mm, ``rom_max`` -> 110 mm,
    extrapolated beyond ``rom_max`` and clipped at zero below.
    """

    angles: tuple[float, ...] = (0.0, 90.0)
    elongations: tuple[float, ...] = (0.0, 110.0)

    def __post_init__(self):
        if len(self.angles) != len(self.elongations) or len(self.angles) < 2:
            raise DomainError("lookup needs at least two matching angle/elongation points")
        if np.any(np.diff(self.angles) <= 0):
            raise DomainError("lookup angles must increase")

    @classmethod
    def linear(cls, rom_max: float = 90.0, peak_mm: float = 110.0) -> "ElongationMap":
        return cls((0.0, float(rom_max)), (0.0, float(peak_mm)))

    def __call__(self, angle):
        a, e = np.asarray(self.angles), np.asarray(self.elongations)
        x = np.asarray(angle, dtype=float)
        y = np.interp(x, a, e)
        # linear extrapolation past the last point
        slope = (e[-1] - e[-2]) / (a[-1] - a[-2])
        y = np.where(x > a[-1], e[-1] + slope * (x - a[-1]), y)
        return np.clip(y, 0.0, None)


@dataclass(frozen=True)
class ReplayConfig:
    device: DeviceConfig = DeviceConfig()
    controller: ControllerConfig = ControllerConfig()
    dwell: int = 10
    substeps: int = 10  # pneumatic steps per frame (1 ms)
    initial_psig: float = 50.0
    cycle_on_mm: float = 10.0  # elongation that marks a flexion-extension cycle
    cycle_off_mm: float = 0.5  # cycle bounds are the nearest frames at or below this


@dataclass
class ReplayModels:
    state: ForestModel
    weight: ForestModel

    def __post_init__(self):
        if self.state.mode not in (None, "state") or self.weight.mode not in (None, "weight"):
            raise DomainError("state/weight models are swapped or of the wrong mode")
        if self.state.n_features != 32 or self.weight.n_features != 80:
            raise DomainError("models do not match the 32/80-feature window layout")


@dataclass
class ReplayResult:
    records: pd.DataFrame
    cycles: pd.DataFrame
    latencies: list = field(default_factory=list)  # s, true extension onset -> lifting command

    def summary(self) -> str:
        lines = [f"{len(self.records)} frames, {len(self.cycles)} cycles"]
        for c in self.cycles.itertuples(index=False):
            lines.append(f"  cycle {c.index}: {c.kind:<8} {c.weight:<6} "
                         f"t {c.t_start:7.2f}-{c.t_end:7.2f} s  peak {c.peak_force_N:7.2f} N  "
                         f"energy {c.energy_J:+.4f} J")
        if self.latencies:
            lines.append("  lifting command latency: " + ", ".join(f"{1000 * x:.0f} ms" for x in self.latencies))
        return "\n".join(lines)


def _raw_labels(trace, models):
    n = len(trace)
    if models is None:
        if "label_state" not in trace.columns or "label_weight" not in trace.columns:
            raise SchemaError("oracle replay needs label_state and label_weight columns")
        return trace["label_state"].to_numpy(object), trace["label_weight"].to_numpy(object)
    missing = [c for c in ["t"] + SENSOR_CHANNELS if c not in trace.columns]
    if missing:
        raise SchemaError(f"trace lacks column {missing[0]!r}")
    states = np.full(n, TrunkState.STANDING.value, dtype=object)
    weights = np.full(n, WeightClass.KG0.value, dtype=object)
    ends, s = classify_trace(models.state, trace, "state")
    states[ends] = s
    ends, w = classify_trace(models.weight, trace, "weight")
    weights[ends] = w
    return states, weights


def find_cycles(elongation: np.ndarray, on: float, off: float) -> list[tuple[int, int]]:
    """(start, end) frame indices of excursions above ``on``, bounded at ``off``."""
    cycles = []
    i, n = 0, len(elongation)
    while i < n:
        if elongation[i] > on:
            s = i
            while s > 0 and elongation[s] > off:
                s -= 1
            e = i
            while e < n - 1 and elongation[e] > off:
                e += 1
            if elongation[s] <= off and elongation[e] <= off:
                cycles.append((s, e))
            i = e + 1
        else:
            i += 1
    return cycles


def replay(trace: pd.DataFrame, models: ReplayModels | None = None,
           config: ReplayConfig | None = None,
           elongation_map: Callable | None = None,
           raw_override: tuple[Sequence, Sequence] | None = None) -> ReplayResult:
    """Run the 100 Hz assistance loop over a time-ordered trace.

    With ``models=None`` the trace's own labels stand in for the classifier.
    ``raw_override`` replaces the raw (pre-dwell) label streams outright.
    """
    cfg = config or ReplayConfig()
    dev = cfg.device
    gas = dev.gas
    emap = elongation_map or ElongationMap.linear(cfg.controller.rom_max)
    t = trace["t"].to_numpy(dtype=float)
    if len(t) < 2 or np.any(np.diff(t) <= 0):
        raise DomainError("trace must hold at least two strictly time-ordered frames")

    raw_s, raw_w = _raw_labels(trace, models) if raw_override is None else map(np.asarray, raw_override)
    if len(raw_s) != len(t) or len(raw_w) != len(t):
        raise DomainError("label streams must match the trace length")
    state = dwell_filter(list(raw_s), cfg.dwell)
    weight = dwell_filter(list(raw_w), cfg.dwell)

    alpha = trace["alpha"].to_numpy(dtype=float)
    elong = emap(alpha)
    ctl = Controller(cfg.controller)
    band = ClutchedBand(dev.band_model())
    stepper = PneumaticStepper(dev.pneumatic_state(cfg.initial_psig, float(elong[0])),
                               dev.exhaust, dev.inflow, gas, dev.ipam, dev.pump_rate)

    rows = []
    for i in range(len(t)):
        s = stepper.state
        l_now = float(elong[i])
        out = ctl.step(ClassifiedFrame(
            t=float(t[i]), state=state[i], weight=weight[i], trunk_angle=float(alpha[i]),
            p_psig=pa_to_psig(s.P, gas.P_atm), reservoir_psig=pa_to_psig(s.P_res, gas.P_atm)))
        v = out.valves
        band.command(out.clutch, float(t[i]))
        engaged = band.update(float(t[i]), l_now)
        rate = 0.0 if i == 0 else (l_now - elong[i - 1]) / (t[i] - t[i - 1]) * 60.0
        ds = DeviceState(elongation=l_now, elongation_rate=rate, band=band, pneumo=s)
        f_p, f_a = force_components(ds, dev.surface, gas)
        prof = out.profile
        rows.append({
            "t": t[i], "alpha": alpha[i], "elongation_mm": l_now,
            "raw_state": raw_s[i], "raw_weight": raw_w[i], "state": out.state.value,
            "weight": out.weight.value, "mode": prof.mode.value,
            "clutch_at_pct": prof.clutch_engage_at_percent_rom,
            "deflate_target": prof.deflate_target,
            "issued": out.issued.mode.value if out.issued is not None else "",
            "v1": v.v1_inflate, "v2": v.v2_release, "pump": v.pump_on,
            "clutch_cmd": out.clutch, "clutch": engaged, "p_ref": out.p_ref,
            "P_psig": pa_to_psig(s.P, gas.P_atm),
            "P_res_psig": pa_to_psig(s.P_res, gas.P_atm),
            "F_passive_N": f_p, "F_active_N": f_a, "F_total_N": f_p + f_a,
        })
        # hold the valve command until the next frame, elongation ramped in between
        if i + 1 < len(t):
            valves = Valves(v.v1_inflate, v.v2_release, v.pump_on)
            l_next = float(elong[i + 1])
            sub = (t[i + 1] - t[i]) / cfg.substeps
            for k in range(cfg.substeps):
                lk = l_now + (l_next - l_now) * (k + 1) / cfg.substeps
                stepper.step(valves, lk / 1000.0, sub)
    rec = pd.DataFrame(rows)
    return ReplayResult(rec, _cycle_table(rec, cfg), _latencies(rec, trace))


def _cycle_table(rec: pd.DataFrame, cfg: ReplayConfig) -> pd.DataFrame:
    l = rec["elongation_mm"].to_numpy()
    F = rec["F_total_N"].to_numpy()
    rows = []
    for k, (s, e) in enumerate(find_cycles(l, cfg.cycle_on_mm, cfg.cycle_off_mm)):
        seg = rec.iloc[s:e + 1]
        modes = set(seg["mode"])
        kind = "lifting" if Mode.LIFTING.value in modes else \
            "lowering" if Mode.LOWERING.value in modes else "idle"
        held = seg.loc[seg["weight"] != WeightClass.KG0.value, "weight"]
        work = np.sum(0.5 * (F[s + 1:e + 1] + F[s:e]) * np.diff(l[s:e + 1]))
        rows.append({
            "index": k, "kind": kind,
            "weight": held.mode().iloc[0] if len(held) else WeightClass.KG0.value,
            "t_start": rec["t"].iloc[s], "t_end": rec["t"].iloc[e],
            "peak_force_N": float(F[s:e + 1].max()),
            "peak_elongation_mm": float(l[s:e + 1].max()),
            "energy_J": float(-work / 1000.0),
        })
    cols = ["index", "kind", "weight", "t_start", "t_end", "peak_force_N",
            "peak_elongation_mm", "energy_J"]
    return pd.DataFrame(rows, columns=cols)


def _latencies(rec: pd.DataFrame, trace: pd.DataFrame) -> list:
    """True stooped->extending onset to the next lifting command, per lifting command."""
    if "label_state" not in trace.columns:
        return []
    lab = trace["label_state"].to_numpy(object)
    t = rec["t"].to_numpy()
    onsets = [i for i in range(1, len(lab))
              if lab[i] == TrunkState.EXTENDING.value and lab[i - 1] == TrunkState.STOOPED.value]
    issued = np.flatnonzero(rec["issued"].to_numpy(object) == Mode.LIFTING.value)
    out = []
    for j in issued:
        before = [i for i in onsets if i <= j]
        if before:
            out.append(float(t[j] - t[before[-1]]))
    return out


def export(result: ReplayResult, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    result.records.to_csv(d / "replay.csv", index=False)
    result.cycles.to_csv(d / "cycles.csv", index=False)
    (d / "summary.txt").write_text(result.summary() + "\n")
