"""Labeled synthetic IMU + forearm FMG traces of lift/lower trials, and trace CSV I/O.

A trial is: stand, lifting cycle (flex, stoop and pick the object up, extend
holding it), stand, lowering cycle (flex holding it, stoop and put it down,
extend), stand.  Trunk angle follows minimum-jerk profiles, so angular
velocity and acceleration are analytic.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .controller import TrunkState, WeightClass
from .errors import DomainError, SchemaError

G = 9.81
FS = 100.0
IMU_CHANNELS = ["alpha", "omega", "a1", "a2"]
FSR_CHANNELS = [f"f{i}" for i in range(1, 7)]
SENSOR_CHANNELS = IMU_CHANNELS + FSR_CHANNELS
TRACE_COLUMNS = ["t"] + SENSOR_CHANNELS
LABEL_COLUMNS = ["label_state", "label_weight"]


@dataclass(frozen=True)
class SensorFrame:
    t: float
    alpha: float
    omega: float
    a1: float
    a2: float
    fsr: tuple[float, float, float, float, float, float]
    label_state: str | None = None
    label_weight: str | None = None


@dataclass(frozen=True)
class SubjectParams:
    rom_max: float = 80.0  # deg
    cycle_duration: float = 3.0  # s per flexion-extension
    stoop_fraction: float = 0.2  # share of a cycle spent stooped
    stand_duration: float = 2.0  # s standing before, between and after cycles
    imu_radius: float = 0.45  # m from the lumbar pivot to the upper-back IMU
    omega_threshold: float = 5.0  # deg/s separating moving from static states
    fsr_baseline: tuple[float, ...] = (0.10, 0.08, 0.12, 0.09, 0.11, 0.07)
    fsr_pattern: tuple[float, ...] = (1.0, 0.8, 0.6, 0.9, 0.7, 0.5)
    fmg_gain: dict = field(default_factory=lambda: {"kg0": 0.12, "kg7_5": 0.45, "kg15": 0.85})
    gain_jitter: float = 0.08  # relative trial-to-trial gain spread
    timing_jitter: float = 0.08  # relative spread of cycle timing and depth
    onset_jitter: float = 0.1  # s spread of grasp/release instants
    noise_alpha: float = 0.3
    noise_omega: float = 2.0
    noise_acc: float = 0.2
    noise_fsr: float = 0.02
    noise_fsr_mult: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 30.0 < self.rom_max < 120.0:
            raise DomainError("rom_max must lie in (30, 120) deg")
        noises = (self.noise_alpha, self.noise_omega, self.noise_acc, self.noise_fsr,
                  self.noise_fsr_mult, self.gain_jitter, self.timing_jitter, self.onset_jitter)
        if min(noises) < 0:
            raise DomainError("noise levels must be non-negative")

    def noiseless(self) -> "SubjectParams":
        return replace(self, noise_alpha=0.0, noise_omega=0.0, noise_acc=0.0, noise_fsr=0.0,
                       noise_fsr_mult=0.0)


@dataclass(frozen=True)
class TrialSpec:
    weight: WeightClass
    n_trials: int = 10

    def __post_init__(self):
        if self.n_trials < 1:
            raise DomainError("n_trials must be at least 1")


def min_jerk(s):
    """Normalized position, velocity and acceleration of a minimum-jerk move, s in [0, 1]."""
    s = np.clip(s, 0.0, 1.0)
    pos = 10 * s**3 - 15 * s**4 + 6 * s**5
    vel = 30 * s**2 - 60 * s**3 + 30 * s**4
    acc = 60 * s - 180 * s**2 + 120 * s**3
    return pos, vel, acc


@dataclass(frozen=True)
class Segment:
    kind: str  # "flex" or "extend"
    t0: float
    duration: float
    amplitude: float  # deg
    cycle: str  # "lifting" or "lowering"


@dataclass(frozen=True)
class TrialPlan:
    """Timing of one trial: movement segments and grasp/release instants."""

    segments: tuple[Segment, ...]
    t_end: float
    t_grasp: float
    t_release: float
    rom: float

    def kinematics(self, t):
        """Trunk angle (deg), rate (deg/s) and angular acceleration (deg/s^2)."""
        t = np.asarray(t, dtype=float)
        alpha = np.zeros_like(t)
        omega = np.zeros_like(t)
        accel = np.zeros_like(t)
        for seg in self.segments:
            s = (t - seg.t0) / seg.duration
            pos, vel, acc = min_jerk(s)
            inside = (s > 0) & (s < 1)
            sign = 1.0 if seg.kind == "flex" else -1.0
            alpha = alpha + sign * seg.amplitude * pos
            omega = omega + np.where(inside, sign * seg.amplitude * vel / seg.duration, 0.0)
            accel = accel + np.where(inside, sign * seg.amplitude * acc / seg.duration**2, 0.0)
        return alpha, omega, accel

    def cycle_at(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, "none", dtype=object)
        for flex, ext in zip(self.segments[::2], self.segments[1::2]):
            out[(t >= flex.t0) & (t < ext.t0 + ext.duration)] = flex.cycle
        return out


def plan_trial(subject: SubjectParams, rng: np.random.Generator) -> TrialPlan:
    sp = subject
    j = sp.timing_jitter
    rom = sp.rom_max * (1.0 + j * rng.uniform(-0.5, 0.5))
    t = sp.stand_duration * (1.0 + j * rng.uniform(-1, 1))
    segments = []
    grasp = release = None
    for cycle in ("lifting", "lowering"):
        dur = sp.cycle_duration * (1.0 + j * rng.uniform(-1, 1))
        stoop = sp.stoop_fraction * dur
        move = 0.5 * (dur - stoop)
        segments.append(Segment("flex", t, move, rom, cycle))
        t_stoop = t + move
        instant = t_stoop + 0.5 * stoop + rng.uniform(-1, 1) * min(sp.onset_jitter, 0.45 * stoop)
        if cycle == "lifting":
            grasp = instant
        else:
            release = instant
        segments.append(Segment("extend", t_stoop + stoop, move, rom, cycle))
        t = t_stoop + stoop + move + sp.stand_duration * (1.0 + j * rng.uniform(-1, 1))
    return TrialPlan(tuple(segments), t, grasp, release, rom)


def state_labels(plan: TrialPlan, t, threshold: float) -> np.ndarray:
    """Trunk-state labels from the noiseless rate: moving where |omega| > threshold."""
    alpha, omega, _ = plan.kinematics(t)
    labels = np.where(alpha > 0.5 * plan.rom, TrunkState.STOOPED.value, TrunkState.STANDING.value)
    labels = labels.astype(object)
    labels[omega > threshold] = TrunkState.FLEXING.value
    labels[omega < -threshold] = TrunkState.EXTENDING.value
    return labels


def generate_trial(subject: SubjectParams, spec: TrialSpec | WeightClass,
                   rng: np.random.Generator | int | None = None) -> pd.DataFrame:
    """One labeled lift/lower trial sampled at 100 Hz, as a frame table.

    Besides the CSV schema columns the table carries ``cycle`` (lifting,
    lowering or none) and ``holding`` (object in hand).
    """
    weight = WeightClass(spec.weight if isinstance(spec, TrialSpec) else spec)
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(subject.seed if rng is None else rng)
    sp = subject
    plan = plan_trial(sp, rng)
    n = int(math.floor(plan.t_end * FS)) + 1
    t = np.arange(n) / FS
    alpha, omega, accel = plan.kinematics(t)

    a_rad = np.radians(alpha)
    w_rad = np.radians(omega)
    dw_rad = np.radians(accel)
    # sagittal IMU frame on the trunk: tangential and radial components incl. gravity
    a1 = G * np.sin(a_rad) + sp.imu_radius * dw_rad
    a2 = G * np.cos(a_rad) - sp.imu_radius * w_rad**2

    holding = (t >= plan.t_grasp) & (t < plan.t_release)
    gain = sp.fmg_gain[weight.value] * (1.0 + sp.gain_jitter * rng.standard_normal())
    base = np.asarray(sp.fsr_baseline)
    pattern = np.asarray(sp.fsr_pattern)
    fsr = base[None, :] + holding[:, None] * max(gain, 0.0) * pattern[None, :]
    fsr = fsr * (1.0 + sp.noise_fsr_mult * rng.standard_normal(fsr.shape))
    fsr = fsr + sp.noise_fsr * rng.standard_normal(fsr.shape)
    fsr = np.clip(fsr, 0.0, None)

    df = pd.DataFrame({
        "t": t,
        "alpha": alpha + sp.noise_alpha * rng.standard_normal(n),
        "omega": omega + sp.noise_omega * rng.standard_normal(n),
        "a1": a1 + sp.noise_acc * rng.standard_normal(n),
        "a2": a2 + sp.noise_acc * rng.standard_normal(n),
    })
    for i, name in enumerate(FSR_CHANNELS):
        df[name] = fsr[:, i]
    df["label_state"] = state_labels(plan, t, sp.omega_threshold)
    df["label_weight"] = np.where(holding, weight.value, WeightClass.KG0.value)
    df["cycle"] = plan.cycle_at(t)
    df["holding"] = holding
    df.attrs.update(weight=weight.value, rom=plan.rom, t_grasp=plan.t_grasp,
                    t_release=plan.t_release)
    return df


@dataclass
class Dataset:
    train: list[pd.DataFrame]
    test: list[pd.DataFrame]

    def n_cycles(self) -> int:
        return 2 * (len(self.train) + len(self.test))


def generate_dataset(subject: SubjectParams, specs, train_fraction: float = 0.7) -> Dataset:
    """Randomized-order trials split per weight class by whole trials (two cycles each)."""
    rng = np.random.default_rng(subject.seed)
    order = [WeightClass(s.weight) for s in specs for _ in range(s.n_trials)]
    order = [order[i] for i in rng.permutation(len(order))]
    trials = []
    for k, weight in enumerate(order):
        trial = generate_trial(subject, weight, rng)
        trial.attrs["trial"] = k
        trials.append(trial)
    train, test = [], []
    for weight in WeightClass:
        group = [tr for tr in trials if tr.attrs["weight"] == weight.value]
        n_train = int(round(train_fraction * len(group)))
        train += group[:n_train]
        test += group[n_train:]
    train.sort(key=lambda d: d.attrs["trial"])
    test.sort(key=lambda d: d.attrs["trial"])
    return Dataset(train, test)


def frames_from_table(df: pd.DataFrame) -> list[SensorFrame]:
    has_labels = all(c in df.columns for c in LABEL_COLUMNS)
    out = []
    for row in df.itertuples(index=False):
        out.append(SensorFrame(
            t=row.t, alpha=row.alpha, omega=row.omega, a1=row.a1, a2=row.a2,
            fsr=tuple(getattr(row, c) for c in FSR_CHANNELS),
            label_state=row.label_state if has_labels else None,
            label_weight=row.label_weight if has_labels else None,
        ))
    return out


def table_from_frames(frames) -> pd.DataFrame:
    rows = []
    labeled = any(f.label_state is not None for f in frames)
    for f in frames:
        row = [f.t, f.alpha, f.omega, f.a1, f.a2, *f.fsr]
        if labeled:
            row += [f.label_state, f.label_weight]
        rows.append(row)
    return pd.DataFrame(rows, columns=TRACE_COLUMNS + (LABEL_COLUMNS if labeled else []))


def write_trace(path, frames) -> None:
    """Write frames (a frame table or SensorFrame sequence) in the trace CSV schema."""
    df = frames if isinstance(frames, pd.DataFrame) else table_from_frames(frames)
    labeled = all(c in df.columns for c in LABEL_COLUMNS)
    columns = TRACE_COLUMNS + (LABEL_COLUMNS if labeled else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in df[columns].itertuples(index=False):
            w.writerow([repr(float(v)) if i < len(TRACE_COLUMNS) else v for i, v in enumerate(row)])


def read_trace(path) -> pd.DataFrame:
    """Read a trace CSV, checking the header, row shape, values and time order."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in TRACE_COLUMNS:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        labeled = [c in header for c in LABEL_COLUMNS]
        if any(labeled) and not all(labeled):
            missing = LABEL_COLUMNS[labeled.index(False)]
            raise SchemaError(f"{path}: missing column {missing!r}")
        extra = [h for h in header if h not in TRACE_COLUMNS + LABEL_COLUMNS]
        if extra:
            raise SchemaError(f"{path}: unexpected column(s) {extra}")
        idx = {h: i for i, h in enumerate(header)}
        columns = TRACE_COLUMNS + (LABEL_COLUMNS if all(labeled) else [])
        states = {s.value for s in TrunkState}
        weights = {w.value for w in WeightClass}
        rows = []
        t_prev = -math.inf
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(raw)}")
            try:
                values = [float(raw[idx[c]]) for c in TRACE_COLUMNS]
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in values):
                raise SchemaError(f"{path}:{lineno}: non-finite value")
            if values[0] <= t_prev:
                raise SchemaError(f"{path}:{lineno}: timestamp {values[0]} not after {t_prev}")
            if min(values[5:]) < 0:
                raise SchemaError(f"{path}:{lineno}: negative FSR reading")
            t_prev = values[0]
            if all(labeled):
                s, w = raw[idx["label_state"]].strip(), raw[idx["label_weight"]].strip()
                if s not in states or w not in weights:
                    raise SchemaError(f"{path}:{lineno}: unknown label {s!r}/{w!r}")
                values += [s, w]
            rows.append(values)
    return pd.DataFrame(rows, columns=columns)
