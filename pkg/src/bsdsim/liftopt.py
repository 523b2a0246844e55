"""Static optimization of the coupled muscle + device system.

Each frame distributes the required joint torques across muscle activations
and a path actuator by minimizing the summed squared activations subject to
joint-moment equilibrium and box bounds.  The device is a path spring
(``k_base``) in parallel with a path actuator (``a_path * F_path_max``).

A small planar surrogate (one lumbar joint, two extensors, one flexor, a strap
wrapping a cylinder at the joint) generates trials when no precomputed
inverse-dynamics data are available.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import linprog

from .errors import DomainError, InfeasibleError, SchemaError
from .synth import min_jerk

G = 9.81


# --- force-length-velocity ---------------------------------------------------

def _constant_one(l_ratio=1.0, v_ratio=0.0):
    return 1.0


def flv_scaler(kind: str = "constant_one", width: float = 0.45, v_max: float = 1.0) -> Callable:
    """Active-fiber force scaling f(l~, v~).

    ``constant_one`` ignores its arguments (rigid tendon, isometric fibers).
    ``gaussian_fl_linear_fv`` multiplies a Gaussian force-length curve of
    half-width ``width`` by a linear force-velocity factor clamped to [0, 1.4];
    ``v_ratio`` is shortening velocity (positive = shortening).
    """
    if kind == "constant_one":
        return _constant_one
    if kind == "gaussian_fl_linear_fv":
        if not (width > 0 and v_max > 0):
            raise DomainError("width and v_max must be positive")

        def f(l_ratio=1.0, v_ratio=0.0):
            fl = math.exp(-(((l_ratio - 1.0) / width) ** 2))
            fv = min(max(1.0 - v_ratio / v_max, 0.0), 1.4)
            return fl * fv

        f.kind, f.width, f.v_max = kind, width, v_max
        return f
    raise DomainError(f"unknown force-length-velocity kind {kind!r}")


@dataclass(frozen=True)
class MuscleDef:
    name: str
    F0: float  # N
    a_min: float = 0.01
    a_max: float = 1.0
    flv: Callable = field(default=_constant_one, compare=False)

    def __post_init__(self):
        if not self.F0 > 0:
            raise DomainError(f"{self.name}: F0 must be positive")
        if not 0 <= self.a_min <= self.a_max:
            raise DomainError(f"{self.name}: bad activation bounds")


@dataclass(frozen=True)
class PathActuatorDef:
    k_base: float  # N/m
    F_path_max: float  # N
    a_min: float = 0.001
    a_max: float = 0.01

    def __post_init__(self):
        if self.k_base < 0 or not self.F_path_max > 0:
            raise DomainError("k_base must be >= 0 and F_path_max > 0")
        if not 0 <= self.a_min <= self.a_max:
            raise DomainError("bad a_path bounds")

    @classmethod
    def from_peak(cls, k_base: float, F_phys_max: float, a_min=0.001, a_max=0.01):
        """Size F_path_max so that a_max * F_path_max equals the physical peak."""
        return cls(k_base=k_base, F_path_max=F_phys_max / a_max, a_min=a_min, a_max=a_max)

    @property
    def peak_active(self) -> float:
        return self.a_max * self.F_path_max


@dataclass
class LiftFrame:
    t: float
    tau: np.ndarray  # (J,) Nm
    moment_arms: np.ndarray  # (M, J) m
    device_arms: np.ndarray  # (J,) m
    L: float  # device path length, m
    L0: float  # device rest length, m
    trunk_angle: float = float("nan")  # deg
    fiber_lengths: np.ndarray | None = None  # (M,) normalized
    fiber_velocities: np.ndarray | None = None  # (M,) normalized, + = shortening

    def __post_init__(self):
        self.tau = np.atleast_1d(np.asarray(self.tau, dtype=float))
        self.device_arms = np.atleast_1d(np.asarray(self.device_arms, dtype=float))
        self.moment_arms = np.asarray(self.moment_arms, dtype=float).reshape(-1, len(self.tau))
        if len(self.device_arms) != len(self.tau):
            raise DomainError("device moment arms must match the number of joints")

    @property
    def dL(self) -> float:
        return self.L - self.L0


@dataclass
class FrameSolution:
    activations: np.ndarray
    a_path: float
    F_device: float
    F_passive: float
    objective: float
    residual: np.ndarray  # per-joint equilibrium error, Nm
    multipliers: np.ndarray  # equality multipliers (one per joint)
    bound_multipliers: np.ndarray  # per variable; >0 at lower, <0 at upper bound

    @property
    def F_active(self) -> float:
        return self.F_device - self.F_passive


# --- QP ----------------------------------------------------------------------

@dataclass
class QPResult:
    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    iterations: int


def _kkt_solve(H, A, grad, free):
    """Step on the free variables keeping A p = 0; returns (p, lambda)."""
    n = len(grad)
    F = np.flatnonzero(free)
    m = A.shape[0]
    K = np.zeros((len(F) + m, len(F) + m))
    K[:len(F), :len(F)] = H[np.ix_(F, F)]
    K[:len(F), len(F):] = -A[:, F].T
    K[len(F):, :len(F)] = A[:, F]
    rhs = np.concatenate([-grad[F], np.zeros(m)])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    p = np.zeros(n)
    p[F] = sol[:len(F)]
    return p, sol[len(F):]


def active_set_qp(H, g, A, b, lo, hi, x0, max_iter: int = 500, tol: float = 1e-12) -> QPResult:
    """Primal active-set method for min 1/2 x'Hx + g'x, Ax = b, lo <= x <= hi.

    ``H`` must be positive definite and ``x0`` feasible.
    """
    H, g, A = np.asarray(H, float), np.asarray(g, float), np.atleast_2d(np.asarray(A, float))
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    x = np.clip(np.asarray(x0, float), lo, hi)
    n = len(x)
    at_lo = np.isclose(x, lo, rtol=0, atol=1e-12)
    at_hi = np.isclose(x, hi, rtol=0, atol=1e-12) & ~at_lo
    # keep the working set linearly independent of the equality rows
    W = np.zeros(n, dtype=bool)
    rows = A.copy()
    for i in np.flatnonzero(at_lo | at_hi):
        trial = np.vstack([rows, np.eye(n)[i]])
        if np.linalg.matrix_rank(trial) == len(trial):
            rows, W[i] = trial, True
    scale = max(1.0, np.abs(H).max())
    for it in range(max_iter):
        grad = H @ x + g
        p, lam = _kkt_solve(H, A, grad, ~W)
        if np.max(np.abs(p), initial=0.0) <= 1e-11 * max(1.0, np.abs(x).max()):
            lam = np.linalg.lstsq(A[:, ~W].T, grad[~W], rcond=None)[0] if (~W).any() \
                else np.linalg.lstsq(A.T, grad, rcond=None)[0]
            mu = grad - A.T @ lam
            mu[~W] = 0.0
            lower = W & np.isclose(x, lo, rtol=0, atol=1e-12)
            # wrong-signed multipliers: negative at a lower bound, positive at an upper one
            viol = np.where(lower, -mu, mu)
            viol[~W] = 0.0
            j = int(np.argmax(viol))
            if viol[j] <= tol * scale:
                return QPResult(x, lam, mu, it)
            W[j] = False
            continue
        alpha, block = 1.0, None
        for i in np.flatnonzero(~W):
            if p[i] < 0 and x[i] + p[i] < lo[i]:
                a = (lo[i] - x[i]) / p[i]
            elif p[i] > 0 and x[i] + p[i] > hi[i]:
                a = (hi[i] - x[i]) / p[i]
            else:
                continue
            if a < alpha:
                alpha, block = a, i
        x = x + alpha * p
        if block is not None:
            x[block] = lo[block] if p[block] < 0 else hi[block]
            W[block] = True
    raise RuntimeError("active-set QP did not converge")


def _frame_matrices(frame: LiftFrame, muscles: Sequence[MuscleDef], device: PathActuatorDef):
    M = len(muscles)
    if frame.moment_arms.shape[0] != M:
        raise DomainError(f"frame has moment arms for {frame.moment_arms.shape[0]} muscles, got {M}")
    lf = frame.fiber_lengths if frame.fiber_lengths is not None else np.ones(M)
    vf = frame.fiber_velocities if frame.fiber_velocities is not None else np.zeros(M)
    f = np.array([m.flv(lf[i], vf[i]) for i, m in enumerate(muscles)], dtype=float)
    F0 = np.array([m.F0 for m in muscles])
    A = np.column_stack([((f * F0)[:, None] * frame.moment_arms).T, frame.device_arms * device.F_path_max])
    F_passive = device.k_base * frame.dL
    b = frame.tau - frame.device_arms * F_passive
    lo = np.array([m.a_min for m in muscles] + [device.a_min])
    hi = np.array([m.a_max for m in muscles] + [device.a_max])
    return A, b, lo, hi, F_passive


def solve_frame(frame: LiftFrame, muscles: Sequence[MuscleDef], device: PathActuatorDef,
                frame_index: int | None = None) -> FrameSolution:
    A, b, lo, hi, F_passive = _frame_matrices(frame, muscles, device)
    n = A.shape[1]
    lp = linprog(np.zeros(n), A_eq=A, b_eq=b, bounds=list(zip(lo, hi)), method="highs")
    if lp.status != 0:
        reach = np.where(A > 0, A * hi, A * lo).sum(axis=1) + frame.device_arms * F_passive
        raise InfeasibleError(
            f"frame {frame_index if frame_index is not None else ''} at t={frame.t}: "
            f"required torque {frame.tau.tolist()} Nm exceeds achievable {reach.tolist()} Nm",
            max_torque=reach, frame_index=frame_index)
    res = active_set_qp(2.0 * np.eye(n), np.zeros(n), A, b, lo, hi, lp.x)
    x = res.x
    a_path = float(x[-1])
    return FrameSolution(
        activations=x[:-1],
        a_path=a_path,
        F_device=F_passive + a_path * device.F_path_max,
        F_passive=F_passive,
        objective=float(x @ x),
        residual=A @ x - b,
        multipliers=res.lam,
        bound_multipliers=res.mu,
    )


# --- trials ------------------------------------------------------------------

PROFILE_COLUMNS = ["percent_rom", "F_total_N", "F_passive_N", "F_active_N"]


def phase_mask(frames: Sequence[LiftFrame], phase: str) -> np.ndarray:
    """Flexion (angle rising) frames for lowering, extension frames for lifting."""
    t = np.array([f.t for f in frames])
    ang = np.array([f.trunk_angle for f in frames])
    if np.any(np.isnan(ang)):
        raise DomainError("frames need a trunk angle to split phases")
    # forward difference: a frame belongs to the motion that leaves it
    rate = np.zeros(len(ang))
    if len(ang) > 1:
        rate[:-1] = np.diff(ang) / np.diff(t)
        rate[-1] = rate[-2]
    if phase == "lowering":
        return rate > 0
    if phase == "lifting":
        return rate < 0
    raise DomainError(f"phase must be 'lowering' or 'lifting', got {phase!r}")


def solve_trial(frames: Sequence[LiftFrame], muscles, device: PathActuatorDef, phase: str,
                n_grid: int = 101) -> pd.DataFrame:
    """Optimal device force over 0-100 % RoM for one phase of a trial."""
    mask = phase_mask(frames, phase)
    if not mask.any():
        raise DomainError(f"trial has no {phase} frames")
    ang = np.array([f.trunk_angle for f in frames])
    lo_a, hi_a = ang.min(), ang.max()
    span = hi_a - lo_a if hi_a > lo_a else 1.0
    idx = np.flatnonzero(mask)
    sols = [solve_frame(frames[i], muscles, device, frame_index=int(i)) for i in idx]
    rom = 100.0 * (ang[idx] - lo_a) / span
    order = np.argsort(rom, kind="stable")
    rom = rom[order]
    total = np.array([s.F_device for s in sols])[order]
    passive = np.array([s.F_passive for s in sols])[order]
    grid = np.linspace(0.0, 100.0, n_grid)
    out = pd.DataFrame({
        "percent_rom": grid,
        "F_total_N": np.interp(grid, rom, total),
        "F_passive_N": np.interp(grid, rom, passive),
    })
    out["F_active_N"] = out["F_total_N"] - out["F_passive_N"]
    out.attrs["phase"] = phase
    out.attrs["max_residual"] = max(float(np.max(np.abs(s.residual))) for s in sols)
    return out


def profile_linearity(profile: pd.DataFrame):
    """(slope N per % RoM, R^2) of a straight-line fit to the total force."""
    x, y = profile["percent_rom"].to_numpy(), profile["F_total_N"].to_numpy()
    slope, icpt = np.polyfit(x, y, 1)
    ss_res = np.sum((y - (slope * x + icpt)) ** 2)
    ss_tot = np.sum((y - y.mean()) ** 2)
    return float(slope), float(1.0 - ss_res / ss_tot) if ss_tot > 0 else 1.0


# --- planar surrogate --------------------------------------------------------

@dataclass(frozen=True)
class WrapGeometry:
    """Strap from a pelvis anchor to a trunk anchor over a cylinder at the lumbar joint.

    Anchors sit ``offset`` m behind the joint axis, ``below`` m down the pelvis
    and ``above`` m up the trunk; flexion rotates the trunk anchor forward.
    """

    radius: float = 0.08
    offset: float = 0.09
    below: float = 0.15
    above: float = 0.35

    def _points(self, theta):
        A = np.array([self.offset, -self.below])
        c, s = math.cos(theta), math.sin(theta)
        B = np.array([c * self.offset - s * self.above, s * self.offset + c * self.above])
        return A, B

    def length(self, theta_rad: float) -> float:
        A, B = self._points(theta_rad)
        R = self.radius
        la, lb = np.linalg.norm(A), np.linalg.norm(B)
        # counter-clockwise sweep from A to B passes behind the joint
        sweep = (math.atan2(B[1], B[0]) - math.atan2(A[1], A[0])) % (2 * math.pi)
        arc = sweep - math.acos(R / la) - math.acos(R / lb)
        if arc <= 0:
            return float(np.linalg.norm(B - A))
        return float(math.sqrt(la**2 - R**2) + math.sqrt(lb**2 - R**2) + R * arc)

    def moment_arm(self, theta_rad: float, h: float = 1e-6) -> float:
        return (self.length(theta_rad + h) - self.length(theta_rad - h)) / (2 * h)


@dataclass(frozen=True)
class SurrogateParams:
    rom_max: float = 80.0  # deg
    trunk_mass: float = 40.0  # kg above L5/S1
    trunk_com: float = 0.30  # m
    object_mass: float = 15.0
    object_dist: float = 0.45
    lowering_time: float = 2.0  # s, flexion duration while carrying down
    lifting_time: float = 1.0  # s, extension duration while carrying up
    unloaded_time: float = 1.5  # s, the other half of each cycle
    pause: float = 0.3
    fs: float = 100.0
    wrap: WrapGeometry = WrapGeometry()
    k_base: float = 875.0  # N/m
    F_phys_max: float = 2600.0  # N, sized to carry the lowering demand unsaturated

    def muscles(self, flv=None) -> list[MuscleDef]:
        flv = flv or flv_scaler("gaussian_fl_linear_fv", width=0.5, v_max=1.0)
        return [
            MuscleDef("erector_spinae", 2500.0, flv=flv),
            MuscleDef("multifidus", 1800.0, flv=flv),
            MuscleDef("rectus_abdominis", 1500.0, flv=flv),
        ]

    def device(self) -> PathActuatorDef:
        return PathActuatorDef.from_peak(self.k_base, self.F_phys_max)


# moment arms (m) about the lumbar joint; + = extension
_ARMS = np.array([0.055, 0.045, -0.08])
_OPT_LEN = np.array([0.12, 0.09, 0.30])  # optimal fiber length, m
_VMAX = 10.0  # optimal lengths per second


def surrogate_trial(params: SurrogateParams | None = None, task: str = "lowering") -> list[LiftFrame]:
    """One flexion-extension cycle with the object held on the way down or up."""
    p = params or SurrogateParams()
    if task not in ("lowering", "lifting"):
        raise DomainError(f"task must be 'lowering' or 'lifting', got {task!r}")
    T_down = p.lowering_time if task == "lowering" else p.unloaded_time
    T_up = p.lifting_time if task == "lifting" else p.unloaded_time
    th_max = math.radians(p.rom_max)
    dt = 1.0 / p.fs
    segs = [(0.0, th_max, T_down, task == "lowering"), (th_max, th_max, p.pause, None),
            (th_max, 0.0, T_up, task == "lifting")]
    L0 = p.wrap.length(0.0)
    frames, t0 = [], 0.0
    for a, b, T, loaded in segs:
        n = int(round(T * p.fs))
        for k in range(n):
            tl = k * dt
            s = tl / T
            pos, vel, acc = min_jerk(s)
            th, thd, thdd = a + (b - a) * pos, (b - a) * vel / T, (b - a) * acc / T**2
            if loaded is None:
                loaded = task == "lifting"  # object is picked up at the bottom when lifting
            m_obj = p.object_mass if loaded else 0.0
            inertia = p.trunk_mass * p.trunk_com**2 + m_obj * p.object_dist**2
            tau = G * (p.trunk_mass * p.trunk_com + m_obj * p.object_dist) * math.sin(th) - inertia * thdd
            # extensors lengthen with flexion, flexor shortens
            dl = _ARMS * th
            frames.append(LiftFrame(
                t=t0 + tl,
                tau=[tau],
                moment_arms=_ARMS[:, None],
                device_arms=[p.wrap.moment_arm(th)],
                L=p.wrap.length(th),
                L0=L0,
                trunk_angle=math.degrees(th),
                fiber_lengths=1.0 + dl / _OPT_LEN * 0.5,
                fiber_velocities=-(_ARMS * thd) / (_OPT_LEN * _VMAX),
            ))
        t0 += n * dt
    return frames


# --- trial CSV ---------------------------------------------------------------

def write_trial(path, frames: Sequence[LiftFrame], muscles: Sequence[MuscleDef]) -> None:
    J = len(frames[0].tau)
    rows = []
    for f in frames:
        row = {"t": f.t, "trunk_angle_deg": f.trunk_angle, "L_m": f.L, "L0_m": f.L0}
        for j in range(J):
            row[f"tau_{j}"] = f.tau[j]
        for i, m in enumerate(muscles):
            for j in range(J):
                row[f"r_{m.name}_{j}"] = f.moment_arms[i, j]
        for j in range(J):
            row[f"r_device_{j}"] = f.device_arms[j]
        for i, m in enumerate(muscles):
            if f.fiber_lengths is not None:
                row[f"l_{m.name}"] = f.fiber_lengths[i]
            if f.fiber_velocities is not None:
                row[f"v_{m.name}"] = f.fiber_velocities[i]
        rows.append(row)
    pd.DataFrame(rows).to_csv(path, index=False, float_format="%.17g")


def read_trial(path, muscle_names: Sequence[str]) -> list[LiftFrame]:
    """Header-driven trial reader; joint count comes from the ``tau_*`` columns."""
    df = pd.read_csv(path, float_precision="round_trip")
    for col in ("t", "trunk_angle_deg", "L_m"):
        if col not in df.columns:
            raise SchemaError(f"{path}: missing column {col!r}")
    J = sum(1 for c in df.columns if c.startswith("tau_"))
    if J == 0:
        raise SchemaError(f"{path}: no tau_* columns")
    needed = [f"r_{m}_{j}" for m in muscle_names for j in range(J)] + [f"r_device_{j}" for j in range(J)]
    missing = [c for c in needed if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing column {missing[0]!r}")
    L0 = df["L0_m"].to_numpy() if "L0_m" in df.columns else np.full(len(df), df["L_m"].iloc[0])
    has_l = all(f"l_{m}" in df.columns for m in muscle_names)
    has_v = all(f"v_{m}" in df.columns for m in muscle_names)
    frames = []
    for k, r in enumerate(df.to_dict("records")):
        frames.append(LiftFrame(
            t=float(r["t"]),
            tau=[r[f"tau_{j}"] for j in range(J)],
            moment_arms=[[r[f"r_{m}_{j}"] for j in range(J)] for m in muscle_names],
            device_arms=[r[f"r_device_{j}"] for j in range(J)],
            L=float(r["L_m"]),
            L0=float(L0[k]),
            trunk_angle=float(r["trunk_angle_deg"]),
            fiber_lengths=np.array([r[f"l_{m}"] for m in muscle_names]) if has_l else None,
            fiber_velocities=np.array([r[f"v_{m}"] for m in muscle_names]) if has_v else None,
        ))
    return frames
