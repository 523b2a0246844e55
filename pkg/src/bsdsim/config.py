"""Run configuration: a typed INI schema, builders for module objects, and manifests.

Every section and key is declared in :data:`SCHEMA`; anything else is
rejected.  Empty values mean "unset" for optional keys.  A manifest is the
effective configuration written back as INI plus a ``[manifest]`` section
(command, versions) that the parser skips, so a manifest re-parses to the
configuration it was written from.
"""
from __future__ import annotations

import configparser
import io
import platform
from dataclasses import dataclass, field

from .controller import ControllerConfig
from .errors import ConfigError
from .liftopt import SurrogateParams
from .pneumo import FlowPath, GasConstants, IpamGeometry
from .vea import DeviceConfig, DynamicScenario, ForceSurface, QuasiStaticScenario

_OPT = object()  # marker for optional keys: default None, empty string in files


def _f(default):
    return (float, default)


SCHEMA: dict[str, dict[str, tuple]] = {
    "device": {
        "band_profile": (str, "measured"),
        "k_measured_disengaged": _f(0.875),
        "k_measured_engaged": _f(1.313),
        "k_design_disengaged": _f(0.8),
        "k_design_engaged": _f(1.6),
        "loss_factor": _f(0.0),
        "clutch_latency_ms": _f(300.0),
        "surface_a": _f(-1.4318), "surface_b": _f(1.2213), "surface_c": _f(0.0100),
        "surface_d": _f(0.0076), "surface_e": _f(0.0022), "surface_f": _f(-0.0348),
        "ipam_radius_m": _f(6.25e-3),
        "ipam_rest_length_m": _f(0.2),
        "exhaust_cd": _f(0.8),
        "exhaust_area_m2": _f(1.0533e-6),
        "inflow_cd": _f(0.8),
        "inflow_area_m2": _f(1.0533e-6),
        "gamma": _f(1.4),
        "gas_R": _f(287.05),
        "gas_T": _f(293.15),
        "p_atm_pa": _f(101325.0),
        "reservoir_psig": _f(90.0),
        "pump_rate_kg_s": _f(6.0e-5),
        "inflate_psig": _f(50.0),
    },
    "controller": {
        "rom_max_deg": _f(90.0),
        "deadband_psi": _f(1.0),
        "reservoir_setpoint_psig": _f(90.0),
        "track_cycles": (bool, True),
        "dwell": (int, 10),
    },
    "bench": {
        "profile": (str, "never"),  # never | always | engaged-at-<mm>mm | <mm>
        "peak_mm": _f(110.0),
        "rate_mm_min": _f(60.0),
        "hold_s": _f(2.0),
        "pressure_psig": _f(50.0),
        "deflate_target_psig": (float, _OPT),
        "dt": _f(0.01),
    },
    "dynamic": {
        "peak_mm": _f(100.0),
        "rate_mm_min": _f(2000.0),
        "deflate_delay_ms": _f(300.0),
        "deflate_target_psig": _f(0.0),
        "inflate_psig": _f(50.0),
        "dt": _f(1e-3),
    },
    "deflate": {
        "from_psig": _f(50.0),
        "to_psig": _f(0.0),
        "elongation_mm": _f(110.0),
        "duration_s": _f(2.0),
        "dt": _f(1e-3),
    },
    "calibrate": {
        "from_psig": _f(50.0),
        "to_psig": _f(0.0),
        "duration_s": _f(0.8),
        "elongation_mm": _f(110.0),
        "cd": _f(0.8),
        "dt": _f(1e-3),
    },
    "synth": {
        "seed": (int, 0),
        "rom_max_deg": _f(80.0),
        "cycle_duration_s": _f(3.0),
        "stand_duration_s": _f(2.0),
        "n_trials": (int, 10),
        "train_fraction": _f(0.7),
    },
    "forest": {
        "n_trees": (int, 100),
        "max_depth": (int, 12),
        "min_leaf": (int, 2),
        "seed": (int, 42),
        "stride": (int, 3),
    },
    "optimize": {
        "phase": (str, "lowering"),
        "trial": (str, "surrogate"),  # "surrogate" or a trial CSV path
        "k_base_n_m": _f(875.0),
        "f_phys_max_n": _f(2600.0),
        "object_mass_kg": _f(15.0),
        "rom_max_deg": _f(80.0),
    },
    "replay": {
        "weight": (str, "kg15"),  # synthetic trial weight when no trace is given
        "seed": (int, 0),
        "models": (str, ""),  # directory with state.json / weight.json; empty = label oracle
        "elongation_map": (str, "linear"),  # "linear" or "deg:mm,deg:mm,..."
    },
    "io": {
        "data": (str, ""),
        "model": (str, ""),
        "trace": (str, ""),
    },
}
MANIFEST_SECTION = "manifest"


def _parse_value(section, key, raw: str):
    typ, default = SCHEMA[section][key]
    raw = raw.strip()
    if default is _OPT and raw == "":
        return None
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {typ.__name__}") from None


def _format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {
        s: {k: (None if d is _OPT else d) for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()
    })

    def __getitem__(self, section):
        return self.values[section]

    def set(self, section: str, key: str, value) -> None:
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown setting [{section}] {key}")
        if isinstance(value, str):
            value = _parse_value(section, key, value)
        self.values[section][key] = value

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    # -- text form ------------------------------------------------------------
    def to_ini(self, manifest: dict | None = None) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for s, keys in self.values.items():
            cp[s] = {k: _format_value(v) for k, v in keys.items()}
        if manifest:
            cp[MANIFEST_SECTION] = {k: str(v) for k, v in manifest.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed configuration: {exc}") from None
        cfg = cls()
        for s in cp.sections():
            if s == MANIFEST_SECTION:
                continue
            if s not in SCHEMA:
                raise ConfigError(f"unknown section [{s}]")
            for k, raw in cp[s].items():
                if k not in SCHEMA[s]:
                    raise ConfigError(f"unknown key [{s}] {k}")
                cfg.values[s][k] = _parse_value(s, k, raw)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_ini(fh.read())

    # -- builders -------------------------------------------------------------
    def device(self) -> DeviceConfig:
        d = self["device"]
        try:
            gas = GasConstants(gamma=d["gamma"], R=d["gas_R"], T=d["gas_T"], P_atm=d["p_atm_pa"])
            return DeviceConfig(
                band_profile=d["band_profile"],
                k_measured_disengaged=d["k_measured_disengaged"],
                k_measured_engaged=d["k_measured_engaged"],
                k_design_disengaged=d["k_design_disengaged"],
                k_design_engaged=d["k_design_engaged"],
                loss_factor=d["loss_factor"],
                clutch_latency_ms=d["clutch_latency_ms"],
                surface=ForceSurface(*(d[f"surface_{c}"] for c in "abcdef")),
                ipam=IpamGeometry(d["ipam_radius_m"], d["ipam_rest_length_m"]),
                exhaust=FlowPath(d["exhaust_cd"], d["exhaust_area_m2"]),
                inflow=FlowPath(d["inflow_cd"], d["inflow_area_m2"]),
                gas=gas,
                reservoir_psig=d["reservoir_psig"],
                pump_rate=d["pump_rate_kg_s"],
                inflate_psig=d["inflate_psig"],
            )
        except ValueError as exc:
            raise ConfigError(f"[device] {exc}") from None

    def controller(self) -> ControllerConfig:
        c = self["controller"]
        return ControllerConfig(rom_max=c["rom_max_deg"], deadband=c["deadband_psi"],
                                inflate_psig=self["device"]["inflate_psig"],
                                reservoir_setpoint=c["reservoir_setpoint_psig"],
                                track_cycles=c["track_cycles"])

    def bench(self) -> QuasiStaticScenario:
        b = self["bench"]
        return QuasiStaticScenario(
            peak=b["peak_mm"], rate=b["rate_mm_min"], hold=b["hold_s"],
            clutch_engage_at=parse_profile(b["profile"]), pressure_hold=b["pressure_psig"],
            deflate_target=b["deflate_target_psig"], dt=b["dt"])

    def dynamic(self) -> DynamicScenario:
        d = self["dynamic"]
        return DynamicScenario(peak=d["peak_mm"], rate=d["rate_mm_min"],
                               deflate_delay=d["deflate_delay_ms"],
                               deflate_target=d["deflate_target_psig"],
                               inflate_psig=d["inflate_psig"], dt=d["dt"])

    def surrogate(self) -> SurrogateParams:
        o = self["optimize"]
        return SurrogateParams(rom_max=o["rom_max_deg"], object_mass=o["object_mass_kg"],
                               k_base=o["k_base_n_m"], F_phys_max=o["f_phys_max_n"])


def parse_profile(profile: str):
    """Clutch profile name to a ``clutch_engage_at`` value."""
    p = str(profile).strip().lower()
    if p in ("never", "disengaged"):
        return "never"
    if p in ("always", "engaged"):
        return "always"
    if p.startswith("engaged-at-"):
        p = p[len("engaged-at-"):]
    if p.endswith("mm"):
        p = p[:-2]
    try:
        return float(p)
    except ValueError:
        raise ConfigError(f"unknown clutch profile {profile!r}") from None


def parse_elongation_map(text: str):
    from .replay import ElongationMap
    s = text.strip().lower()
    if s in ("", "linear"):
        return None
    try:
        pts = [tuple(float(x) for x in item.split(":")) for item in s.split(",")]
        return ElongationMap(tuple(p[0] for p in pts), tuple(p[1] for p in pts))
    except (ValueError, IndexError):
        raise ConfigError(f"elongation map must be 'linear' or 'deg:mm,...', got {text!r}") from None


def versions() -> dict:
    import numpy
    import pandas
    import scipy

    from . import __version__
    return {"bsdsim": __version__, "python": platform.python_version(),
            "numpy": numpy.__version__, "pandas": pandas.__version__, "scipy": scipy.__version__}
