"""Variable-stiffness resistance band.

The band is a series spring network: a bottom region, a middle section made
of two side strips flanking the clutch window, and a top region.  When the
electroadhesive clutch engages it locks the window and the side strips drop
out of the load path.

Units: lengths in mm, forces in N, stiffness in N/mm, time in s (latency is
stored in ms to match how it is quoted on datasheets).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

from .errors import DomainError, InvalidGeometryError, NoSolutionError

REGIONS = ("bottom", "top", "side")


@dataclass(frozen=True)
class BandGeometry:
    length_bottom: float
    length_top: float
    length_side: float
    width_bottom: float
    width_top: float
    width_side: float  # per strip; two strips flank the window
    thickness: float
    youngs_modulus: float

    def validate(self) -> None:
        for name, value in vars(self).items():
            if not value > 0:
                raise InvalidGeometryError(f"{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class GeometryBounds:
    """Admissible region dimensions for the inverse design problem.

    Thickness and modulus are fixed by the stock material; widths and lengths
    are free within their ranges.
    """

    thickness: float = 2.0
    youngs_modulus: float = 1.6
    nominal_width: float = 50.0
    width_min: float = 5.0
    width_max: float = 60.0
    length_min: float = 10.0
    length_max: float = 300.0


def region_stiffness(geom: BandGeometry, region: str) -> float:
    """Axial stiffness w*t*E/L of one band region (a single side strip for ``side``)."""
    geom.validate()
    if region == "bottom":
        w, L = geom.width_bottom, geom.length_bottom
    elif region == "top":
        w, L = geom.width_top, geom.length_top
    elif region == "side":
        w, L = geom.width_side, geom.length_side
    else:
        raise ValueError(f"unknown region {region!r}; expected one of {REGIONS}")
    return w * geom.thickness * geom.youngs_modulus / L


@dataclass(frozen=True)
class BandModel:
    k_b: float
    k_t: float
    k_s: float
    clutch_engaged: bool = False
    clutch_latency: float = 300.0  # ms
    loss_factor: float = 0.0  # fraction of loading force lost on the unloading branch

    def __post_init__(self):
        for name in ("k_b", "k_t", "k_s"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if not 0.0 <= self.loss_factor < 1.0:
            raise DomainError("loss_factor must lie in [0, 1)")
        if self.clutch_latency < 0:
            raise DomainError("clutch_latency must be non-negative")

    @classmethod
    def from_geometry(cls, geom: BandGeometry, **kwargs) -> "BandModel":
        return cls(
            k_b=region_stiffness(geom, "bottom"),
            k_t=region_stiffness(geom, "top"),
            k_s=region_stiffness(geom, "side"),
            **kwargs,
        )

    @classmethod
    def from_stiffnesses(cls, k_disengaged: float, k_engaged: float, **kwargs) -> "BandModel":
        """Build a network that reproduces two measured effective stiffnesses."""
        k_b, k_t, k_s = split_region_stiffnesses(k_disengaged, k_engaged)
        return cls(k_b=k_b, k_t=k_t, k_s=k_s, **kwargs)

    @cached_property  # the model is frozen, so both stiffnesses are fixed
    def k_disengaged(self) -> float:
        return band_stiffness(replace(self, clutch_engaged=False))

    @cached_property
    def k_engaged(self) -> float:
        return band_stiffness(replace(self, clutch_engaged=True))


def band_stiffness(model: BandModel) -> float:
    if model.clutch_engaged:
        # clutch stiffness taken as infinite: the window section is rigid
        return 1.0 / (1.0 / model.k_b + 1.0 / model.k_t)
    return 1.0 / (1.0 / model.k_b + 1.0 / (2.0 * model.k_s) + 1.0 / model.k_t)


def passive_force(model: BandModel, elongation: float, unloading: bool = False) -> float:
    if elongation < 0:
        raise DomainError(f"elongation must be non-negative, got {elongation}")
    force = band_stiffness(model) * elongation
    if unloading:
        force *= 1.0 - model.loss_factor
    return force


def split_region_stiffnesses(k_disengaged: float, k_engaged: float) -> tuple[float, float, float]:
    """Two-stage split: equal bottom/top from the engaged target, then the side strips.

    Returns ``(k_b, k_t, k_s)``.
    """
    if not 0 < k_disengaged < k_engaged:
        if k_disengaged == k_engaged and k_disengaged > 0:
            raise NoSolutionError("equal targets need infinitely stiff side strips")
        raise DomainError("targets must satisfy 0 < k_disengaged < k_engaged")
    k_b = k_t = 2.0 * k_engaged
    compliance_side = 1.0 / k_disengaged - 1.0 / k_engaged
    k_s = 1.0 / (2.0 * compliance_side)
    return k_b, k_t, k_s


def _region_dims(k: float, bounds: GeometryBounds) -> tuple[float, float]:
    # w*t*E/L = k; keep the nominal width if the resulting length fits
    te = bounds.thickness * bounds.youngs_modulus
    width = bounds.nominal_width
    length = width * te / k
    if length > bounds.length_max:
        length = bounds.length_max
        width = k * length / te
    elif length < bounds.length_min:
        length = bounds.length_min
        width = k * length / te
    if not bounds.width_min <= width <= bounds.width_max:
        raise NoSolutionError(
            f"stiffness {k:.4g} N/mm not reachable with widths in "
            f"[{bounds.width_min}, {bounds.width_max}] and lengths in "
            f"[{bounds.length_min}, {bounds.length_max}] mm"
        )
    return width, length


def solve_geometry_for_targets(
    k_disengaged_target: float,
    k_engaged_target: float,
    bounds: GeometryBounds | None = None,
) -> BandGeometry:
    bounds = bounds or GeometryBounds()
    k_b, k_t, k_s = split_region_stiffnesses(k_disengaged_target, k_engaged_target)
    w_b, L_b = _region_dims(k_b, bounds)
    w_t, L_t = _region_dims(k_t, bounds)
    w_s, L_s = _region_dims(k_s, bounds)
    return BandGeometry(
        length_bottom=L_b,
        length_top=L_t,
        length_side=L_s,
        width_bottom=w_b,
        width_top=w_t,
        width_side=w_s,
        thickness=bounds.thickness,
        youngs_modulus=bounds.youngs_modulus,
    )


class ClutchedBand:
    """Band with a latched clutch command and engagement latency.

    Engagement freezes the window section at its current stretch, so force
    stays continuous: ``F = F_engage + k_engaged * (l - l_engage)``.  Releasing
    the clutch lets the side strips relax back to the disengaged curve.
    """

    def __init__(self, model: BandModel, engaged: bool = False):
        self.model = model
        self.engaged = engaged
        self._pending: tuple[bool, float] | None = None
        self._l_engage = 0.0
        self._f_engage = 0.0

    @property
    def latency_s(self) -> float:
        return self.model.clutch_latency / 1000.0

    def command(self, engage: bool, t: float) -> None:
        if engage == self.engaged and self._pending is None:
            return
        if self._pending is not None and self._pending[0] == engage:
            return
        self._pending = (engage, t)

    def update(self, t: float, elongation: float) -> bool:
        """Apply any command whose latency has elapsed by time ``t``."""
        if self._pending is not None:
            engage, t_cmd = self._pending
            if t >= t_cmd + self.latency_s - 1e-12:
                self._pending = None
                if engage and not self.engaged:
                    self._l_engage = elongation
                    self._f_engage = self.model.k_disengaged * elongation
                self.engaged = engage
        return self.engaged

    def force(self, elongation: float, unloading: bool = False) -> float:
        if elongation < 0:
            raise DomainError(f"elongation must be non-negative, got {elongation}")
        m = self.model
        if self.engaged:
            force = max(0.0, self._f_engage + m.k_engaged * (elongation - self._l_engage))
        else:
            force = m.k_disengaged * elongation
        if unloading:
            force *= 1.0 - m.loss_factor
        return force
