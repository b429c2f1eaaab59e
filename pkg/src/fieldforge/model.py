"""Physics assignment model: regions, materials, boundary conditions, excitations.

Materials carry typed properties whose values are constants, constant 2x2
tensors, or functions of space, time and named field values (for nonlinear
laws). Containers keep insertion order so downstream assembly is
bit-reproducible.
"""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Union

import numpy as np

EPS0 = 8.8541878128e-12   # vacuum permittivity, F/m
MU0 = 4e-7 * math.pi      # vacuum permeability, H/m
NU0 = 1.0 / MU0           # vacuum reluctivity, m/H
KELVIN_OFFSET = 273.15


class ModelError(Exception):
    """Inconsistent material, boundary condition or region definition."""


def _is_tensor(value) -> bool:
    return isinstance(value, np.ndarray) or (
        hasattr(value, "__len__") and not isinstance(value, str))


def _validate_tensor(t: np.ndarray, label: str) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (2, 2):
        raise ModelError(f"{label}: tensor must be 2x2, got {t.shape}")
    if abs(t[0, 1] - t[1, 0]) > 1e-12 * max(np.abs(t).max(), 1.0):
        raise ModelError(f"{label}: tensor must be symmetric")
    if np.linalg.eigvalsh(t).min() <= 0:
        raise ModelError(f"{label}: tensor must be positive definite")
    return t


class Property:
    """One material property.

    ``value`` is a positive scalar, a symmetric positive-definite 2x2
    tensor, or a callable ``f(point, time, **field_args)`` returning a
    scalar. ``differential`` optionally maps a field-argument name to the
    analytic derivative of the scalar value with respect to it (same call
    signature as ``value``).
    """

    def __init__(self, value, differential: Optional[Dict[str, Callable]] = None):
        label = type(self).__name__
        self.differential = dict(differential) if differential else {}
        if callable(value):
            self.value = value
            sig = inspect.signature(value)
            params = list(sig.parameters.values())
            if len(params) < 2:
                raise ModelError(
                    f"{label}: property functions take (point, time, **field_args)")
            self.field_args = tuple(
                p.name for p in params[2:]
                if p.kind in (p.POSITIONAL_OR_KEYWORD, p.KEYWORD_ONLY)
                and p.default is p.empty
            )
        elif _is_tensor(value):
            self.value = _validate_tensor(value, label)
            self.field_args = ()
        else:
            value = float(value)
            if value <= 0:
                raise ModelError(f"{label}: constant value must be > 0, got {value}")
            self.value = value
            self.field_args = ()
        if self.differential and not callable(self.value):
            raise ModelError(f"{label}: differential requires a function value")

    @property
    def is_function(self) -> bool:
        return callable(self.value)

    @property
    def is_tensor(self) -> bool:
        return isinstance(self.value, np.ndarray)

    def evaluate(self, point, time: float = 0.0, field_args=None):
        if not callable(self.value):
            return self.value
        field_args = field_args or {}
        missing = [a for a in self.field_args if a not in field_args]
        if missing:
            raise ModelError(
                f"{type(self).__name__}: missing field argument(s) {missing}")
        out = self.value(point, time, **field_args)
        if _is_tensor(out):
            raise ModelError(
                f"{type(self).__name__}: function values must return scalars "
                "(anisotropy is supported for constant tensors only)")
        return out

    def evaluate_differential(self, arg: str, point, time: float = 0.0,
                              field_args=None):
        if arg not in self.differential:
            raise ModelError(
                f"{type(self).__name__}: no differential w.r.t. '{arg}'")
        return self.differential[arg](point, time, **(field_args or {}))

    def __repr__(self):
        return f"{type(self).__name__}({self.value!r})"


class Permittivity(Property):
    """Electric permittivity, F/m."""


class Conductivity(Property):
    """Electric conductivity, S/m."""


class Reluctivity(Property):
    """Magnetic reluctivity (inverse permeability), m/H."""


class ThermalConductivity(Property):
    """Thermal conductivity, W/(m K)."""


class VolumetricHeatCapacity(Property):
    """Volumetric heat capacity, J/(m^3 K)."""


PROPERTY_KINDS = (Permittivity, Conductivity, Reluctivity,
                  ThermalConductivity, VolumetricHeatCapacity)


class Material:
    """Named set of material properties, at most one per kind."""

    def __init__(self, name: str, *properties: Property):
        self.name = name
        self.id: Optional[int] = None
        self.properties: Dict[type, Property] = {}
        for prop in properties:
            kind = type(prop)
            if kind in self.properties:
                raise ModelError(f"material '{name}': duplicate {kind.__name__}")
            self.properties[kind] = prop

    def has(self, kind: type) -> bool:
        return kind in self.properties

    def get(self, kind: type) -> Property:
        try:
            return self.properties[kind]
        except KeyError:
            raise ModelError(
                f"material '{self.name}' has no {kind.__name__}") from None

    def __repr__(self):
        kinds = ", ".join(k.__name__ for k in self.properties)
        return f"Material({self.name!r}: {kinds})"


def evaluate_property(material: Material, kind: type, point,
                      time: float = 0.0, field_args=None):
    """Evaluate one property kind of a material at a point/time/field state."""
    return material.get(kind).evaluate(point, time, field_args)


def as_tensor(value) -> np.ndarray:
    """Broadcast a scalar coefficient to an isotropic 2x2 tensor."""
    if isinstance(value, np.ndarray) and value.shape == (2, 2):
        return value
    return float(value) * np.eye(2)


# --- boundary conditions ----------------------------------------------------

TimeValue = Union[float, Callable[[float], float]]


def value_at(value: TimeValue, time: float) -> float:
    return float(value(time)) if callable(value) else float(value)


@dataclass
class Dirichlet:
    """Prescribed potential/temperature; constant or function of time."""
    value: TimeValue
    name: str = ""
    id: Optional[int] = None


@dataclass
class Neumann:
    """Prescribed outward flux density; constant or function of time."""
    flux: TimeValue
    name: str = ""
    id: Optional[int] = None


@dataclass
class Robin:
    """alpha*u + beta*flux = g on the boundary; beta must be nonzero."""
    alpha: float
    beta: float
    g: TimeValue = 0.0
    name: str = ""
    id: Optional[int] = None

    def __post_init__(self):
        if self.beta == 0:
            raise ModelError("Robin condition requires beta != 0")


@dataclass
class Floating:
    """Equipotential surface whose common value is an unknown."""
    name: str = ""
    id: Optional[int] = None


@dataclass
class Periodic:
    """Slave boundary tied to a master region with sign +1."""
    master: int
    name: str = ""
    id: Optional[int] = None
    sign: int = 1


@dataclass
class AntiPeriodic(Periodic):
    """Slave boundary tied to a master region with sign -1."""
    sign: int = -1


def evaluate_bc(bc, time: float):
    """Value of a Dirichlet/Neumann condition, or (alpha, beta, g) for Robin."""
    if isinstance(bc, Dirichlet):
        return value_at(bc.value, time)
    if isinstance(bc, Neumann):
        return value_at(bc.flux, time)
    if isinstance(bc, Robin):
        return (float(bc.alpha), float(bc.beta), value_at(bc.g, time))
    raise ModelError(
        f"evaluate_bc is undefined for {type(bc).__name__} conditions")


# --- excitations -------------------------------------------------------------

SourceValue = Union[float, Callable]  # constant or f(point, time)


def source_at(value: SourceValue, point, time: float) -> float:
    return float(value(point, time)) if callable(value) else float(value)


@dataclass
class ChargeDensity:
    value: SourceValue  # C/m^3
    name: str = ""
    id: Optional[int] = None


@dataclass
class CurrentDensity:
    value: SourceValue  # A/m^2
    name: str = ""
    id: Optional[int] = None


@dataclass
class HeatSourceDensity:
    value: SourceValue  # W/m^3
    name: str = ""
    id: Optional[int] = None


@dataclass
class StrandedConductor:
    """Homogenized winding: N turns spread over a 2D cross-section region."""
    turns: int
    dc_resistance: float = 0.0  # ohm
    name: str = ""
    id: Optional[int] = None

    def __post_init__(self):
        if self.turns < 1:
            raise ModelError("stranded conductor needs turns >= 1")
        if self.dc_resistance < 0:
            raise ModelError("stranded conductor needs dc_resistance >= 0")


# --- containers --------------------------------------------------------------


class Container:
    """Insertion-ordered id -> object map with name lookup."""

    item_label = "item"

    def __init__(self, *items):
        self._items: Dict[int, object] = {}
        for item in items:
            self.add(item)

    def add(self, item):
        if item.id is None:
            item.id = max(self._items, default=0) + 1
        if item.id in self._items:
            raise ModelError(f"duplicate {self.item_label} id {item.id}")
        self._items[item.id] = item
        return item

    def get(self, item_id: int):
        try:
            return self._items[item_id]
        except KeyError:
            raise ModelError(f"no {self.item_label} with id {item_id}") from None

    def by_name(self, name: str):
        matches = [x for x in self._items.values()
                   if getattr(x, "name", None) == name]
        if len(matches) > 1:
            raise ModelError(
                f"ambiguous name match: {len(matches)} {self.item_label}s "
                f"named '{name}'")
        return matches[0] if matches else None

    def __contains__(self, item_id: int) -> bool:
        return item_id in self._items

    def __iter__(self):
        return iter(self._items.values())

    def __len__(self) -> int:
        return len(self._items)

    def ids(self):
        return list(self._items)


class Materials(Container):
    item_label = "material"


class BoundaryConditions(Container):
    item_label = "boundary condition"


class Excitations(Container):
    item_label = "excitation"


@dataclass
class Region:
    """Discrete region: binds mesh entities of one tag to physics.

    Carries at most one material, one boundary condition and one
    excitation; assigning a new one replaces the previous.
    """
    id: int
    dim: int
    mat: Optional[int] = None
    bc: Optional[int] = None
    exci: Optional[int] = None


class Regions(Container):
    item_label = "region"


def regions_from_mesh(mesh) -> Regions:
    """One Region per distinct tag found on the mesh entities."""
    regions = Regions()
    seen = {}
    for tag, dim in mesh.region_tags():
        if tag in seen and seen[tag] != dim:
            raise ModelError(
                f"region tag {tag} used for entities of dimension "
                f"{seen[tag]} and {dim}")
        if tag not in seen:
            seen[tag] = dim
            regions.add(Region(id=tag, dim=dim))
    return regions


# --- shipped nonlinear material and waveforms --------------------------------


@dataclass(frozen=True)
class FgmParameters:
    """Parameters of the microvaristor-style field-grading conductivity law."""
    sigma_ref: float = 1e-10       # S/m at zero field and reference temperature
    temp_coeff: float = 0.03       # 1/K
    t_ref: float = 293.15          # K
    e_onset: float = 2e5           # V/m, lower switching threshold
    e_saturation: float = 4e5      # V/m, upper switching threshold
    exponent: float = 4.0

    def __post_init__(self):
        if not self.e_onset < self.e_saturation:
            raise ModelError("fgm law needs e_onset < e_saturation")
        if self.exponent <= 1:
            raise ModelError("fgm law needs exponent > 1")


def fgm_conductivity(e_mag, temperature, params: FgmParameters = FgmParameters()):
    """Field- and temperature-dependent conductivity of a grading material.

    sigma = sigma_ref * exp(c*(T - T_ref)) * (1 + (E/E1)^a) / (1 + (E/E2)^a)
    with E1 < E2 and a > 1; strictly increasing in both E and T.
    """
    p = params
    e_mag = np.asarray(e_mag, dtype=np.float64)
    thermal = np.exp(p.temp_coeff * (np.asarray(temperature) - p.t_ref))
    ratio = (1.0 + (e_mag / p.e_onset) ** p.exponent) / \
            (1.0 + (e_mag / p.e_saturation) ** p.exponent)
    out = p.sigma_ref * thermal * ratio
    return float(out) if np.ndim(out) == 0 else out


def fgm_conductivity_derivative(e_mag, temperature,
                                params: FgmParameters = FgmParameters()):
    """Analytic d(sigma)/dE of the grading law."""
    p = params
    e_mag = np.asarray(e_mag, dtype=np.float64)
    thermal = np.exp(p.temp_coeff * (np.asarray(temperature) - p.t_ref))
    a = p.exponent
    denom = (1.0 + (e_mag / p.e_saturation) ** a) ** 2
    num = a * e_mag ** (a - 1.0) * (p.e_onset ** -a - p.e_saturation ** -a)
    out = p.sigma_ref * thermal * num / denom
    return float(out) if np.ndim(out) == 0 else out


def make_fgm_material(name: str = "FGM",
                      params: FgmParameters = FgmParameters(),
                      relative_permittivity: float = 12.0,
                      thermal_conductivity: float = 0.5,
                      volumetric_heat_capacity: float = 2e6) -> Material:
    """Field grading material with nonlinear conductivity sigma(E, T).

    The conductivity function takes the field magnitude ``E`` (V/m) and
    temperature ``T`` (K) as named field arguments and ships its analytic
    dsigma/dE differential for Newton linearization.
    """
    def sigma(point, time, E, T):
        return fgm_conductivity(E, T, params)

    def dsigma_de(point, time, E, T):
        return fgm_conductivity_derivative(E, T, params)

    return Material(
        name,
        Conductivity(sigma, differential={"E": dsigma_de}),
        Permittivity(relative_permittivity * EPS0),
        ThermalConductivity(thermal_conductivity),
        VolumetricHeatCapacity(volumetric_heat_capacity),
    )


def lightning_impulse(peak: float, front_tau: float = 0.4e-6,
                      tail_tau: float = 20e-6) -> Callable[[float], float]:
    """Double-exponential impulse normalized so its maximum equals ``peak``.

    v(t) = peak * k * (exp(-t/tail_tau) - exp(-t/front_tau)), v(0) = 0.
    """
    if not 0 < front_tau < tail_tau:
        raise ModelError("impulse needs 0 < front_tau < tail_tau")
    t_peak = math.log(tail_tau / front_tau) / (1.0 / front_tau - 1.0 / tail_tau)
    k = 1.0 / (math.exp(-t_peak / tail_tau) - math.exp(-t_peak / front_tau))

    def impulse(t: float) -> float:
        return peak * k * (math.exp(-t / tail_tau) - math.exp(-t / front_tau))

    return impulse


WAVEFORMS = {
    "lightning_impulse": lightning_impulse,
}
