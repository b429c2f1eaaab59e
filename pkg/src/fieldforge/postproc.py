"""Solution classes, derived fields, integral quantities, probes, exporters.

Solutions hold DoF vectors plus their problem; derived quantities
(element fields, energies, Joule losses, point probes) are module
functions. Exporters write legacy ASCII VTK unstructured grids and
RFC-4180-style CSV with full round-trip float precision.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import femcore
from .femcore import NodalFunctionSpace, VectorPotentialSpace
from .model import Conductivity, Permittivity, Reluctivity
from .sparsela import CsrMatrix

TWO_PI = 2.0 * np.pi


class PostprocError(Exception):
    """Requested quantity is undefined for this solution."""


@dataclass
class StaticSolution:
    """Single DoF vector of a static solve."""
    problem: object
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (self.problem.mesh.num_nodes,):
            raise PostprocError("solution length does not match mesh nodes")

    @property
    def kind(self) -> str:
        return self.problem.kind


@dataclass
class HarmonicSolution:
    """Complex phasor DoF vector at one angular frequency."""
    problem: object
    values: np.ndarray
    omega: float
    circuit_values: Optional[np.ndarray] = None
    circuit_names: Optional[List[str]] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != (self.problem.mesh.num_nodes,):
            raise PostprocError("solution length does not match mesh nodes")

    @property
    def kind(self) -> str:
        return self.problem.kind


@dataclass
class TransientSolution:
    """Per-step DoF vectors over the problem's time axis."""
    problem: object
    times: np.ndarray
    values: np.ndarray                                  # (steps, ndof)
    element_conductivity: Optional[np.ndarray] = None   # (steps, elements)
    newton_iterations: Optional[List[int]] = None
    newton_histories: Optional[List[List[float]]] = None
    outer_iterations: Optional[List[int]] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values)
        n = self.problem.mesh.num_nodes
        if self.values.shape != (len(self.times), n):
            raise PostprocError("transient solution shape mismatch")

    @property
    def kind(self) -> str:
        return self.problem.kind

    def step_at(self, time: float) -> int:
        scale = max(abs(self.times[0]), abs(self.times[-1]), 1e-30)
        hits = np.flatnonzero(np.abs(self.times - time) <= 1e-12 * scale)
        if not len(hits):
            raise PostprocError(f"time {time} is not on the time axis")
        return int(hits[0])


def _field_vector(solution, step) -> np.ndarray:
    if isinstance(solution, TransientSolution):
        return solution.values[-1 if step is None else step]
    return solution.values


def e_field(solution, step: Optional[int] = None) -> np.ndarray:
    """Element-wise electric field E = -grad(u), V/m."""
    if solution.kind not in ("electrostatic", "current_flow"):
        raise PostprocError(f"e_field undefined for kind '{solution.kind}'")
    space = NodalFunctionSpace(solution.problem.mesh)
    return -space.element_gradient(_field_vector(solution, step))


def d_field(solution, step: Optional[int] = None) -> np.ndarray:
    """Element-wise displacement field D = eps * E, C/m^2."""
    e = e_field(solution, step)
    problem = solution.problem
    space = NodalFunctionSpace(problem.mesh)
    eps, tensors = femcore._element_coefficients(
        space, problem.regions, problem.materials, Permittivity)
    d = eps[:, None] * e
    for idx, tensor in tensors:
        d[idx] = e[idx] @ tensor.T
    return d


def b_field(solution, step: Optional[int] = None) -> np.ndarray:
    """Element-wise magnetic flux density, T (complex for harmonics).

    Cartesian: B = (dA_z/dy, -dA_z/dx). Axisymmetric (w-convention):
    B_rho = -(1/(2 pi rho_c)) dw/dz, B_z = (1/(2 pi rho_c)) dw/drho.
    """
    if solution.kind != "magnetic":
        raise PostprocError(f"b_field undefined for kind '{solution.kind}'")
    mesh = solution.problem.mesh
    space = VectorPotentialSpace(mesh, getattr(solution.problem, "length", 1.0))
    a = _field_vector(solution, step)
    if np.iscomplexobj(a):
        grad = (space.element_gradient(a.real)
                + 1j * space.element_gradient(a.imag))
    else:
        grad = space.element_gradient(a)
    if mesh.axisymmetric:
        inv = 1.0 / (TWO_PI * space.centroids[:, 0])
        return np.stack([-inv * grad[:, 1], inv * grad[:, 0]], axis=1)
    return np.stack([grad[:, 1], -grad[:, 0]], axis=1)


def instantaneous(phasor: np.ndarray, phase: float = 0.0) -> np.ndarray:
    """Time-domain value of a phasor field at the given phase (radians)."""
    return np.real(np.asarray(phasor) * np.exp(1j * phase))


def _energy_operator(solution) -> CsrMatrix:
    problem = solution.problem
    if solution.kind == "magnetic":
        space = VectorPotentialSpace(problem.mesh,
                                     getattr(problem, "length", 1.0))
        op = femcore.curlcurl_operator(space, problem.regions,
                                       problem.materials, Reluctivity)
    else:
        space = NodalFunctionSpace(problem.mesh)
        op = femcore.divgrad_operator(space, problem.regions,
                                      problem.materials, Permittivity)
    return op.matrix


def energy(solution, step: Optional[int] = None) -> float:
    """Field energy W = 1/2 Re(u^H K u), J.

    K is the reluctivity curl-curl operator for magnetic solutions and
    the permittivity div-grad operator otherwise; harmonic phasors use
    the same 1/2 Re(.^H .) convention.
    """
    u = _field_vector(solution, step)
    K = _energy_operator(solution)
    return float(0.5 * np.real(np.vdot(u, K @ u)))


def joule_loss_power(solution, time: Optional[float] = None
                     ) -> Tuple[float, np.ndarray]:
    """Total Joule loss (W) and per-element density (W/m^3).

    Transient current-flow solutions use the per-step conductivities
    recorded during the solve; static/harmonic ones evaluate the material
    law at the solution's field strength. Harmonic phasors carry the 1/2
    factor.
    """
    problem = solution.problem
    if solution.kind != "current_flow":
        raise PostprocError(
            f"joule_loss_power undefined for kind '{solution.kind}'")
    space = NodalFunctionSpace(problem.mesh)
    if isinstance(solution, TransientSolution):
        step = solution.step_at(0.0 if time is None else time)
        u = solution.values[step]
        if solution.element_conductivity is not None:
            sigma = solution.element_conductivity[step]
        else:
            e = -space.element_gradient(u)
            e_mag = np.hypot(e[:, 0], e[:, 1])
            sigma, _ = femcore._element_coefficients(
                space, problem.regions, problem.materials, Conductivity,
                field_args={"E": e_mag}, time=solution.times[step])
        factor = 1.0
    else:
        u = solution.values
        grad = space.element_gradient(np.real(u))
        if np.iscomplexobj(u):
            grad = grad + 1j * space.element_gradient(np.imag(u))
        e_mag = np.sqrt(np.abs(grad[:, 0]) ** 2 + np.abs(grad[:, 1]) ** 2)
        sigma, _ = femcore._element_coefficients(
            space, problem.regions, problem.materials, Conductivity,
            field_args={"E": e_mag})
        factor = 0.5 if np.iscomplexobj(u) else 1.0
        density = factor * sigma * e_mag ** 2
        total = float(density @ space.cell_measure())
        return total, density
    e = -space.element_gradient(u)
    density = factor * sigma * (e[:, 0] ** 2 + e[:, 1] ** 2)
    total = float(density @ space.cell_measure())
    return total, density


def _barycentric(mesh, elem: int, position) -> np.ndarray:
    p = np.asarray(position, dtype=np.float64)
    a, b, c = mesh.nodes[mesh.elements[elem]]
    t = np.array([[b[0] - a[0], c[0] - a[0]],
                  [b[1] - a[1], c[1] - a[1]]])
    lam12 = np.linalg.solve(t, p - a)
    return np.array([1.0 - lam12.sum(), lam12[0], lam12[1]])


def locate_element(mesh, position) -> int:
    """Brute-force barycentric scan for the element containing a point."""
    p = np.asarray(position, dtype=np.float64)
    pts = mesh.nodes[mesh.elements]
    a = pts[:, 0]
    det = ((pts[:, 1, 0] - a[:, 0]) * (pts[:, 2, 1] - a[:, 1])
           - (pts[:, 2, 0] - a[:, 0]) * (pts[:, 1, 1] - a[:, 1]))
    l1 = ((pts[:, 2, 1] - a[:, 1]) * (p[0] - a[:, 0])
          - (pts[:, 2, 0] - a[:, 0]) * (p[1] - a[:, 1])) / det
    l2 = (-(pts[:, 1, 1] - a[:, 1]) * (p[0] - a[:, 0])
          + (pts[:, 1, 0] - a[:, 0]) * (p[1] - a[:, 1])) / det
    tol = -1e-12
    inside = (l1 >= tol) & (l2 >= tol) & (1.0 - l1 - l2 >= tol)
    hits = np.flatnonzero(inside)
    if not len(hits):
        raise PostprocError(f"position {tuple(p)} is outside the mesh")
    return int(hits[0])


def interpolate_in_element(mesh, values: np.ndarray, elem: int,
                           position) -> float:
    lam = _barycentric(mesh, elem, position)
    return float(lam @ values[mesh.elements[elem]])


def probe(solution, position, time: Optional[float] = None,
          celsius: bool = False) -> float:
    """P1-interpolated solution value at a point (inside the mesh)."""
    mesh = solution.problem.mesh
    if isinstance(solution, TransientSolution):
        step = solution.step_at(0.0 if time is None else time)
        values = solution.values[step]
    else:
        values = solution.values
    elem = locate_element(mesh, position)
    out = interpolate_in_element(mesh, np.real(values), elem, position)
    return out - 273.15 if celsius else out


def probe_series(solution: TransientSolution, position,
                 celsius: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Probe value at every time step of a transient solution."""
    mesh = solution.problem.mesh
    elem = locate_element(mesh, position)
    lam = _barycentric(mesh, elem, position)
    series = solution.values[:, mesh.elements[elem]] @ lam
    if celsius:
        series = series - 273.15
    return solution.times.copy(), series


# --- exporters ----------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def export_vtk(mesh, path, point_data: Optional[Dict[str, np.ndarray]] = None,
               cell_data: Optional[Dict[str, np.ndarray]] = None,
               title: str = "fieldforge output") -> None:
    """Write a legacy ASCII VTK unstructured grid (triangles, type 5).

    Nodal scalars go to POINT_DATA, per-element scalars/2-vectors to
    CELL_DATA. Floats are written with shortest round-trip precision so
    re-parsing reproduces values bit-exactly.
    """
    point_data = point_data or {}
    cell_data = cell_data or {}
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.num_nodes} double",
    ]
    for x, y in mesh.nodes:
        lines.append(f"{_fmt(x)} {_fmt(y)} 0.0")
    m = mesh.num_elements
    lines.append(f"CELLS {m} {4 * m}")
    for tri in mesh.elements:
        lines.append(f"3 {tri[0]} {tri[1]} {tri[2]}")
    lines.append(f"CELL_TYPES {m}")
    lines.extend(["5"] * m)
    if point_data:
        lines.append(f"POINT_DATA {mesh.num_nodes}")
        for name, arr in point_data.items():
            arr = np.asarray(arr)
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(_fmt(v) for v in arr)
    if cell_data:
        lines.append(f"CELL_DATA {m}")
        for name, arr in cell_data.items():
            arr = np.asarray(arr)
            if arr.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(_fmt(v) for v in arr)
            else:
                lines.append(f"VECTORS {name} double")
                lines.extend(f"{_fmt(v[0])} {_fmt(v[1])} 0.0" for v in arr)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def export_csv(path, header: Sequence[str], rows) -> None:
    """Write an RFC-4180-style CSV: header row, CRLF line endings."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([
                _fmt(v) if isinstance(v, (float, np.floating)) else v
                for v in row
            ])
