"""First-order FE core: function spaces, operator assembly, shrink/inflate.

Nodal P1 spaces exist for Cartesian (x, y) and axisymmetric (rho, z)
coordinates; the 2D vector-potential space carries A_z (Cartesian, unit
out-of-plane length by default) or the loop flux w = 2*pi*rho*A_phi
(axisymmetric), which reduces the magnetic formulation to nodal scalars.

Polynomial parts of all element integrals are exact; material
coefficients and the axisymmetric radius weight use one-point centroid
quadrature. Assembly is vectorized, optionally chunked over worker
threads (FIELDFORGE_THREADS); contributions are merged in element order
so results are bit-identical for any thread count.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .mesh import AxiMesh, TriMesh
from .model import (AntiPeriodic, ChargeDensity, CurrentDensity, Dirichlet,
                    Floating, HeatSourceDensity, Material, ModelError, Neumann,
                    Periodic, Robin, TimeValue, source_at, value_at)
from .sparsela import CooBuilder, CsrMatrix, to_csr

TWO_PI = 2.0 * np.pi
_MASS_KERNEL = np.array([[2.0, 1.0, 1.0],
                         [1.0, 2.0, 1.0],
                         [1.0, 1.0, 2.0]]) / 12.0


class FemError(Exception):
    """Assembly or constraint handling failed."""


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("FIELDFORGE_THREADS", "1")))
    except ValueError:
        return 1


class _SpaceBase:
    """Shared P1 geometry cache: gradients, areas, centroids."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.ndof = mesh.num_nodes
        self.axisymmetric = mesh.axisymmetric
        pts = mesh.nodes[mesh.elements]          # (M, 3, 2)
        self.centroids = pts.mean(axis=1)
        self.areas = mesh.areas
        # grad N_i = (b_i, c_i): b_i = (y_j - y_k)/2A, c_i = (x_k - x_j)/2A
        x = pts[:, :, 0]
        y = pts[:, :, 1]
        b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]],
                     axis=1)
        c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]],
                     axis=1)
        inv2a = 1.0 / (2.0 * self.areas)
        self.gradients = np.stack([b, c], axis=2) * inv2a[:, None, None]

    def element_gradient(self, u: np.ndarray) -> np.ndarray:
        """Per-element (constant) gradient of a nodal field."""
        return np.einsum("eik,ei->ek", self.gradients, u[self.mesh.elements])

    def element_mean(self, u: np.ndarray) -> np.ndarray:
        """Per-element centroid value (mean of the three nodal values)."""
        return u[self.mesh.elements].mean(axis=1)


class NodalFunctionSpace(_SpaceBase):
    """P1 nodal space for scalar potentials and temperatures."""

    def __init__(self, mesh: TriMesh):
        super().__init__(mesh)
        if self.axisymmetric:
            w = TWO_PI * self.centroids[:, 0]
            self.stiffness_weight = w
            self.mass_weight = w
            self.load_weight = w
        else:
            ones = np.ones(mesh.num_elements)
            self.stiffness_weight = ones
            self.mass_weight = ones
            self.load_weight = ones

    def cell_measure(self) -> np.ndarray:
        """Weighted element measure |e| used for volume integrals."""
        return self.load_weight * self.areas


class VectorPotentialSpace(_SpaceBase):
    """2D magnetic vector-potential space reduced to nodal scalars.

    Cartesian DoF is A_z over an out-of-plane ``length``; axisymmetric DoF
    is the loop flux w = 2*pi*rho*A_phi, with w = 0 imposed on the axis.
    """

    def __init__(self, mesh: TriMesh, length: float = 1.0):
        super().__init__(mesh)
        self.length = float(length)
        if self.axisymmetric:
            rho_c = self.centroids[:, 0]
            if np.any(rho_c <= 0.0):
                raise FemError(
                    "axisymmetric element with centroid rho <= 0")
            inv = 1.0 / (TWO_PI * rho_c)
            self.stiffness_weight = inv
            self.mass_weight = inv
            self.load_weight = np.ones(mesh.num_elements)
        else:
            scale = np.full(mesh.num_elements, self.length)
            self.stiffness_weight = scale
            self.mass_weight = scale
            self.load_weight = scale

    def axis_nodes(self) -> np.ndarray:
        if self.axisymmetric:
            return self.mesh.axis_nodes()
        return np.empty(0, dtype=np.int64)

    def cell_measure(self) -> np.ndarray:
        return self.load_weight * self.areas


Space = Union[NodalFunctionSpace, VectorPotentialSpace]


@dataclass
class AssembledOperator:
    """An assembled FE operator plus its provenance."""
    matrix: CsrMatrix
    kind: str                      # divgrad | mass | curlcurl | boundary
    property_kind: Optional[type] = None

    @property
    def shape(self):
        return self.matrix.shape


def _slice_field_args(field_args, idx):
    if not field_args:
        return [{} for _ in idx] if len(idx) else []
    out = []
    for k in idx:
        one = {}
        for name, val in field_args.items():
            arr = np.asarray(val)
            one[name] = float(arr[k]) if arr.ndim else float(arr)
        out.append(one)
    return out


def _element_coefficients(space: Space, regions, materials, kind,
                          field_args=None, time: float = 0.0,
                          absent_as_zero: bool = False):
    """Per-element scalar coefficients plus constant-tensor exceptions.

    Returns (c, tensors) where c is an (M,) array and tensors is a list of
    (element index array, 2x2 tensor) for anisotropic constant materials.
    """
    mesh = space.mesh
    c = np.zeros(mesh.num_elements)
    tensors = []
    threads = _thread_count()
    for tag in np.unique(mesh.elem_region):
        idx = np.flatnonzero(mesh.elem_region == tag)
        if tag < 0:
            if absent_as_zero:
                continue
            raise FemError(
                f"{len(idx)} elements carry no region tag; cannot resolve "
                f"a {kind.__name__}")
        region = regions.get(int(tag))
        if region.mat is None:
            if absent_as_zero:
                continue
            raise FemError(f"region {tag} has no material assigned")
        material: Material = materials.get(region.mat)
        if not material.has(kind):
            if absent_as_zero:
                continue
            raise FemError(
                f"material '{material.name}' has no {kind.__name__}")
        prop = material.get(kind)
        if prop.is_tensor:
            tensors.append((idx, prop.value))
        elif prop.is_function:
            pts = space.centroids[idx]
            args = _slice_field_args(field_args, idx)

            def evaluate(span):
                lo, hi = span
                return [prop.evaluate(pts[k], time, args[k])
                        for k in range(lo, hi)]

            spans = _spans(len(idx), threads)
            if threads > 1 and len(spans) > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    parts = list(pool.map(evaluate, spans))
            else:
                parts = [evaluate(s) for s in spans]
            c[idx] = np.concatenate([np.asarray(p, dtype=np.float64)
                                     for p in parts]) if parts else []
        else:
            c[idx] = prop.value
    return c, tensors


def _spans(n: int, parts: int) -> List[Tuple[int, int]]:
    if n == 0:
        return []
    parts = min(parts, n)
    bounds = np.linspace(0, n, parts + 1, dtype=int)
    return [(int(bounds[i]), int(bounds[i + 1])) for i in range(parts)
            if bounds[i] < bounds[i + 1]]


def _gather(builder: CooBuilder, elements: np.ndarray, ke: np.ndarray):
    rows = np.repeat(elements, 3, axis=1).ravel()
    cols = np.tile(elements, (1, 3)).ravel()
    builder.add_many(rows, cols, ke.ravel())


def _stiffness_like(space: Space, regions, materials, kind, field_args,
                    time, label: str) -> AssembledOperator:
    c, tensors = _element_coefficients(space, regions, materials, kind,
                                       field_args, time)
    g = space.gradients
    scale = c * space.stiffness_weight * space.areas
    ke = scale[:, None, None] * np.einsum("eik,ejk->eij", g, g)
    for idx, tensor in tensors:
        w = (space.stiffness_weight * space.areas)[idx]
        ke[idx] = w[:, None, None] * np.einsum(
            "eik,kl,ejl->eij", g[idx], tensor, g[idx])
    builder = CooBuilder((space.ndof, space.ndof))
    _gather(builder, space.mesh.elements, ke)
    return AssembledOperator(to_csr(builder), label, kind)


def divgrad_operator(space: NodalFunctionSpace, regions, materials, kind,
                     field_args=None, time: float = 0.0) -> AssembledOperator:
    """Assemble K_ij = sum_e int_e c grad(N_i).grad(N_j) dOmega.

    The measure is dx dy (Cartesian) or 2*pi*rho_c drho dz (axisymmetric);
    coefficients are evaluated at element centroids with the supplied
    named field arguments (scalars or per-element arrays).
    """
    if not isinstance(space, NodalFunctionSpace):
        raise FemError("divgrad_operator needs a NodalFunctionSpace")
    return _stiffness_like(space, regions, materials, kind, field_args, time,
                           "divgrad")


def curlcurl_operator(space: VectorPotentialSpace, regions, materials, kind,
                      field_args=None, time: float = 0.0) -> AssembledOperator:
    """Assemble the 2D curl-curl operator on the vector-potential space.

    Cartesian: identical kernel to divgrad with c = nu (times the
    out-of-plane length); axisymmetric (w-convention):
    K_ij = sum_e int_e nu/(2 pi rho_c) grad(N_i).grad(N_j) drho dz.
    """
    if not isinstance(space, VectorPotentialSpace):
        raise FemError("curlcurl_operator needs a VectorPotentialSpace")
    return _stiffness_like(space, regions, materials, kind, field_args, time,
                           "curlcurl")


def mass_matrix(space: Space, regions, materials, kind, field_args=None,
                time: float = 0.0, absent_as_zero: bool = False
                ) -> AssembledOperator:
    """Assemble M_ij = sum_e int_e c N_i N_j dOmega (closed-form P1 kernel).

    ``absent_as_zero`` treats elements whose material lacks the property
    as zero contribution (used for conductivity in magnetic problems,
    where sigma = 0 outside conducting regions).
    """
    c, tensors = _element_coefficients(space, regions, materials, kind,
                                       field_args, time, absent_as_zero)
    if tensors:
        raise FemError("mass_matrix requires scalar-valued properties")
    scale = c * space.mass_weight * space.areas
    ke = scale[:, None, None] * _MASS_KERNEL[None, :, :]
    builder = CooBuilder((space.ndof, space.ndof))
    _gather(builder, space.mesh.elements, ke)
    return AssembledOperator(to_csr(builder), "mass", kind)


def stiffness_from_coefficients(space: Space, coefficients) -> CsrMatrix:
    """Stiffness matrix from an explicit per-element scalar coefficient array."""
    c = np.asarray(coefficients, dtype=np.float64)
    if c.shape != (space.mesh.num_elements,):
        raise FemError("coefficient array must have one entry per element")
    g = space.gradients
    scale = c * space.stiffness_weight * space.areas
    ke = scale[:, None, None] * np.einsum("eik,ejk->eij", g, g)
    builder = CooBuilder((space.ndof, space.ndof))
    _gather(builder, space.mesh.elements, ke)
    return to_csr(builder)


def gradient_outer_matrix(space: Space, u: np.ndarray,
                          coefficients) -> CsrMatrix:
    """Assemble sum_e c_e (grad u . grad N_i)(grad u . grad N_j) |e|_weighted.

    This is the rank-one-per-element kernel of the Newton differential
    term for field-dependent coefficients.
    """
    c = np.asarray(coefficients, dtype=np.float64)
    grad_u = space.element_gradient(u)
    s = np.einsum("eik,ek->ei", space.gradients, grad_u)   # (M, 3)
    scale = c * space.stiffness_weight * space.areas
    ke = scale[:, None, None] * s[:, :, None] * s[:, None, :]
    builder = CooBuilder((space.ndof, space.ndof))
    _gather(builder, space.mesh.elements, ke)
    return to_csr(builder)


_SOURCE_KINDS = (ChargeDensity, CurrentDensity, HeatSourceDensity)


def load_vector(space: Space, source=None, regions=None, excitations=None,
                time: float = 0.0) -> np.ndarray:
    """Assemble f_i = sum_e q_e |e|_weighted / 3 for centroid-constant sources.

    ``source`` is a scalar, a per-element array, or None to resolve volume
    excitations (charge/current/heat densities) from the regions.
    """
    mesh = space.mesh
    if source is None:
        if regions is None or excitations is None:
            raise FemError("load_vector needs a source or regions+excitations")
        q = np.zeros(mesh.num_elements)
        for region in regions:
            if region.dim != 2 or region.exci is None:
                continue
            exci = excitations.get(region.exci)
            if not isinstance(exci, _SOURCE_KINDS):
                continue
            idx = mesh.elements_with_region(region.id)
            if callable(exci.value):
                q[idx] = [source_at(exci.value, space.centroids[k], time)
                          for k in idx]
            else:
                q[idx] = float(exci.value)
    else:
        q = np.asarray(source, dtype=np.float64)
        if q.ndim == 0:
            q = np.full(mesh.num_elements, float(q))
        elif q.shape != (mesh.num_elements,):
            raise FemError(
                f"per-element source must have length {mesh.num_elements}")
    contrib = q * space.cell_measure() / 3.0
    f = np.zeros(space.ndof)
    np.add.at(f, mesh.elements.ravel(), np.repeat(contrib, 3))
    return f


def neumann_robin_terms(space: NodalFunctionSpace, regions, bcs,
                        time: float = 0.0) -> Tuple[CsrMatrix, np.ndarray]:
    """Boundary matrix and vector from Neumann and Robin conditions.

    Edge-wise exact 1D P1 integration; axisymmetric edges are weighted by
    2*pi*rho at the edge midpoint. Homogeneous Neumann contributes nothing.
    """
    if not isinstance(space, NodalFunctionSpace):
        raise FemError("neumann_robin_terms needs a NodalFunctionSpace")
    mesh = space.mesh
    builder = CooBuilder((space.ndof, space.ndof))
    f = np.zeros(space.ndof)
    for region in regions:
        if region.dim != 1 or region.bc is None:
            continue
        bc = bcs.get(region.bc)
        if not isinstance(bc, (Neumann, Robin)):
            continue
        edges = mesh.edges_with_region(region.id)
        if not len(edges):
            continue
        lengths = mesh.edge_lengths()[edges]
        mids = mesh.edge_midpoints()[edges]
        weights = lengths * (TWO_PI * mids[:, 0] if space.axisymmetric else 1.0)
        n1 = mesh.edges[edges, 0]
        n2 = mesh.edges[edges, 1]
        if isinstance(bc, Neumann):
            g = value_at(bc.flux, time)
            np.add.at(f, n1, g * weights / 2.0)
            np.add.at(f, n2, g * weights / 2.0)
        else:
            alpha, beta, g = (bc.alpha, bc.beta, value_at(bc.g, time))
            ratio = alpha / beta
            builder.add_many(n1, n1, ratio * weights / 3.0)
            builder.add_many(n2, n2, ratio * weights / 3.0)
            builder.add_many(n1, n2, ratio * weights / 6.0)
            builder.add_many(n2, n1, ratio * weights / 6.0)
            np.add.at(f, n1, (g / beta) * weights / 2.0)
            np.add.at(f, n2, (g / beta) * weights / 2.0)
    return to_csr(builder), f


# --- constraints (Dirichlet / floating / periodic) ---------------------------


@dataclass
class ConstraintGroup:
    """Nodes tied to one master DoF by u_node = sign * u_master."""
    master: int
    members: List[Tuple[int, int]]  # (node, sign), master excluded


class ConstraintSet:
    """Linear node constraints turned into a congruence transform.

    The full vector is recovered as u = P u_reduced + g(time): Dirichlet
    rows/columns are eliminated, floating regions condense into one master
    DoF (column sums), (anti-)periodic slaves map to +/- their master.
    """

    def __init__(self, ndof: int,
                 dirichlet: Optional[Dict[int, TimeValue]] = None,
                 groups: Optional[Sequence[ConstraintGroup]] = None):
        self.ndof = int(ndof)
        self.dirichlet = dict(dirichlet or {})
        self.groups = list(groups or [])
        self._validate()
        self._build()

    def _validate(self):
        owned = set(self.dirichlet)
        for group in self.groups:
            nodes = [group.master] + [n for n, _ in group.members]
            for n in nodes:
                if not 0 <= n < self.ndof:
                    raise FemError(f"constraint references node {n} out of range")
            for n, _ in group.members:
                if n == group.master:
                    raise FemError("constraint group member equals its master")
                if n in owned:
                    raise FemError(
                        f"node {n} appears in more than one constraint")
                owned.add(n)
            if group.master in self.dirichlet:
                raise FemError(
                    f"group master {group.master} is Dirichlet-constrained")

    def _build(self):
        import scipy.sparse as sp

        reduced_of = {}
        slave_master = {}
        for group in self.groups:
            for node, sign in group.members:
                slave_master[node] = (group.master, sign)
        next_red = 0
        for node in range(self.ndof):
            if node in self.dirichlet or node in slave_master:
                continue
            reduced_of[node] = next_red
            next_red += 1
        for group in self.groups:
            if group.master not in reduced_of:
                raise FemError(
                    f"group master {group.master} is itself constrained")
        rows, cols, vals = [], [], []
        for node in range(self.ndof):
            if node in self.dirichlet:
                continue
            if node in slave_master:
                master, sign = slave_master[node]
                rows.append(node)
                cols.append(reduced_of[master])
                vals.append(float(sign))
            else:
                rows.append(node)
                cols.append(reduced_of[node])
                vals.append(1.0)
        self.n_reduced = next_red
        self.P = sp.csr_matrix(
            (vals, (rows, cols)), shape=(self.ndof, self.n_reduced))
        self.reduced_of = reduced_of
        representative = np.empty(self.n_reduced, dtype=np.int64)
        for node, red in reduced_of.items():
            representative[red] = node
        self.representative = representative

    def g(self, time: float = 0.0) -> np.ndarray:
        out = np.zeros(self.ndof)
        for node, value in self.dirichlet.items():
            out[node] = value_at(value, time)
        return out

    def restrict(self, full: np.ndarray) -> np.ndarray:
        """Reduced vector whose inflation reproduces ``full`` at free nodes."""
        return np.asarray(full)[self.representative]

    def shrink(self, matrix: CsrMatrix, rhs: np.ndarray, time: float = 0.0):
        rhs = np.asarray(rhs)
        A = matrix.sp
        g = self.g(time)
        reduced = CsrMatrix(self.P.T @ A @ self.P)
        reduced_rhs = self.P.T @ (rhs - A @ g)
        return reduced, reduced_rhs

    def inflate(self, reduced_solution: np.ndarray, time: float = 0.0
                ) -> np.ndarray:
        reduced_solution = np.asarray(reduced_solution)
        if reduced_solution.shape != (self.n_reduced,):
            raise FemError(
                f"reduced vector has length {reduced_solution.shape}, "
                f"expected {self.n_reduced}")
        g = self.g(time)
        if np.iscomplexobj(reduced_solution):
            g = g.astype(np.complex128)
        return self.P @ reduced_solution + g


def shrink(matrix: CsrMatrix, rhs, constraints: ConstraintSet,
           time: float = 0.0):
    """Eliminate constrained DoFs: returns (reduced matrix, reduced rhs, dof map)."""
    reduced, reduced_rhs = constraints.shrink(matrix, rhs, time)
    return reduced, reduced_rhs, constraints


def inflate(reduced_solution, constraints: ConstraintSet, time: float = 0.0):
    """Reinsert constrained DoFs into a full-length vector."""
    return constraints.inflate(reduced_solution, time)


def _region_nodes(mesh: TriMesh, region) -> np.ndarray:
    if region.dim == 1:
        return mesh.nodes_with_edge_region(region.id)
    if region.dim == 0:
        return np.flatnonzero(mesh.node_region == region.id)
    if region.dim == 2:
        return np.unique(mesh.elements[mesh.elem_region == region.id])
    raise FemError(f"region {region.id} has unsupported dimension {region.dim}")


def _sorted_for_pairing(mesh: TriMesh, nodes: np.ndarray) -> np.ndarray:
    """Order boundary nodes canonically for periodic pairing.

    Coordinates are taken relative to the node set's centroid and sorted
    lexicographically (rounded), which pairs translated congruent
    boundaries consistently.
    """
    rel = mesh.nodes[nodes] - mesh.nodes[nodes].mean(axis=0)
    rel = np.round(rel, 9)
    order = np.lexsort((rel[:, 1], rel[:, 0]))
    return nodes[order]


def derive_constraints(space: Space, regions, bcs, ambient=None) -> ConstraintSet:
    """Build the ConstraintSet implied by the regions' boundary conditions.

    Dirichlet values stay time-dependent (evaluated at shrink/inflate
    time). Conflicting Dirichlet assignments at shared nodes keep the BC
    listed first in the container, with a warning. For axisymmetric
    vector-potential spaces the axis condition w = 0 is imposed
    automatically.
    """
    mesh = space.mesh
    dirichlet: Dict[int, TimeValue] = {}
    claimed: Dict[int, int] = {}
    groups: List[ConstraintGroup] = []

    if isinstance(space, VectorPotentialSpace) and space.axisymmetric:
        for node in space.axis_nodes():
            dirichlet[int(node)] = 0.0
            claimed[int(node)] = -1

    bc_regions: Dict[int, List] = {}
    for region in regions:
        if region.bc is not None:
            bc_regions.setdefault(region.bc, []).append(region)

    for bc in bcs:
        if bc.id not in bc_regions:
            continue
        for region in bc_regions[bc.id]:
            nodes = _region_nodes(mesh, region)
            if isinstance(bc, Dirichlet):
                for node in nodes:
                    node = int(node)
                    if node in dirichlet:
                        prev = dirichlet[node]
                        same = (not callable(prev) and not callable(bc.value)
                                and float(prev) == float(bc.value))
                        if not same:
                            warnings.warn(
                                f"node {node} carries conflicting Dirichlet "
                                f"values; keeping the first-listed condition")
                        continue
                    dirichlet[node] = bc.value
                    claimed[node] = bc.id
            elif isinstance(bc, Floating):
                nodes = [int(n) for n in nodes if int(n) not in claimed]
                if len(nodes) < 2:
                    continue
                master = nodes[0]
                groups.append(ConstraintGroup(
                    master, [(n, 1) for n in nodes[1:]]))
                for n in nodes:
                    claimed[n] = bc.id
            elif isinstance(bc, Periodic):  # covers AntiPeriodic
                master_region = regions.get(bc.master)
                if master_region.id == region.id:
                    raise FemError(
                        "periodic condition references its own region as master")
                master_nodes = _sorted_for_pairing(
                    mesh, _region_nodes(mesh, master_region))
                slave_nodes = _sorted_for_pairing(mesh, nodes)
                if len(master_nodes) != len(slave_nodes):
                    raise FemError(
                        f"periodic pairing with mismatched node counts "
                        f"({len(master_nodes)} master vs {len(slave_nodes)} "
                        "slave)")
                for m, s in zip(master_nodes, slave_nodes):
                    groups.append(ConstraintGroup(
                        int(m), [(int(s), bc.sign)]))
                    claimed[int(s)] = bc.id
    # Merge groups sharing a master (several periodic pairs may map to one).
    merged: Dict[int, ConstraintGroup] = {}
    for group in groups:
        if group.master in merged:
            merged[group.master].members.extend(group.members)
        else:
            merged[group.master] = group
    return ConstraintSet(space.ndof, dirichlet, list(merged.values()))
