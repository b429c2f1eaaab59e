"""Problem definitions and solve routines.

Static, harmonic and transient solvers for electrostatic, current-flow
(electroquasistatic), thermal and magnetoquasistatic problems. Transient
problems use implicit Euler; nonlinear conductivities are handled by a
damped Newton method; electrothermal coupling runs a staggered pass per
step (weak) or a successive-substitution fixed point; stranded conductors
couple the magnetic field equations to lumped circuit rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import femcore
from .femcore import (ConstraintSet, NodalFunctionSpace, VectorPotentialSpace,
                      derive_constraints, gradient_outer_matrix, load_vector,
                      mass_matrix, neumann_robin_terms,
                      stiffness_from_coefficients)
from .mesh import TriMesh
from .model import (Conductivity, Excitations, Material, Permittivity,
                    Reluctivity, StrandedConductor, ThermalConductivity,
                    VolumetricHeatCapacity)
from .postproc import HarmonicSolution, StaticSolution, TransientSolution
from .sparsela import (CsrMatrix, SingularMatrixError, block_compose,
                       solve_direct, stack_vectors)

E_FIELD_FLOOR = 1e-12  # V/m, regularizes the Newton differential near E = 0

PROBLEM_KINDS = ("electrostatic", "current_flow", "thermal", "magnetic")

_KIND_NEEDS = {
    "electrostatic": (Permittivity,),
    "current_flow": (Conductivity, Permittivity),
    "thermal": (ThermalConductivity,),
    "magnetic": (Reluctivity,),
}


class SolverError(Exception):
    """A solve routine could not complete."""


class NewtonError(SolverError):
    """Damped Newton failed to converge."""

    def __init__(self, message, residuals=None, iterate=None):
        super().__init__(message)
        self.residuals = list(residuals or [])
        self.iterate = iterate


@dataclass
class ProblemDefinition:
    """A fully specified field problem (one per problem class).

    ``time_axis`` (strictly increasing, >= 2 points) marks a transient
    problem, ``omega`` a harmonic one; neither means static. ``length``
    is the out-of-plane depth for Cartesian magnetics.
    """
    name: str
    mesh: TriMesh
    regions: object
    materials: object
    bcs: object
    excitations: object
    kind: str
    time_axis: Optional[np.ndarray] = None
    omega: Optional[float] = None
    length: float = 1.0

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise SolverError(f"unknown problem kind '{self.kind}'")
        if self.time_axis is not None:
            self.time_axis = np.asarray(self.time_axis, dtype=np.float64)
            if self.time_axis.ndim != 1 or len(self.time_axis) < 2:
                raise SolverError("time axis needs at least 2 points")
            if np.any(np.diff(self.time_axis) <= 0):
                raise SolverError("time axis must be strictly increasing")
        if self.time_axis is not None and self.omega is not None:
            raise SolverError("a problem is transient or harmonic, not both")
        self._validate_materials()

    def _validate_materials(self):
        needed = list(_KIND_NEEDS[self.kind])
        if self.kind == "thermal" and self.time_axis is not None:
            needed.append(VolumetricHeatCapacity)
        optional = {Conductivity} if self.kind == "magnetic" else set()
        for tag in np.unique(self.mesh.elem_region):
            if tag < 0:
                raise SolverError(
                    f"problem '{self.name}': mesh has untagged elements")
            region = self.regions.get(int(tag))
            if region.mat is None:
                raise SolverError(
                    f"problem '{self.name}': region {tag} has no material")
            material: Material = self.materials.get(region.mat)
            for kind in needed:
                if kind in optional:
                    continue
                if not material.has(kind):
                    raise SolverError(
                        f"problem '{self.name}': material '{material.name}' "
                        f"in region {tag} lacks {kind.__name__}")

    def make_space(self):
        if self.kind == "magnetic":
            return VectorPotentialSpace(self.mesh, self.length)
        return NodalFunctionSpace(self.mesh)


@dataclass
class NewtonSettings:
    """Damped Newton controls: residual tolerances, iteration and damping caps."""
    abs_tol: float = 1e-8
    rel_tol: float = 1e-10
    max_iter: int = 25
    max_damping_halvings: int = 10

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise SolverError("Newton tolerances must be > 0")
        if self.max_iter < 1:
            raise SolverError("Newton needs max_iter >= 1")


@dataclass
class CouplingSettings:
    """Electrothermal coupling: one staggered pass or fixed-point iteration."""
    mode: str = "successive_substitution"
    temp_tol: float = 1e-3     # K
    max_outer_iter: int = 20

    def __post_init__(self):
        if self.mode not in ("weak", "successive_substitution"):
            raise SolverError(f"unknown coupling mode '{self.mode}'")
        if self.temp_tol <= 0:
            raise SolverError("coupling temp_tol must be > 0")


@dataclass
class CircuitStamp:
    """Explicit circuit equations over the stranded-conductor port unknowns.

    Unknowns are ordered (i_1, v_1, i_2, v_2, ...) following the conductor
    list; each row is one circuit equation over exactly these unknowns.
    """
    unknowns: List[str]
    rows: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=np.complex128))
        self.rhs = np.atleast_1d(np.asarray(self.rhs, dtype=np.complex128))
        if self.rows.shape != (len(self.rhs), len(self.unknowns)):
            raise SolverError(
                f"circuit stamp dimension mismatch: rows {self.rows.shape}, "
                f"rhs {self.rhs.shape}, unknowns {len(self.unknowns)}")


@dataclass
class NewtonLog:
    """Accepted-iterate residual norms and step lengths of one Newton run."""
    residuals: List[float] = field(default_factory=list)
    lambdas: List[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.lambdas)


def newton_solve(provider: Callable, u0, settings: Optional[NewtonSettings] = None
                 ) -> Tuple[np.ndarray, NewtonLog]:
    """Damped Newton iteration on r(u) = 0.

    ``provider(u)`` returns the residual vector and Jacobian matrix at u.
    Each update solves J delta = -r and halves the step length until the
    residual norm strictly decreases (up to max_damping_halvings); the
    iteration stops when ||r|| <= abs_tol or ||r||/||r0|| <= rel_tol.
    """
    settings = settings or NewtonSettings()
    u = np.array(u0, dtype=np.float64, copy=True)
    r, jac = provider(u)
    norm = float(np.linalg.norm(r))
    log = NewtonLog(residuals=[norm])
    if norm <= settings.abs_tol:
        return u, log
    norm0 = norm
    for _ in range(settings.max_iter):
        delta = solve_direct(jac, -r)
        accepted = False
        lam = 1.0
        for _ in range(settings.max_damping_halvings + 1):
            trial = u + lam * delta
            r_t, jac_t = provider(trial)
            norm_t = float(np.linalg.norm(r_t))
            if norm_t < norm:
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            raise NewtonError(
                f"Newton damping reached the floor (lambda {lam * 2:g}) "
                f"without residual decrease at ||r|| = {norm:.3e}",
                residuals=log.residuals, iterate=u)
        u, r, jac, norm = trial, r_t, jac_t, norm_t
        log.residuals.append(norm)
        log.lambdas.append(lam)
        if norm <= settings.abs_tol or norm / norm0 <= settings.rel_tol:
            return u, log
    raise NewtonError(
        f"Newton did not converge within {settings.max_iter} iterations "
        f"(last ||r|| = {norm:.3e})", residuals=log.residuals, iterate=u)


def _solve_reduced(A: CsrMatrix, rhs: np.ndarray, cs: ConstraintSet,
                   time: float) -> np.ndarray:
    A_red, b_red = cs.shrink(A, rhs, time)
    if A_red.shape[0] == 0:
        reduced = np.zeros(0, dtype=b_red.dtype)
    else:
        reduced = solve_direct(A_red, b_red)
    return cs.inflate(reduced, time)


# --- static solvers -----------------------------------------------------------


def solve_electrostatic_static(problem: ProblemDefinition) -> StaticSolution:
    """Solve -div(eps grad u) = rho with the problem's BCs and excitations."""
    if problem.kind != "electrostatic":
        raise SolverError(f"expected an electrostatic problem, got '{problem.kind}'")
    space = problem.make_space()
    K = femcore.divgrad_operator(space, problem.regions, problem.materials,
                                 Permittivity).matrix
    B, fb = neumann_robin_terms(space, problem.regions, problem.bcs, 0.0)
    f = load_vector(space, None, problem.regions, problem.excitations) + fb
    cs = derive_constraints(space, problem.regions, problem.bcs)
    try:
        u = _solve_reduced(K + B, f, cs, 0.0)
    except SingularMatrixError as exc:
        raise SolverError(
            f"singular system (is the problem grounded?): {exc}") from exc
    return StaticSolution(problem, u)


def solve_thermal_static(problem: ProblemDefinition, source=None) -> StaticSolution:
    """Steady heat conduction; ``source`` overrides region heat excitations."""
    if problem.kind != "thermal":
        raise SolverError(f"expected a thermal problem, got '{problem.kind}'")
    space = problem.make_space()
    K = femcore.divgrad_operator(space, problem.regions, problem.materials,
                                 ThermalConductivity).matrix
    B, fb = neumann_robin_terms(space, problem.regions, problem.bcs, 0.0)
    f = load_vector(space, source, problem.regions, problem.excitations) + fb
    cs = derive_constraints(space, problem.regions, problem.bcs)
    try:
        u = _solve_reduced(K + B, f, cs, 0.0)
    except SingularMatrixError as exc:
        raise SolverError(
            f"singular system (no fixed temperature anywhere?): {exc}") from exc
    return StaticSolution(problem, u)


# --- transient steppers -------------------------------------------------------


class _ThermalStepper:
    """One implicit-Euler step of the heat equation, reusable across solvers."""

    def __init__(self, problem: ProblemDefinition):
        self.problem = problem
        self.space = problem.make_space()
        self.K = femcore.divgrad_operator(
            self.space, problem.regions, problem.materials,
            ThermalConductivity).matrix
        self.M = mass_matrix(self.space, problem.regions, problem.materials,
                             VolumetricHeatCapacity).matrix
        self.cs = derive_constraints(self.space, problem.regions, problem.bcs)

    def step(self, t_prev: float, t: float, temp_prev: np.ndarray,
             source=None) -> np.ndarray:
        dt = t - t_prev
        if dt <= 0:
            raise SolverError(f"nonpositive time step {dt}")
        B, fb = neumann_robin_terms(self.space, self.problem.regions,
                                    self.problem.bcs, t)
        f = load_vector(self.space, source, self.problem.regions,
                        self.problem.excitations, time=t) + fb
        M_dt = self.M * (1.0 / dt)
        rhs = M_dt @ temp_prev + f
        return _solve_reduced(M_dt + self.K + B, rhs, self.cs, t)


def solve_thermal_transient(problem: ProblemDefinition, initial_temperature,
                            sources: Optional[Callable] = None
                            ) -> TransientSolution:
    """Implicit-Euler transient heat conduction.

    (M_c/dt + K_lambda) T^{n+1} = (M_c/dt) T^n + q^{n+1} + boundary terms,
    with dt taken from the (possibly nonuniform) time axis. ``sources``
    optionally maps (step index, time) to a per-element heat density.
    """
    if problem.kind != "thermal" or problem.time_axis is None:
        raise SolverError("expected a transient thermal problem")
    times = problem.time_axis
    initial = np.asarray(initial_temperature, dtype=np.float64)
    if initial.shape != (problem.mesh.num_nodes,):
        raise SolverError("initial temperature length must equal node count")
    stepper = _ThermalStepper(problem)
    values = np.empty((len(times), problem.mesh.num_nodes))
    values[0] = initial
    for n in range(1, len(times)):
        source = sources(n, times[n]) if sources is not None else None
        values[n] = stepper.step(times[n - 1], times[n], values[n - 1], source)
    return TransientSolution(problem, times, values)


class _CurrentFlowStepper:
    """One implicit-Euler step of the electroquasistatic equation.

    Solves (K_eps/dt + K_sigma(E, T)) u = (K_eps/dt) u_prev + b by damped
    Newton; sigma is re-evaluated from the element field magnitude each
    iteration and the Jacobian carries the analytic dsigma/dE term where
    the material provides it.
    """

    def __init__(self, problem: ProblemDefinition,
                 newton: Optional[NewtonSettings] = None):
        self.problem = problem
        self.newton = newton or NewtonSettings()
        self.space = problem.make_space()
        self.K_eps = femcore.divgrad_operator(
            self.space, problem.regions, problem.materials, Permittivity).matrix
        self.cs = derive_constraints(self.space, problem.regions, problem.bcs)
        self._region_props = []
        mesh = problem.mesh
        for tag in np.unique(mesh.elem_region):
            region = problem.regions.get(int(tag))
            material = problem.materials.get(region.mat)
            prop = material.get(Conductivity)
            if prop.is_tensor:
                raise SolverError(
                    "the nonlinear current-flow solver supports scalar "
                    "conductivities only")
            idx = mesh.elements_with_region(int(tag))
            self._region_props.append((idx, prop))

    def conductivity_arrays(self, e_mag: np.ndarray, temp_elem: np.ndarray,
                            time: float) -> Tuple[np.ndarray, np.ndarray]:
        """Per-element sigma and dsigma/dE at the given field state."""
        m = self.problem.mesh.num_elements
        sigma = np.zeros(m)
        dsigma = np.zeros(m)
        for idx, prop in self._region_props:
            if not prop.is_function:
                sigma[idx] = prop.value
                continue
            pts = self.space.centroids[idx]
            args = [{"E": float(e_mag[k]), "T": float(temp_elem[k])}
                    for k in idx]
            sigma[idx] = [prop.evaluate(pts[j], time, args[j])
                          for j in range(len(idx))]
            if "E" in prop.differential:
                dsigma[idx] = [
                    prop.evaluate_differential("E", pts[j], time, args[j])
                    for j in range(len(idx))]
        return sigma, dsigma

    def step(self, t_prev: float, t: float, u_prev: np.ndarray,
             temp_nodal: np.ndarray
             ) -> Tuple[np.ndarray, np.ndarray, NewtonLog]:
        dt = t - t_prev
        if dt <= 0:
            raise SolverError(f"nonpositive time step {dt}")
        space, cs = self.space, self.cs
        K_eps_dt = self.K_eps * (1.0 / dt)
        B, fb = neumann_robin_terms(space, self.problem.regions,
                                    self.problem.bcs, t)
        f = load_vector(space, None, self.problem.regions,
                        self.problem.excitations, time=t) + fb
        rhs_const = K_eps_dt @ u_prev + f
        temp_elem = space.element_mean(temp_nodal)
        state: Dict[str, np.ndarray] = {}

        def provider(u_red):
            u_full = cs.inflate(u_red, t)
            grad = space.element_gradient(u_full)
            e_mag = np.hypot(grad[:, 0], grad[:, 1])
            sigma, dsigma = self.conductivity_arrays(e_mag, temp_elem, t)
            state["sigma"] = sigma
            A = K_eps_dt + stiffness_from_coefficients(space, sigma) + B
            r_full = A @ u_full - rhs_const
            r_red = cs.P.T @ r_full
            diff_coeff = dsigma / np.maximum(e_mag, E_FIELD_FLOOR)
            J_full = A + gradient_outer_matrix(space, u_full, diff_coeff)
            J_red = CsrMatrix(cs.P.T @ J_full.sp @ cs.P)
            return r_red, J_red

        u0_red = cs.restrict(u_prev)
        u_red, log = newton_solve(provider, u0_red, self.newton)
        return cs.inflate(u_red, t), state["sigma"], log


def _temperature_provider(temperature, ndof: int) -> Callable[[float], np.ndarray]:
    if temperature is None:
        temperature = 293.15
    if callable(temperature):
        return lambda t: np.asarray(temperature(t), dtype=np.float64)
    arr = np.asarray(temperature, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(ndof, float(arr))
    return lambda t: arr


def solve_current_flow_transient(problem: ProblemDefinition, initial_potential,
                                 newton: Optional[NewtonSettings] = None,
                                 temperature=None) -> TransientSolution:
    """Transient electroquasistatic solve with damped Newton per step.

    ``temperature`` supplies the field argument T for nonlinear
    conductivities: a scalar, a nodal array, or a callable time -> nodal
    array (defaults to 293.15 K). The returned solution records the
    per-element conductivity and the Newton history of every step.
    """
    if problem.kind != "current_flow" or problem.time_axis is None:
        raise SolverError("expected a transient current-flow problem")
    times = problem.time_axis
    initial = np.asarray(initial_potential, dtype=np.float64)
    if initial.shape != (problem.mesh.num_nodes,):
        raise SolverError("initial potential length must equal node count")
    temp_at = _temperature_provider(temperature, problem.mesh.num_nodes)
    stepper = _CurrentFlowStepper(problem, newton)

    values = np.empty((len(times), problem.mesh.num_nodes))
    values[0] = initial
    sigma_rows = np.empty((len(times), problem.mesh.num_elements))
    grad0 = stepper.space.element_gradient(initial)
    e0 = np.hypot(grad0[:, 0], grad0[:, 1])
    sigma_rows[0], _ = stepper.conductivity_arrays(
        e0, stepper.space.element_mean(temp_at(times[0])), times[0])
    iterations: List[int] = []
    histories: List[List[float]] = []
    for n in range(1, len(times)):
        try:
            u, sigma, log = stepper.step(times[n - 1], times[n],
                                         values[n - 1], temp_at(times[n]))
        except NewtonError as exc:
            raise NewtonError(
                f"step {n} (t = {times[n]:g} s): {exc}",
                residuals=exc.residuals, iterate=exc.iterate) from exc
        values[n] = u
        sigma_rows[n] = sigma
        iterations.append(log.iterations)
        histories.append(log.residuals)
    return TransientSolution(problem, times, values,
                             element_conductivity=sigma_rows,
                             newton_iterations=iterations,
                             newton_histories=histories)


def solve_electrothermal_transient(electric: ProblemDefinition,
                                   thermal: ProblemDefinition,
                                   initial_potential, initial_temperature,
                                   coupling: Optional[CouplingSettings] = None,
                                   newton: Optional[NewtonSettings] = None
                                   ) -> Tuple[TransientSolution, TransientSolution]:
    """Coupled electroquasistatic-thermal transient on a shared mesh.

    Per step: (1) solve the electric problem by Newton at the current
    temperature, (2) form the Joule loss density sigma(E,T) |E|^2 per
    element, (3) advance the thermal problem with it as source. Weak
    coupling does one such pass; successive substitution repeats it until
    the max nodal temperature change is <= temp_tol.
    """
    coupling = coupling or CouplingSettings()
    if electric.mesh is not thermal.mesh:
        raise SolverError("electric and thermal problems must share the mesh")
    if electric.time_axis is None or thermal.time_axis is None or \
            not np.array_equal(electric.time_axis, thermal.time_axis):
        raise SolverError("electric and thermal problems must share the time axis")
    times = electric.time_axis
    ndof = electric.mesh.num_nodes

    e_step = _CurrentFlowStepper(electric, newton)
    t_step = _ThermalStepper(thermal)
    space = e_step.space

    potential = np.empty((len(times), ndof))
    temperature = np.empty((len(times), ndof))
    potential[0] = np.asarray(initial_potential, dtype=np.float64)
    temperature[0] = np.asarray(initial_temperature, dtype=np.float64)
    sigma_rows = np.empty((len(times), electric.mesh.num_elements))
    grad0 = space.element_gradient(potential[0])
    sigma_rows[0], _ = e_step.conductivity_arrays(
        np.hypot(grad0[:, 0], grad0[:, 1]),
        space.element_mean(temperature[0]), times[0])
    iterations: List[int] = []
    histories: List[List[float]] = []
    outer_counts: List[int] = []

    for n in range(1, len(times)):
        t_prev, t = times[n - 1], times[n]
        temp_guess = temperature[n - 1]
        previous_new_temp = None
        for outer in range(1, coupling.max_outer_iter + 1):
            u, sigma, log = e_step.step(t_prev, t, potential[n - 1], temp_guess)
            grad = space.element_gradient(u)
            joule = sigma * (grad[:, 0] ** 2 + grad[:, 1] ** 2)
            temp_new = t_step.step(t_prev, t, temperature[n - 1], joule)
            if coupling.mode == "weak":
                break
            if previous_new_temp is not None:
                delta = float(np.max(np.abs(temp_new - previous_new_temp)))
                if delta <= coupling.temp_tol:
                    break
            previous_new_temp = temp_new
            temp_guess = temp_new
        else:
            raise SolverError(
                f"electrothermal coupling did not converge within "
                f"{coupling.max_outer_iter} outer iterations at step {n}")
        potential[n] = u
        temperature[n] = temp_new
        sigma_rows[n] = sigma
        iterations.append(log.iterations)
        histories.append(log.residuals)
        outer_counts.append(outer)

    electric_solution = TransientSolution(
        electric, times, potential, element_conductivity=sigma_rows,
        newton_iterations=iterations, newton_histories=histories,
        outer_iterations=outer_counts)
    thermal_solution = TransientSolution(
        thermal, times, temperature, outer_iterations=outer_counts)
    return electric_solution, thermal_solution


# --- field-circuit coupling ---------------------------------------------------


def winding_vector(conductor: StrandedConductor, space: VectorPotentialSpace,
                   regions) -> Tuple[np.ndarray, float]:
    """Winding vector X and cross-section area S of a stranded conductor.

    X_i = (N/S) * int_region N_i over the plain (unweighted) cross-section
    measure, so X^T a is the flux linkage under the w-convention.
    """
    mesh = space.mesh
    element_sets = [mesh.elements_with_region(r.id) for r in regions
                    if r.exci == conductor.id and r.dim == 2]
    if not element_sets:
        raise SolverError(
            f"stranded conductor {conductor.id} is not bound to a 2D region")
    idx = np.concatenate(element_sets)
    area = float(mesh.areas[idx].sum())
    if area <= 0:
        raise SolverError("stranded conductor region has no area")
    indicator = np.zeros(mesh.num_elements)
    indicator[idx] = 1.0
    x = load_vector(space, indicator) * (conductor.turns / area)
    return x, area


def stranded_coupling_matrices(conductor: StrandedConductor,
                               space: VectorPotentialSpace, regions,
                               omega: float):
    """Coupling blocks of one stranded conductor in full field-space.

    Returns (bottom_matrix, right_matrix, diagonal_matrix, rhs_vector):
    the voltage-equation row j*omega*X^T, the field-equation columns
    (-X | 0) for the port unknowns (i, v), the [R_dc, -1] port
    coefficients, and a zero right-hand side.
    """
    x, _ = winding_vector(conductor, space, regions)
    import scipy.sparse as sp

    ndof = space.ndof
    nz = np.flatnonzero(x)
    bottom = CsrMatrix(sp.csr_matrix(
        ((1j * omega) * x[nz], (np.zeros(len(nz), dtype=np.int64), nz)),
        shape=(1, ndof)))
    right = CsrMatrix(sp.csr_matrix(
        (-x[nz].astype(np.complex128),
         (nz, np.zeros(len(nz), dtype=np.int64))),
        shape=(ndof, 2)))
    diagonal = np.array([[complex(conductor.dc_resistance), -1.0 + 0j]])
    rhs = np.zeros(1, dtype=np.complex128)
    return bottom, right, diagonal, rhs


def solve_magnetic_harmonic_circuit(problem: ProblemDefinition,
                                    conductors: Sequence[StrandedConductor],
                                    circuit: CircuitStamp
                                    ) -> Tuple[HarmonicSolution, np.ndarray]:
    """Frequency-domain magnetoquasistatics coupled to lumped circuit rows.

    Assembles K_nu + j*omega*M_sigma (sigma taken as 0 where absent),
    shrinks the field block, appends per-conductor coupling blocks and the
    circuit rows, solves the complex system, and returns the inflated
    field solution plus the circuit unknowns in stamp order.
    """
    if problem.kind != "magnetic":
        raise SolverError(f"expected a magnetic problem, got '{problem.kind}'")
    if problem.omega is None:
        raise SolverError("harmonic solve needs an angular frequency")
    omega = float(problem.omega)
    space = problem.make_space()
    K = femcore.curlcurl_operator(space, problem.regions, problem.materials,
                                  Reluctivity).matrix
    M = mass_matrix(space, problem.regions, problem.materials, Conductivity,
                    absent_as_zero=True).matrix
    A = K + M * (1j * omega)
    f = load_vector(space, None, problem.regions, problem.excitations)
    cs = derive_constraints(space, problem.regions, problem.bcs)
    A_red, b_red = cs.shrink(A, f, 0.0)
    n_red = A_red.shape[0]
    n_cond = len(conductors)
    if len(circuit.unknowns) != 2 * n_cond or len(circuit.rhs) != n_cond:
        raise SolverError(
            f"circuit stamp dimension mismatch: {n_cond} conductors need "
            f"{2 * n_cond} unknowns and {n_cond} circuit rows, got "
            f"{len(circuit.unknowns)} and {len(circuit.rhs)}")

    import scipy.sparse as sp

    g = cs.g(0.0)
    rights = []
    bottoms = []
    diag = np.zeros((n_cond, 2 * n_cond), dtype=np.complex128)
    rhs_cond = np.zeros(n_cond, dtype=np.complex128)
    for k, conductor in enumerate(conductors):
        bottom, right, d, rhs = stranded_coupling_matrices(
            conductor, space, problem.regions, omega)
        rights.append(sp.csr_matrix(cs.P.T @ right.sp))
        bottoms.append(sp.csr_matrix(bottom.sp @ cs.P))
        diag[k, 2 * k: 2 * k + 2] = d[0]
        rhs_cond[k] = rhs[0] - (bottom.sp @ g)[0]
    right_all = CsrMatrix(sp.hstack(rights, format="csr"))
    bottom_all = CsrMatrix(sp.vstack(bottoms, format="csr"))

    matrix_sys = block_compose([
        [A_red, right_all],
        [bottom_all, diag],
        [None, circuit.rows],
    ])
    rhs_sys = stack_vectors([b_red, rhs_cond, circuit.rhs])
    try:
        sol = solve_direct(matrix_sys, rhs_sys)
    except SingularMatrixError as exc:
        raise SolverError(f"singular coupled field-circuit system: {exc}") from exc
    a_full = cs.inflate(sol[:n_red], 0.0)
    circuit_values = sol[-2 * n_cond:]
    solution = HarmonicSolution(problem, a_full, omega,
                                circuit_values=circuit_values,
                                circuit_names=list(circuit.unknowns))
    return solution, circuit_values


def solve_magnetic_static(problem: ProblemDefinition,
                          forced_currents: Dict[int, float]) -> StaticSolution:
    """Magnetostatic solve with prescribed stranded-conductor currents.

    ``forced_currents`` maps excitation ids of stranded conductors to
    terminal currents in ampere.
    """
    if problem.kind != "magnetic":
        raise SolverError(f"expected a magnetic problem, got '{problem.kind}'")
    space = problem.make_space()
    K = femcore.curlcurl_operator(space, problem.regions, problem.materials,
                                  Reluctivity).matrix
    rhs = load_vector(space, None, problem.regions, problem.excitations)
    for exci_id, current in forced_currents.items():
        conductor = problem.excitations.get(exci_id)
        x, _ = winding_vector(conductor, space, problem.regions)
        rhs = rhs + x * float(current)
    cs = derive_constraints(space, problem.regions, problem.bcs)
    u = _solve_reduced(K, rhs, cs, 0.0)
    return StaticSolution(problem, u)
