"""fieldforge: 2D finite-element field simulation.

Electrostatic, current-flow (electroquasistatic), thermal and
magnetoquasistatic problems on triangular meshes in Cartesian or
axisymmetric coordinates, with nonlinear electrothermal coupling and
stranded-conductor field-circuit coupling. Library plus the
``fieldforge`` batch CLI.
"""

from .mesh import (AxiMesh, MeshError, RegionMap, TriMesh, build_edges,
                   element_area, refine_uniform, structured_annulus_mesh,
                   structured_rect_mesh)
from .model import (EPS0, MU0, NU0, AntiPeriodic, BoundaryConditions,
                    ChargeDensity, Conductivity, CurrentDensity, Dirichlet,
                    Excitations, FgmParameters, Floating, HeatSourceDensity,
                    Material, Materials, ModelError, Neumann, Periodic,
                    Permittivity, Region, Regions, Reluctivity, Robin,
                    StrandedConductor, ThermalConductivity,
                    VolumetricHeatCapacity, evaluate_bc, evaluate_property,
                    fgm_conductivity, fgm_conductivity_derivative,
                    lightning_impulse, make_fgm_material, regions_from_mesh)
from .msh_io import (MshParseError, PhysicalGroup, generate_regions, lint_msh,
                     parse_msh, read_msh_file)
from .femcore import (ConstraintGroup, ConstraintSet, FemError,
                      NodalFunctionSpace, VectorPotentialSpace,
                      curlcurl_operator, derive_constraints, divgrad_operator,
                      inflate, load_vector, mass_matrix, neumann_robin_terms,
                      shrink)
from .sparsela import (CooBuilder, CsrMatrix, LinearSolveError,
                       SingularMatrixError, block_compose, solve_direct,
                       solve_iterative, stack_vectors, to_csr)
from .problems import (CircuitStamp, CouplingSettings, NewtonError,
                       NewtonSettings, ProblemDefinition, SolverError,
                       newton_solve, solve_current_flow_transient,
                       solve_electrostatic_static,
                       solve_electrothermal_transient,
                       solve_magnetic_harmonic_circuit, solve_magnetic_static,
                       solve_thermal_static, solve_thermal_transient,
                       stranded_coupling_matrices, winding_vector)
from .postproc import (HarmonicSolution, PostprocError, StaticSolution,
                       TransientSolution, b_field, d_field, e_field, energy,
                       export_csv, export_vtk, instantaneous,
                       joule_loss_power, probe, probe_series)

__version__ = "0.1.0"
