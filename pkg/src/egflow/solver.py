"""Linear saddle-point solves and the Picard loop for the stationary problem.

The nonlinear iteration freezes the transport field at the previous iterate,
reassembles the convection block, and performs one direct sparse solve per
step.  Convergence is measured on the relative Euclidean update of the
stacked (velocity, pressure) coefficient vector; the Lagrange multiplier for
the pressure mean is excluded.  The iteration starts either from zero or
from the solution of the Stokes problem (same system without convection).

An experimental Newton option augments the Picard matrix with the volume
derivative block; the upwind edge terms stay frozen, so the fixed point is
unchanged (the extra block applied to the expansion point is added back on
the right-hand side).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly as asm
from .assembly import FormParams, SaddleSystem
from .mesh import MeshTopology
from .reconstruction import reconstruction_matrix
from .spaces import EGFunction, PressureFunction, layout_for


class SingularSystemError(RuntimeError):
    """Direct factorization failed or produced an unusable solution."""


class DivergedError(RuntimeError):
    """The nonlinear iteration is growing instead of contracting."""

    def __init__(self, message: str, report: "SolveReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class NonlinearSettings:
    tol: float = 1e-10
    max_iters: int = 20
    linearization: str = "picard"  # or "newton-experimental"
    init: str = "zero"  # or "stokes"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.linearization not in ("picard", "newton-experimental"):
            raise ValueError(f"unknown linearization {self.linearization!r}")
        if self.init not in ("zero", "stokes"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class SolveReport:
    iterations: int = 0
    update_norms: list[float] = field(default_factory=list)
    converged: bool = False
    linear_residuals: list[float] = field(default_factory=list)
    stokes_init: bool = False


def solve_linear(system: SaddleSystem) -> tuple[np.ndarray, np.ndarray, float]:
    """Direct sparse solve of one saddle system.

    Returns (velocity coefficients, pressure values, multiplier).  The
    relative residual must come out at 1e-10 or better, otherwise the
    system is reported as numerically singular.
    """
    mat = system.matrix.tocsc()
    try:
        lu = spla.splu(mat)
    except RuntimeError as err:
        empty_rows = int(np.sum(np.diff(system.matrix.indptr) == 0))
        raise SingularSystemError(
            f"sparse factorization failed ({err}); matrix {mat.shape[0]}x{mat.shape[1]}, "
            f"{empty_rows} structurally empty rows"
        ) from err
    x = lu.solve(system.rhs)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("factorization produced non-finite values")
    b_norm = np.linalg.norm(system.rhs)
    residual = np.linalg.norm(system.matrix @ x - system.rhs)
    rel = residual / b_norm if b_norm > 0 else residual
    if rel > 1e-10:
        raise SingularSystemError(f"linear solve residual {rel:.3e} exceeds 1e-10")
    return x[system.velocity], x[system.pressure], float(x[system.multiplier])


def has_diverged(update_norms: list[float], factor: float = 1e3, run: int = 3) -> bool:
    """True when the last `run` updates all exceed `factor` times the first one."""
    if len(update_norms) < run + 1:
        return False
    threshold = factor * update_norms[0]
    return all(u > threshold for u in update_norms[-run:])


def _relative_update(x_new: np.ndarray, x_old: np.ndarray) -> float:
    denom = np.linalg.norm(x_new)
    diff = np.linalg.norm(x_new - x_old)
    return float(diff / denom) if denom > 0 else float(diff)


def solve_navier_stokes(
    mesh: MeshTopology,
    params: FormParams,
    settings: NonlinearSettings = NonlinearSettings(),
    force=None,
    boundary: dict | None = None,
) -> tuple[EGFunction, PressureFunction, SolveReport]:
    """Picard iteration for the stationary momentum/continuity system.

    force is a vectorized callable x -> f(x) (zero when omitted); boundary
    maps boundary vertices to velocity values (missing vertices are fixed
    to zero).  Raises DivergedError when the update norm grows beyond
    1000x the initial update for three consecutive iterations.
    """
    layout = layout_for(mesh)
    report = SolveReport()

    A = asm.assemble_viscous(mesh, params)
    B = asm.assemble_divergence(mesh)
    R = reconstruction_matrix(mesh) if params.pressure_robust else None
    dofs, values, g_nodal = asm.dirichlet_data(mesh, boundary)
    if force is None:
        F = np.zeros(layout.n_velocity)
    else:
        F = asm.assemble_load(mesh, force, params, R=R)
    # weak Dirichlet data of the viscous and divergence forms (zero for g = 0)
    F = F + params.viscosity * asm.sipg_boundary_load(mesh, g_nodal, params)
    cont_load = asm.divergence_boundary_load(mesh, g_nodal)

    use_newton = settings.linearization == "newton-experimental" or params.use_newton_experimental

    def record_solve(system: SaddleSystem) -> tuple[np.ndarray, np.ndarray]:
        u, p, lam = solve_linear(system)
        b_norm = np.linalg.norm(system.rhs)
        res = np.linalg.norm(system.matrix @ np.concatenate([u, p, [lam]]) - system.rhs)
        report.linear_residuals.append(float(res / b_norm if b_norm > 0 else res))
        return u, p

    def linear_step(z: EGFunction) -> tuple[np.ndarray, np.ndarray]:
        C = asm.assemble_convection(mesh, z, params, R=R)
        rhs = F + asm.convective_boundary_load(mesh, z, g_nodal, params)
        if use_newton:
            N, shift = asm.newton_volume_blocks(mesh, z, params, R=R)
            C = C + N
            rhs = rhs + shift
        system = asm.build_saddle_system(
            mesh,
            params,
            C,
            rhs,
            dirichlet=(dofs, values),
            viscous=A,
            divergence=B,
            continuity_load=cont_load,
        )
        return record_solve(system)

    def stokes_step() -> tuple[np.ndarray, np.ndarray]:
        no_convection = sp.csr_matrix(A.shape)
        system = asm.build_saddle_system(
            mesh,
            params,
            no_convection,
            F,
            dirichlet=(dofs, values),
            viscous=A,
            divergence=B,
            continuity_load=cont_load,
        )
        return record_solve(system)

    if settings.init == "stokes":
        u0, p0 = stokes_step()
        report.stokes_init = True
        x_old = np.concatenate([u0, p0])
        z = EGFunction.from_vector(mesh, u0)
    else:
        x_old = np.zeros(layout.n_velocity + layout.n_pressure)
        z = EGFunction.zero(mesh)

    u = x_old[: layout.n_velocity]
    p = x_old[layout.n_velocity :]
    for _ in range(settings.max_iters):
        u, p = linear_step(z)
        x_new = np.concatenate([u, p])
        update = _relative_update(x_new, x_old)
        report.iterations += 1
        report.update_norms.append(update)
        z = EGFunction.from_vector(mesh, u)
        x_old = x_new
        if update < settings.tol:
            report.converged = True
            break
        if has_diverged(report.update_norms):
            raise DivergedError(
                f"update norm {update:.3e} stayed above 1000x the initial "
                f"update for 3 iterations ({report.iterations} total)",
                report,
            )

    velocity = EGFunction.from_vector(mesh, u)
    pressure = PressureFunction(mesh, p.copy())
    return velocity, pressure, report
