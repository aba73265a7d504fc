"""Finite-difference Dirichlet solver for  lap(u) + b.grad(u) + c*u = f.

The operator is the 7-point Laplacian plus centered first differences
for the convection term; the zeroth-order coefficient ``c`` is used by
the pseudo-frequency (Helmholtz-type) solves and is zero for the
layer-stripping problems. The asymmetric system is solved matrix-free
with BiCGStab and Jacobi preconditioning; the contract is only the
relative residual, boundary values are imposed exactly.

Hitting the iteration cap returns the best iterate flagged as
non-converged; the caller decides whether to proceed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, bicgstab, gmres

from .model import Grid3D, ScalarField

__all__ = ["EllipticProblem", "EllipticSolution", "solve_dirichlet"]


@dataclass
class EllipticProblem:
    """One Dirichlet problem on a box grid.

    ``convection`` is a length-3 tuple of per-node arrays (or None);
    ``reaction`` an optional per-node zeroth-order coefficient;
    ``rhs`` the source term; ``dirichlet`` a full-grid array whose
    boundary entries provide g.
    """

    grid: Grid3D
    rhs: np.ndarray
    dirichlet: np.ndarray
    convection: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    reaction: np.ndarray | None = None
    tolerance: float = 1e-8
    max_iterations: int = 4000

    def __post_init__(self) -> None:
        shape = self.grid.shape
        self.rhs = np.asarray(self.rhs, dtype=np.float64)
        self.dirichlet = np.asarray(self.dirichlet, dtype=np.float64)
        if self.rhs.shape != shape or self.dirichlet.shape != shape:
            raise ValueError("rhs/dirichlet shape does not match grid")
        if not (np.isfinite(self.rhs).all() and np.isfinite(self.dirichlet).all()):
            raise ValueError("non-finite problem data")
        if self.convection is not None:
            self.convection = tuple(
                np.asarray(bc, dtype=np.float64) for bc in self.convection
            )
            for bc in self.convection:
                if bc.shape != shape or not np.isfinite(bc).all():
                    raise ValueError("bad convection field")
        if self.reaction is not None:
            self.reaction = np.asarray(self.reaction, dtype=np.float64)
            if self.reaction.shape != shape or not np.isfinite(self.reaction).all():
                raise ValueError("bad reaction field")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class EllipticSolution:
    field: ScalarField
    converged: bool
    iterations: int
    residual: float


def _apply_operator(p: EllipticProblem, u_full: np.ndarray) -> np.ndarray:
    """Interior values of (lap + b.grad + c) u_full."""
    g = p.grid
    out = (
        (u_full[2:, 1:-1, 1:-1] - 2 * u_full[1:-1, 1:-1, 1:-1] + u_full[:-2, 1:-1, 1:-1]) / g.dx**2
        + (u_full[1:-1, 2:, 1:-1] - 2 * u_full[1:-1, 1:-1, 1:-1] + u_full[1:-1, :-2, 1:-1]) / g.dy**2
        + (u_full[1:-1, 1:-1, 2:] - 2 * u_full[1:-1, 1:-1, 1:-1] + u_full[1:-1, 1:-1, :-2]) / g.dz**2
    )
    if p.convection is not None:
        bx, by, bz = p.convection
        out += bx[1:-1, 1:-1, 1:-1] * (u_full[2:, 1:-1, 1:-1] - u_full[:-2, 1:-1, 1:-1]) / (2 * g.dx)
        out += by[1:-1, 1:-1, 1:-1] * (u_full[1:-1, 2:, 1:-1] - u_full[1:-1, :-2, 1:-1]) / (2 * g.dy)
        out += bz[1:-1, 1:-1, 1:-1] * (u_full[1:-1, 1:-1, 2:] - u_full[1:-1, 1:-1, :-2]) / (2 * g.dz)
    if p.reaction is not None:
        out += p.reaction[1:-1, 1:-1, 1:-1] * u_full[1:-1, 1:-1, 1:-1]
    return out


def solve_dirichlet(p: EllipticProblem) -> EllipticSolution:
    """Solve the Dirichlet problem; boundary equals g exactly."""
    g = p.grid
    shape_int = (g.nx - 2, g.ny - 2, g.nz - 2)
    n_int = int(np.prod(shape_int))

    # boundary-only field: its operator image becomes part of the RHS
    bc_full = p.dirichlet.copy()
    bc_full[1:-1, 1:-1, 1:-1] = 0.0
    rhs_int = p.rhs[1:-1, 1:-1, 1:-1] - _apply_operator(p, bc_full)

    work = np.zeros(g.shape)

    def matvec(x: np.ndarray) -> np.ndarray:
        work[1:-1, 1:-1, 1:-1] = x.reshape(shape_int)
        return _apply_operator(p, work).ravel()

    A = LinearOperator((n_int, n_int), matvec=matvec)

    diag = -2.0 * (1.0 / g.dx**2 + 1.0 / g.dy**2 + 1.0 / g.dz**2) * np.ones(shape_int)
    if p.reaction is not None:
        diag = diag + p.reaction[1:-1, 1:-1, 1:-1]
    inv_diag = 1.0 / diag.ravel()
    M = LinearOperator((n_int, n_int), matvec=lambda x: inv_diag * x)

    b_vec = rhs_int.ravel()
    b_norm = np.linalg.norm(b_vec)
    if b_norm == 0.0:
        u = p.dirichlet.copy()
        u[1:-1, 1:-1, 1:-1] = 0.0
        return EllipticSolution(ScalarField(g, u), True, 0, 0.0)

    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    x, info = bicgstab(
        A, b_vec, rtol=p.tolerance, atol=0.0, maxiter=p.max_iterations,
        M=M, callback=count,
    )
    if info != 0:
        # BiCGStab can break down on strongly asymmetric systems; GMRES
        # is slower but does not stagnate the same way.
        x2, info2 = gmres(
            A, b_vec, x0=x, rtol=p.tolerance, atol=0.0,
            maxiter=p.max_iterations, restart=60, M=M, callback=count,
            callback_type="legacy",
        )
        if np.linalg.norm(A.matvec(x2) - b_vec) <= np.linalg.norm(A.matvec(x) - b_vec):
            x, info = x2, info2

    residual = float(np.linalg.norm(A.matvec(x) - b_vec) / b_norm)
    u = p.dirichlet.copy()
    u[1:-1, 1:-1, 1:-1] = x.reshape(shape_int)
    return EllipticSolution(
        field=ScalarField(g, u),
        converged=residual <= p.tolerance * 1.001,
        iterations=iters,
        residual=residual,
    )
