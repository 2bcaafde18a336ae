"""Benchmark operator datasets: synthetic nonlinear maps and the Robin
coefficient problem on the unit square.

The Robin setup: Laplace's equation on [0,1]^2 with a Robin condition
du/dn + q u = 0 on the bottom edge (the inaccessible, corroding part), a
prescribed flux f on the rest of the boundary, and measurements g = u on
the top edge.  The learning task pairs the measured trace g with the
coefficient q, i.e. the inverse solution map L^2(top) -> L^2(bottom).

Discretization: 5-point finite differences with ghost-node closures for
the Neumann/Robin edges, symmetrized with the standard half/quarter
row scaling so conjugate gradients applies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import BasisSet, Fourier, build_basis, fourier_capacity
from .gridfn import (GridFunction, GridSpec, SobolevBallSpec, inner_product,
                     l2_distance, l2_norm, sample_sobolev_ball)


class SolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


# -- synthetic operator tasks -----------------------------------------------------


@dataclass(frozen=True)
class TaskSpec:
    kind: str  # square | antiderivative | nemytskii | robin_inverse
    grid: GridSpec
    count: int
    smoothness: float = 2.0
    radius: float = 1.0
    decay_margin: float = 0.25
    seed: int = 0
    sample_basis_size: int = 64
    nemytskii_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("need at least one sample")
        if self.kind not in ("square", "antiderivative", "nemytskii",
                             "robin_inverse"):
            raise ValueError(f"unknown task kind {self.kind!r}")


def apply_square(u: GridFunction) -> GridFunction:
    return GridFunction(u.spec, u.values ** 2)


def apply_antiderivative(u: GridFunction) -> GridFunction:
    """x -> integral_0^x u, via cumulative trapezoid on the 1-D grid."""
    if u.spec.dim != 1:
        raise ValueError("antiderivative task is one-dimensional")
    h = 1.0 / (u.spec.m - 1)
    vals = u.field[:, 0]
    cums = np.concatenate([[0.0], np.cumsum((vals[1:] + vals[:-1]) * h / 2.0)])
    return GridFunction(u.spec, cums)


def apply_nemytskii(u: GridFunction, fn) -> GridFunction:
    return GridFunction(u.spec, fn(u.values))


def make_dataset(spec: TaskSpec) -> list[tuple[GridFunction, GridFunction]]:
    """Sobolev-ball inputs paired with exact task outputs; seed-deterministic."""
    if spec.kind == "robin_inverse":
        cfg = RobinConfig(n=spec.grid.m)
        return make_inverse_dataset(cfg, spec.count, seed=spec.seed)
    scalar_grid = GridSpec(spec.grid.dim, spec.grid.m, 1)
    size = min(spec.sample_basis_size, fourier_capacity(scalar_grid))
    basis = build_basis(scalar_grid, Fourier(), size)
    ball = SobolevBallSpec(smoothness=spec.smoothness, radius=spec.radius,
                           decay_margin=spec.decay_margin)
    pairs = []
    for i in range(spec.count):
        u = sample_sobolev_ball(ball, basis, seed=spec.seed + i)
        if spec.kind == "square":
            v = apply_square(u)
        elif spec.kind == "antiderivative":
            v = apply_antiderivative(u)
        else:
            fn = spec.nemytskii_fn if spec.nemytskii_fn is not None else np.tanh
            v = apply_nemytskii(u, fn)
        pairs.append((u, v))
    return pairs


# -- Robin forward problem ---------------------------------------------------------


@dataclass(frozen=True)
class RobinConfig:
    """Unit square, bottom edge Robin (coefficient q), top edge flux, zero
    lateral flux by default."""

    n: int = 65
    q_floor: float = 0.1
    q_reference: float = 2.0
    top_flux: float = 1.0
    cg_tol: float = 1e-10

    def edge_grid(self) -> GridSpec:
        return GridSpec(dim=1, m=self.n, channels=1)

    def interior_grid(self) -> GridSpec:
        return GridSpec(dim=2, m=self.n, channels=1)

    def reference_q(self) -> GridFunction:
        return GridFunction.constant(self.edge_grid(), self.q_reference)


def _assemble_robin(cfg: RobinConfig, q: np.ndarray, f_top: np.ndarray):
    """Sparse symmetric system for the 5-point ghost-node discretization.

    Unknowns are u[i, j] with i the x index and j the y index (y = j * h);
    rows are scaled by the trapezoid cell weight (1, 1/2, 1/4) which makes
    the matrix symmetric positive definite for q > 0.
    """
    n = cfg.n
    h = 1.0 / (n - 1)
    idx = lambda i, j: i * n + j
    rows, cols, vals = [], [], []
    rhs = np.zeros(n * n)

    def weight(i, j):
        w = 1.0
        if i in (0, n - 1):
            w *= 0.5
        if j in (0, n - 1):
            w *= 0.5
        return w

    for i in range(n):
        for j in range(n):
            w = weight(i, j)
            diag = 0.0

            def couple(i2, j2, coeff):
                rows.append(idx(i, j))
                cols.append(idx(i2, j2))
                vals.append(coeff)

            # x direction: ghost mirror u[-1] = u[1] on lateral edges (zero
            # flux); general lateral flux would add an rhs term.
            for di in (-1, 1):
                i2 = i + di
                if 0 <= i2 < n:
                    couple(i2, j, -w / h ** 2 * (2.0 if (i in (0, n - 1)) else 1.0))
                    diag += w / h ** 2 * (2.0 if (i in (0, n - 1)) else 1.0)
            # y direction
            for dj in (-1, 1):
                j2 = j + dj
                if 0 <= j2 < n:
                    couple(i, j2, -w / h ** 2 * (2.0 if (j in (0, n - 1)) else 1.0))
                    diag += w / h ** 2 * (2.0 if (j in (0, n - 1)) else 1.0)
            if j == 0:
                # Robin du/dn + q u = 0, n = -e_y: ghost u[i,-1] = u[i,1]
                # - 2 h q u[i,0]
                diag += w * 2.0 * q[i] / h
            if j == n - 1:
                # Neumann du/dn = f on the top edge: ghost adds 2 h f
                rhs[idx(i, j)] += w * 2.0 * f_top[i] / h
            rows.append(idx(i, j))
            cols.append(idx(i, j))
            vals.append(diag)
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(n * n, n * n))
    return matrix, rhs


def solve_robin(cfg: RobinConfig, q: GridFunction,
                f_top: Optional[np.ndarray] = None) -> tuple[GridFunction, GridFunction]:
    """Solve the forward problem; returns (field on the square, top trace).

    Conjugate gradients to relative residual ``cfg.cg_tol``; raises
    SolverError on non-convergence.
    """
    if q.spec != cfg.edge_grid():
        raise ValueError("q must live on the bottom-edge grid")
    qv = q.field[:, 0]
    if np.any(qv < cfg.q_floor - 1e-12):
        raise ValueError(f"q must stay above the floor {cfg.q_floor}")
    n = cfg.n
    if f_top is None:
        f_top = np.full(n, cfg.top_flux)
    matrix, rhs = _assemble_robin(cfg, qv, np.asarray(f_top, dtype=float))
    solution, info = spla.cg(matrix, rhs, rtol=cfg.cg_tol, atol=0.0,
                             maxiter=20 * n * n)
    if info != 0:
        residual = float(np.linalg.norm(matrix @ solution - rhs)
                         / max(np.linalg.norm(rhs), 1e-300))
        raise SolverError(f"conjugate gradients stopped with info={info}",
                          residual=residual)
    field = solution.reshape(n, n)  # [i, j] with j the y index
    u = GridFunction.from_field(cfg.interior_grid(), field.reshape(-1, 1))
    trace = GridFunction(cfg.edge_grid(), field[:, -1])
    return u, trace


def separable_reference(cfg: RobinConfig) -> tuple[GridFunction, float]:
    """Constant-q preset with unit top flux: u = 1/q + y, trace = 1/q + 1."""
    q0 = cfg.q_reference
    grid = cfg.interior_grid()
    nodes = grid.nodes()
    u = GridFunction(grid, 1.0 / q0 + nodes[:, 1])
    return u, 1.0 / q0 + 1.0


def harmonic_reference(cfg: RobinConfig) -> tuple[GridFunction, np.ndarray]:
    """A curved harmonic solution with the same boundary structure.

    u = cos(pi x) (cosh(pi y) + gamma sinh(pi y)) with gamma = q/pi solves
    the Robin condition at y=0 with constant q, zero lateral flux, and top
    flux f(x) = pi cos(pi x) (sinh(pi) + gamma cosh(pi)).  Used for
    measuring the scheme's convergence order (the separable preset is
    reproduced exactly, so it cannot exhibit one).
    """
    gamma = cfg.q_reference / np.pi
    grid = cfg.interior_grid()
    nodes = grid.nodes()
    x, y = nodes[:, 0], nodes[:, 1]
    u = np.cos(np.pi * x) * (np.cosh(np.pi * y) + gamma * np.sinh(np.pi * y))
    xs = grid.axis()
    f_top = np.pi * np.cos(np.pi * xs) * (np.sinh(np.pi) + gamma * np.cosh(np.pi))
    return GridFunction(grid, u), f_top


# -- inverse dataset ----------------------------------------------------------------


@dataclass
class InverseDatasetInfo:
    pairs: list
    trace_distances: np.ndarray  # pairwise distance histogram material


def default_q_sampler(cfg: RobinConfig, n_coeffs: int = 8,
                      scale: float = 0.2):
    """Perturb q0 by up to ``n_coeffs`` low-frequency coefficients.

    The perturbation has surrogate Sobolev norm at most scale * q0 and is
    clipped at the positivity floor.
    """
    edge = cfg.edge_grid()
    basis = build_basis(edge, Fourier(), n_coeffs)
    ball = SobolevBallSpec(smoothness=2.0, radius=1.0, decay_margin=0.25)

    def sampler(seed: int) -> GridFunction:
        bump = sample_sobolev_ball(ball, basis, seed=seed)
        bump = bump.scaled(scale * cfg.q_reference)
        q = np.maximum(cfg.q_reference + bump.values, cfg.q_floor)
        return GridFunction(edge, q)

    return sampler


def make_inverse_dataset(cfg: RobinConfig, count: int, q_sampler=None,
                         seed: int = 0,
                         with_info: bool = False):
    """Pairs (measured top trace g, coefficient q on the bottom edge)."""
    sampler = q_sampler if q_sampler is not None else default_q_sampler(cfg)
    pairs = []
    for i in range(count):
        q = sampler(seed + i)
        _, trace = solve_robin(cfg, q)
        pairs.append((trace, q))
    if not with_info:
        return pairs
    traces = [g for g, _ in pairs]
    dists = []
    for a in range(len(traces)):
        for b in range(a + 1, len(traces)):
            dists.append(l2_distance(traces[a], traces[b]))
    return InverseDatasetInfo(pairs=pairs, trace_distances=np.array(dists))


def maximum_principle_holds(cfg: RobinConfig, u: GridFunction,
                            tol: float = 1e-8) -> bool:
    """With f >= 0, q > 0 the extrema of the solved field sit on the boundary."""
    field = u.field[:, 0].reshape(cfg.n, cfg.n)
    interior = field[1:-1, 1:-1]
    boundary = np.concatenate([field[0, :], field[-1, :], field[:, 0],
                               field[:, -1]])
    return (interior.max() <= boundary.max() + tol
            and interior.min() >= boundary.min() - tol)
