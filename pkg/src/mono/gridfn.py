"""Functions sampled on uniform tensor grids over the unit cube.

A :class:`GridFunction` is the concrete stand-in for an element of
``L^2([0,1]^d)^c``: ``c`` channels of real values tabulated on a uniform
grid with ``m`` points per axis.  All geometry (inner products, norms,
distances) is trapezoidal-quadrature L^2, never raw Euclidean on samples,
so results are resolution-consistent.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

MAGIC_DATASET = b"MFN1"


class ShapeError(ValueError):
    """Two grid objects with incompatible specs were combined."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid on [0,1]^dim with m points per axis."""

    dim: int
    m: int
    channels: int = 1

    def __post_init__(self):
        if self.dim < 1 or self.channels < 1:
            raise ValueError("dim and channels must be positive")
        if self.m < 2:
            raise ValueError("need at least two points per axis")

    @property
    def npoints(self) -> int:
        return self.m ** self.dim

    @property
    def size(self) -> int:
        return self.npoints * self.channels

    def axis(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.m)

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (m^dim, dim), row-major over axes."""
        axes = [self.axis() for _ in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def quad_weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights, shape (m^dim,).

        Tensor product of 1-D trapezoid weights; exact for functions that
        are multilinear per grid cell, and Sum(w) == 1 up to rounding.
        """
        h = 1.0 / (self.m - 1)
        w1 = np.full(self.m, h)
        w1[0] = w1[-1] = h / 2.0
        w = w1
        for _ in range(self.dim - 1):
            w = np.multiply.outer(w, w1).ravel()
        return w


class GridFunction:
    """Vector-valued grid function; immutable after construction.

    ``values`` is flat of length m^dim * channels, row-major over axes and
    then channels (channel index fastest).  A restricted function carries
    its boolean node ``mask`` alongside; masked-out nodes hold zeros.
    """

    __slots__ = ("spec", "values", "mask")

    def __init__(self, spec: GridSpec, values, mask: Optional[np.ndarray] = None):
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size != spec.size:
            raise ShapeError(
                f"expected {spec.size} values for {spec}, got {values.size}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")
        if mask is not None:
            mask = np.asarray(mask, dtype=bool).ravel()
            if mask.size != spec.npoints:
                raise ShapeError("mask must have one entry per grid node")
            values = values.copy()
            values.reshape(spec.npoints, spec.channels)[~mask] = 0.0
        object.__setattr__(self, "spec", spec)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        self.values.setflags(write=False)

    def __setattr__(self, name, value):  # immutability guard
        raise AttributeError("GridFunction is immutable")

    @property
    def field(self) -> np.ndarray:
        """Values as an (npoints, channels) view."""
        return self.values.reshape(self.spec.npoints, self.spec.channels)

    @classmethod
    def from_field(cls, spec: GridSpec, field, mask=None) -> "GridFunction":
        return cls(spec, np.asarray(field).reshape(-1), mask=mask)

    @classmethod
    def constant(cls, spec: GridSpec, value: float) -> "GridFunction":
        return cls(spec, np.full(spec.size, float(value)))

    @classmethod
    def zero(cls, spec: GridSpec) -> "GridFunction":
        return cls(spec, np.zeros(spec.size))

    @classmethod
    def from_callable(cls, spec: GridSpec, fn) -> "GridFunction":
        """Tabulate fn(nodes) where nodes has shape (npoints, dim)."""
        vals = np.asarray(fn(spec.nodes()), dtype=np.float64)
        return cls.from_field(spec, vals.reshape(spec.npoints, -1))

    def scaled(self, alpha: float) -> "GridFunction":
        return GridFunction(self.spec, self.values * alpha, mask=self.mask)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _check_same_spec(self, other)
        return GridFunction(self.spec, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _check_same_spec(self, other)
        return GridFunction(self.spec, self.values - other.values)

    def __neg__(self) -> "GridFunction":
        return self.scaled(-1.0)


def _check_same_spec(u: GridFunction, v: GridFunction):
    if u.spec != v.spec:
        raise ShapeError(f"grid spec mismatch: {u.spec} vs {v.spec}")


def inner_product(u: GridFunction, v: GridFunction) -> float:
    """Trapezoidal approximation of Integral_D Sum_c u_c v_c."""
    _check_same_spec(u, v)
    w = u.spec.quad_weights()
    return float(np.einsum("p,pc,pc->", w, u.field, v.field))


def l2_norm(u: GridFunction) -> float:
    w = u.spec.quad_weights()
    return float(np.sqrt(np.einsum("p,pc,pc->", w, u.field, u.field)))


def l2_distance(u: GridFunction, v: GridFunction) -> float:
    _check_same_spec(u, v)
    w = u.spec.quad_weights()
    d = u.field - v.field
    return float(np.sqrt(np.einsum("p,pc,pc->", w, d, d)))


def restrict(u: GridFunction, mask: np.ndarray) -> GridFunction:
    """Keep values on the masked nodes, zero (and remember) the rest.

    The restriction is 1-Lipschitz: the norm can only shrink.
    """
    return GridFunction(u.spec, u.values, mask=np.asarray(mask, dtype=bool))


def extend_by_zero(u: GridFunction, mask: np.ndarray) -> GridFunction:
    """Zero-extension of a masked function back to the full grid.

    Norm-preserving because the same global quadrature weights apply and
    the complement contributes zeros.
    """
    mask = np.asarray(mask, dtype=bool).ravel()
    if mask.size != u.spec.npoints:
        raise ShapeError("mask must have one entry per grid node")
    field = u.field.copy()
    field[~mask] = 0.0
    return GridFunction.from_field(u.spec, field)


def recenter(u: GridFunction, b_hat: GridFunction) -> GridFunction:
    """Pointwise shift u - b_hat (undone by recentering with -b_hat)."""
    _check_same_spec(u, b_hat)
    return GridFunction(u.spec, u.values - b_hat.values)


@dataclass(frozen=True)
class SobolevBallSpec:
    """Ball {u : surrogate H^s norm <= radius}, with sampling controls.

    ``decay_margin`` is the extra spectral decay exponent of the sampling
    law beyond the s-weighting; it controls how fast drawn coefficients
    fall off (and hence empirical projection-error slopes).
    """

    smoothness: float
    radius: float
    decay_margin: float = 0.25
    center: Optional[GridFunction] = None

    def __post_init__(self):
        if not (0.0 < self.radius <= 1.0):
            raise ValueError("radius must lie in (0, 1]")
        if self.smoothness <= 0 or self.decay_margin <= 0:
            raise ValueError("smoothness and decay_margin must be positive")


def surrogate_sobolev_norm(u: GridFunction, s: float, basis) -> float:
    """Spectral surrogate of the H^s norm: (Sum_n lambda_n(s) a_n^2)^(1/2).

    Uses the first N coefficients of ``basis``; lambda_n(s) = (1+kappa_n)^s
    with kappa_n the basis element's Laplacian eigen-surrogate (kappa_1 = 0
    so the constant element always has unit weight).
    """
    coeffs = basis.encode(u)  # (N, channels)
    lam = basis.sobolev_weights(s)
    return float(np.sqrt(np.einsum("n,nc->", lam, coeffs * coeffs)))


def sample_sobolev_ball(spec: SobolevBallSpec, basis, seed: int) -> GridFunction:
    """Draw one function from the surrogate Sobolev ball.

    Coefficients a_n ~ Normal(0, lambda_n(s)^-(1+gamma)) are decoded and
    rescaled so the surrogate norm equals a Uniform(0, R) draw, which makes
    ball membership exact by construction.  Deterministic given ``seed``.
    """
    rng = np.random.default_rng(seed)
    channels = spec.center.spec.channels if spec.center is not None else 1
    lam = basis.sobolev_weights(spec.smoothness)
    std = lam ** (-(1.0 + spec.decay_margin) / 2.0)
    coeffs = rng.standard_normal((basis.size, channels)) * std[:, None]
    target = rng.uniform(0.0, spec.radius)
    current = np.sqrt(np.einsum("n,nc->", lam, coeffs * coeffs))
    if current > 0:
        coeffs *= target / current
    u = basis.decode(coeffs, channels=channels)
    if spec.center is not None:
        u = u + spec.center
    return u


# ---------------------------------------------------------------------------
# Binary dataset container ("MFN1") and CSV export.
#
# Layout: magic "MFN1", then little-endian u32 fields (dim, m, channels,
# count), then count * m^dim * channels little-endian float64 values.
# ---------------------------------------------------------------------------


def write_functions(path, functions) -> None:
    functions = list(functions)
    if not functions:
        raise ValueError("refusing to write an empty container")
    spec = functions[0].spec
    for f in functions[1:]:
        _check_same_spec(functions[0], f)
    with open(path, "wb") as fh:
        fh.write(MAGIC_DATASET)
        fh.write(struct.pack("<4I", spec.dim, spec.m, spec.channels, len(functions)))
        for f in functions:
            fh.write(f.values.astype("<f8").tobytes())


def read_functions(path) -> list[GridFunction]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC_DATASET:
            raise ValueError(f"bad magic {magic!r}, expected {MAGIC_DATASET!r}")
        dim, m, channels, count = struct.unpack("<4I", fh.read(16))
        spec = GridSpec(dim=dim, m=m, channels=channels)
        out = []
        for _ in range(count):
            raw = fh.read(8 * spec.size)
            vals = np.frombuffer(raw, dtype="<f8")
            out.append(GridFunction(spec, vals))
    return out


def to_csv(path, functions) -> None:
    """One row per grid node: coordinates, then per-function channel values."""
    functions = list(functions)
    spec = functions[0].spec
    for f in functions[1:]:
        _check_same_spec(functions[0], f)
    nodes = spec.nodes()
    header = [f"x{i}" for i in range(spec.dim)]
    for j in range(len(functions)):
        for c in range(spec.channels):
            header.append(f"f{j}_c{c}")
    cols = [nodes] + [f.field for f in functions]
    table = np.hstack(cols)
    np.savetxt(path, table, delimiter=",", header=",".join(header), comments="")
