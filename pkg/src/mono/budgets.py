"""Closed-form complexity and budget calculators.

Two kinds of entries:

* exact formulas (rank and width of a single expert, tree counting) are
  evaluated exactly;
* order brackets (depth, active-parameter count, leaf/routing growth) are
  evaluated with unit constants and labeled with their formula text —
  they are asymptotic orders, never exact parameter guarantees.

The modulus of continuity ``omega`` and its inverse are user-supplied
monotone callables.  Presets: ``lipschitz`` (identity) and the
``logarithmic`` stability modulus omega(t) = C0 / log(1 + C1/t) arising in
the corrosion inverse problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tree import TreeCapacityError, tree_counting


@dataclass(frozen=True)
class Modulus:
    name: str
    omega: Callable[[float], float]
    omega_inv: Callable[[float], float]


def lipschitz_modulus(constant: float = 1.0) -> Modulus:
    return Modulus(name="lipschitz",
                   omega=lambda t: constant * t,
                   omega_inv=lambda s: s / constant)


def logarithmic_modulus(c0: float = 1.0, c1: float = 1.0) -> Modulus:
    """omega(t) = c0 * (log(1 + c1/t))^-1, with exact inverse."""

    def omega(t: float) -> float:
        if t <= 0:
            return 0.0
        return c0 / math.log1p(c1 / t)

    def omega_inv(s: float) -> float:
        if s <= 0 or c0 / s > 700.0:  # exp would overflow; inverse is ~0
            return 0.0
        return c1 / math.expm1(c0 / s)

    return Modulus(name="logarithmic", omega=omega, omega_inv=omega_inv)


def table_modulus(ts, values) -> Modulus:
    """Monotone piecewise-linear modulus from tabulated (t, omega(t)) pairs.

    Raises RangeError outside the tabulated range.
    """
    ts = np.asarray(ts, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(np.diff(ts) <= 0) or np.any(np.diff(values) <= 0):
        raise ValueError("table must be strictly increasing in t and omega")

    def interp(x, xs, ys):
        if x < xs[0] or x > xs[-1]:
            raise RangeError(f"argument {x} outside table range "
                             f"[{xs[0]}, {xs[-1]}]")
        return float(np.interp(x, xs, ys))

    return Modulus(name="table",
                   omega=lambda t: interp(t, ts, values),
                   omega_inv=lambda s: interp(s, values, ts))


class RangeError(ValueError):
    pass


MODULUS_PRESETS = {
    "lipschitz": lipschitz_modulus,
    "logarithmic": logarithmic_modulus,
}


@dataclass(frozen=True)
class BudgetInputs:
    epsilon: float
    modulus: Modulus
    d1: int = 1
    d2: int = 1
    s1: float = 2.0
    s2: float = 2.0
    d_in: int = 1
    d_out: int = 1
    diam: float = 1.0
    valency: int = 2
    covering_constant: float = 1.0  # empirical C_R used in the delta chain

    def __post_init__(self):
        if self.epsilon <= 0 or self.diam <= 0:
            raise ValueError("epsilon and diam must be positive")
        if self.s1 <= self.d1 or self.s2 <= self.d2:
            raise ValueError("budget formulas require s_i > d_i")


@dataclass
class BudgetEntry:
    name: str
    value: float
    formula: str
    exact: bool
    log10: float = field(init=False)

    def __post_init__(self):
        if self.value > 0 and math.isfinite(self.value):
            self.log10 = math.log10(self.value)
        else:
            self.log10 = float("inf") if self.value == math.inf else float("nan")


def expert_rank(inputs: BudgetInputs) -> int:
    """Exact rank formula: ceil of the max of the two resolution branches."""
    eps, diam = inputs.epsilon, inputs.diam
    first = (diam * 2.0 ** 3.5 / eps) ** (inputs.d1 / inputs.s1)
    second = (8.0 * inputs.modulus.omega(2.0 ** 1.5 * diam ** inputs.d_in / eps)) \
        ** (inputs.d2 / inputs.s2)
    return math.ceil(max(first, second))


def expert_width(rank: int, d_in: int, d_out: int) -> int:
    """Exact width formula N*d_in + N*d_out + 2."""
    return rank * d_in + rank * d_out + 2


def expert_depth_order(inputs: BudgetInputs, rank: int) -> float:
    """Depth order bracket for a single expert covering the whole set."""
    eps = inputs.epsilon
    n_in = rank * inputs.d_in
    n_out = rank * inputs.d_out
    arg = eps / ((2.0 + n_in / 2.0) * n_out)  # |D2| = 1 on the unit cube
    inv = inputs.modulus.omega_inv(arg)
    if inv <= 0:
        return math.inf
    # computed in logs: N d_out * diam^(N d_in) * inv^(-2 N d_in)
    log10 = math.log10(n_out) + n_in * math.log10(max(inputs.diam, 1e-300)) \
        - 2.0 * n_in * math.log10(inv)
    return 10.0 ** log10 if log10 < 300 else math.inf


def small_ball_radius(inputs: BudgetInputs, rank: int) -> float:
    """The per-leaf ball radius delta(eps) of the distributed construction."""
    n_in = rank * inputs.d_in
    n_out = rank * inputs.d_out
    arg = inputs.epsilon / ((2.0 + n_in / 2.0) * n_out)
    inv = inputs.modulus.omega_inv(arg)
    root = inv / inputs.covering_constant ** 2
    return root * root


def distributed_scale(inputs: BudgetInputs) -> float:
    """The common order max(1/eps, omega(1/eps)) of Table-2 entries."""
    eps = inputs.epsilon
    return max(1.0 / eps, inputs.modulus.omega(1.0 / eps))


def active_complexity_order(inputs: BudgetInputs) -> float:
    """Order bracket for the active parameter count of the mixture."""
    eps, m = inputs.epsilon, inputs.modulus
    lead = max(eps ** (-inputs.d1 / inputs.s1),
               m.omega_inv(1.0 / eps) ** (inputs.d2 / inputs.s2))
    inner = max(eps ** (1.0 + 2.0 * inputs.d1 / inputs.s1),
                eps * m.omega_inv(1.0 / eps) ** (2.0 * inputs.d2 / inputs.s2))
    return lead ** 4 + lead ** 2 * m.omega_inv(inner)


@dataclass
class BudgetReport:
    inputs: BudgetInputs
    single: list  # classical single-operator column
    distributed: list  # mixture column

    def entries(self) -> dict:
        return {f"single_{e.name}": e for e in self.single} | \
               {f"mixture_{e.name}": e for e in self.distributed}


def budget_tables(inputs: BudgetInputs) -> BudgetReport:
    """Evaluate both budget columns at one accuracy level.

    Exact entries: rank, width, and (when the integers stay tractable) the
    tree-counting chain at delta(eps).  Order entries carry their formula
    text and unit constants.
    """
    m = inputs.modulus
    rank = expert_rank(inputs)
    width = expert_width(rank, inputs.d_in, inputs.d_out)
    single = [
        BudgetEntry("rank", rank, "ceil max{(2^(7/2) diam/eps)^(d1/s1), "
                    "(8 omega(2^(3/2) diam^d_in / eps))^(d2/s2)}", True),
        BudgetEntry("width", width, "N d_in + N d_out + 2", True),
        BudgetEntry("depth", expert_depth_order(inputs, rank),
                    "O(N d_out diam^(N d_in) omega_inv(eps/((2+N d_in/2) N "
                    "d_out))^(-2 N d_in))", False),
        BudgetEntry("leaves", 1, "1", True),
        BudgetEntry("routing", 1, "1", True),
    ]

    scale = distributed_scale(inputs)
    delta = small_ball_radius(inputs, rank)
    try:
        counts = tree_counting(delta, inputs.valency, inputs.d1, inputs.s1) \
            if delta > 0 else None
    except (TreeCapacityError, OverflowError, ValueError):
        counts = None
    if counts is not None:
        try:
            leaves_value = float(counts.leaves)
        except OverflowError:
            leaves_value = math.inf
        leaves_entry = BudgetEntry("leaves", leaves_value,
                                   "v^ceil(log_v(2^ceil(delta^(-d1/2)) - 1)), "
                                   "delta = delta(eps)", True)
        if math.isinf(leaves_value):
            leaves_entry.log10 = math.log10(counts.leaves)  # exact big-int log
        routing_entry = BudgetEntry("routing", counts.height + 1,
                                    "tree height + 1 at delta(eps)", True)
    else:
        # counting blew past exact integers; report the log-space order
        if delta > 0:
            log2_centers = delta ** (-inputs.d1 / 2.0)
            leaves_log10 = log2_centers * math.log10(2.0) \
                if log2_centers < 1e6 else math.inf
        else:
            leaves_log10 = math.inf
        leaves_entry = BudgetEntry("leaves", math.inf,
                                   "~2^(delta(eps)^(-d1/2))", False)
        leaves_entry.log10 = leaves_log10  # exact in log space
        routing_entry = BudgetEntry("routing",
                                    math.inf if delta <= 0
                                    else delta ** (-inputs.d1 / 2.0)
                                    * math.log(2.0) / math.log(inputs.valency),
                                    "~log_v(2^(delta^(-d1/2)))", False)

    distributed = [
        BudgetEntry("rank", scale, "O(max{1/eps, omega(1/eps)})", False),
        BudgetEntry("width", scale, "O(max{1/eps, omega(1/eps)})", False),
        BudgetEntry("depth", scale, "O(max{1/eps, omega(1/eps)})", False),
        BudgetEntry("active", active_complexity_order(inputs),
                    "O(lead^4 + lead^2 omega_inv(eps^(1+2 d1/s1) v eps "
                    "omega_inv(1/eps)^(2 d2/s2)))", False),
        leaves_entry,
        routing_entry,
    ]
    return BudgetReport(inputs=inputs, single=single, distributed=distributed)
