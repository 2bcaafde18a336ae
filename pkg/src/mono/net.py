"""Plain multilayer perceptrons with exact parameter-count bookkeeping.

The forward pass follows the recursion x^{(j+1)} = sigma(A^{(j)} x^{(j)} +
b^{(j)}) with the activation applied at *every* step, including the last,
before the final shift c is added (``head="squashed"``, the default).  A
conventional affine last layer is available as ``head="linear"`` and is
what the operator module's bias fields may opt into.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .gridfn import GridFunction


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths (J >= 1)")
        if any(w < 1 for w in self.widths):
            raise ValueError("all widths must be >= 1")
        if self.activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def depth(self) -> int:
        return len(self.widths) - 1


def param_count(spec: MlpSpec) -> int:
    """Exact evaluation of P([d]) = Sum_j d_j (d_{j+1} + 2) + d_J.

    This is the declared parameter-count formula; it over-counts the
    scalars a single-bias-per-layer network actually stores, so the stored
    total is reported separately by :func:`stored_param_count`.
    """
    d = spec.widths
    return sum(d[j] * (d[j + 1] + 2) for j in range(spec.depth)) + d[-1]


def stored_param_count(spec: MlpSpec) -> int:
    """Scalars actually held: A^(j), b^(j) in R^{d_{j+1}}, and c."""
    d = spec.widths
    return sum(d[j] * d[j + 1] + d[j + 1] for j in range(spec.depth)) + d[-1]


class Mlp:
    """Weights A^(j): (d_{j+1}, d_j), biases b^(j): (d_{j+1},), shift c."""

    def __init__(self, spec: MlpSpec, weights, biases, shift):
        self.spec = spec
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.shift = np.asarray(shift, dtype=np.float64)
        d = spec.widths
        for j in range(spec.depth):
            if self.weights[j].shape != (d[j + 1], d[j]):
                raise ValueError(f"weight {j} must have shape {(d[j+1], d[j])}")
            if self.biases[j].shape != (d[j + 1],):
                raise ValueError(f"bias {j} must have shape {(d[j+1],)}")
        if self.shift.shape != (d[-1],):
            raise ValueError(f"shift must have shape {(d[-1],)}")

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases, self.shift]

    def as_tensors(self) -> "MlpTensors":
        return MlpTensors(self.spec,
                          [ad.Tensor(w) for w in self.weights],
                          [ad.Tensor(b) for b in self.biases],
                          ad.Tensor(self.shift))

    def forward(self, x: np.ndarray, head: str = "squashed") -> np.ndarray:
        return self.as_tensors().forward(np.asarray(x, dtype=np.float64),
                                         head=head).data


@dataclass
class MlpTensors:
    """Tensor-wrapped parameters for a differentiable forward pass."""

    spec: MlpSpec
    weights: list
    biases: list
    shift: object

    def parameters(self) -> list:
        return [*self.weights, *self.biases, self.shift]

    def forward(self, x, head: str = "squashed"):
        act = ad.ACTIVATIONS[self.spec.activation]
        data = x.data if isinstance(x, ad.Tensor) else np.asarray(x, dtype=np.float64)
        vector = data.ndim == 1
        h = x
        last = self.spec.depth - 1
        for j, (w, b) in enumerate(zip(self.weights, self.biases)):
            if vector:
                z = ad.einsum("oi,i->o", w, h) + b
            else:
                z = ad.einsum("bi,oi->bo", h, w) + b
            h = z if (head == "linear" and j == last) else act(z)
        return h + self.shift

    def freeze(self) -> Mlp:
        return Mlp(self.spec, [w.data for w in self.weights],
                   [b.data for b in self.biases], self.shift.data)


def init_mlp(spec: MlpSpec, seed: int) -> Mlp:
    """Fan-based uniform weights, zero biases and shift."""
    rng = np.random.default_rng(seed)
    d = spec.widths
    weights, biases = [], []
    for j in range(spec.depth):
        bound = np.sqrt(6.0 / (d[j] + d[j + 1]))
        weights.append(rng.uniform(-bound, bound, size=(d[j + 1], d[j])))
        biases.append(np.zeros(d[j + 1]))
    return Mlp(spec, weights, biases, np.zeros(d[-1]))


def gradient(net: Mlp, x: np.ndarray, upstream: np.ndarray,
             head: str = "squashed"):
    """Reverse-mode gradients of <forward(x), upstream>.

    Returns (parameter gradients in net.parameters() order, input gradient).
    """
    tensors = net.as_tensors()
    xt = ad.Tensor(np.asarray(x, dtype=np.float64))
    out = tensors.forward(xt, head=head)
    out.backward(seed=np.asarray(upstream, dtype=np.float64))
    zeros = lambda t: np.zeros_like(t.data)
    param_grads = [p.grad if p.grad is not None else zeros(p)
                   for p in tensors.parameters()]
    input_grad = xt.grad if xt.grad is not None else np.zeros_like(xt.data)
    return param_grads, input_grad


@dataclass(frozen=True)
class TrainBudget:
    """Full-batch budget.

    ``lr_decay`` is the total exponential decay factor applied over the run
    (1.0 keeps the step fixed).  ``restarts`` > 1 splits the epochs into
    that many chunks with fresh optimizer moments each chunk (parameters
    carry over); the warm restarts reliably break the mid-training plateau
    these small operators exhibit."""

    epochs: int = 2000
    learning_rate: float = 1e-3
    seed: int = 0
    lr_decay: float = 1.0
    restarts: int = 1

    def step_size(self, epoch: int) -> float:
        if self.lr_decay == 1.0 or self.epochs <= 1:
            return self.learning_rate
        return self.learning_rate * self.lr_decay ** (epoch / (self.epochs - 1))

    def chunks(self) -> list[int]:
        n = max(1, self.restarts)
        base = self.epochs // n
        sizes = [base] * n
        sizes[-1] += self.epochs - base * n
        return [s for s in sizes if s > 0]


class Adam:
    """Full-batch adaptive step; first/second-moment accumulation."""

    def __init__(self, params: list, lr: float, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr: float | None = None):
        self.t += 1
        step = self.lr if lr is None else lr
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p.data = p.data - step * mhat / (np.sqrt(vhat) + self.eps)


class DivergenceError(RuntimeError):
    def __init__(self, message, last_stable=None):
        super().__init__(message)
        self.last_stable = last_stable


@dataclass
class FitResult:
    mlp: Mlp
    sup_error: float
    losses: list = field(default_factory=list)


def fit_function(target: GridFunction, spec: MlpSpec, budget: TrainBudget,
                 head: str = "squashed",
                 init: Mlp | None = None) -> FitResult:
    """Regress a grid function: inputs are node coordinates, outputs channels.

    Keeps the best (lowest sup-error) parameters seen; deterministic given
    budget.seed.
    """
    if spec.widths[0] != target.spec.dim:
        raise ValueError("MLP input width must equal the grid dimension")
    if spec.widths[-1] != target.spec.channels:
        raise ValueError("MLP output width must equal the channel count")
    net = init if init is not None else init_mlp(spec, budget.seed)
    tensors = net.as_tensors()
    x = target.spec.nodes()
    y = target.field
    opt = Adam(tensors.parameters(), lr=budget.learning_rate)
    losses = []
    best = (np.inf, None)
    npts = x.shape[0]
    for epoch in range(budget.epochs):
        pred = tensors.forward(x, head=head)
        err = pred - y
        loss = ad.tsum(ad.square(err)) * (1.0 / npts)
        value = float(loss.data)
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite loss at epoch {epoch}",
                                  last_stable=tensors.freeze())
        losses.append(value)
        sup = float(np.max(np.abs(err.data)))
        if sup < best[0]:
            best = (sup, tensors.freeze())
        loss.backward()
        opt.step(lr=budget.step_size(epoch))
    pred = tensors.forward(x, head=head)
    sup = float(np.max(np.abs(pred.data - y)))
    if sup < best[0]:
        best = (sup, tensors.freeze())
    return FitResult(mlp=best[1], sup_error=best[0], losses=losses)
