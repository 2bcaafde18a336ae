"""Finite-rank neural operators between gridded L^2 spaces.

Architecture: a rank-N nonlocal first layer (encode against the input
basis, mix coefficient blocks, decode against the output basis), L
pointwise tanh-affine hidden layers acting node-wise on channel vectors, a
rank-N nonlocal last layer, and two bias fields given by MLPs evaluated at
the output-grid coordinates.  Nonlocality lives only in the first and last
layers.

Expert shard format ("MONOEXP1"): 8-byte magic, little-endian u32 version,
u32 header length, UTF-8 key=value header (one space-separated line:
rank/width/depth/bias_depth/bias_width/d_in/d_out/head and the two grid
shapes), then all tensors as little-endian float64 in declaration order:
c_first, then (W, b) per hidden layer, c_last, then the first bias net's
weights/biases/shift, then the last bias net's.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .basis import BasisSet
from .gridfn import GridFunction, GridSpec, ShapeError
from .net import Adam, DivergenceError, Mlp, MlpSpec, MlpTensors, TrainBudget

MAGIC_EXPERT = b"MONOEXP1"


@dataclass(frozen=True)
class NoSpec:
    """Shape of one expert: rank, hidden stack, bias nets, channel counts."""

    rank: int
    width: int
    depth: int
    bias_depth: int = 1
    bias_width: int = 4
    d_in: int = 1
    d_out: int = 1
    head: str = "squashed"  # head convention of the bias-field MLPs

    def __post_init__(self):
        if min(self.rank, self.width, self.bias_depth, self.bias_width) < 1:
            raise ValueError("rank, width and bias net sizes must be positive")
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        if max(self.d_in, self.d_out) > self.width:
            raise ValueError("channel counts must not exceed the hidden width")
        if self.bias_width > self.width:
            raise ValueError("bias net width must not exceed the hidden width")
        if self.head not in ("squashed", "linear"):
            raise ValueError("head must be 'squashed' or 'linear'")


def param_count_no(spec: NoSpec) -> int:
    """Declared parameter bound L w(w+1) + 2 N^2 w^2 + 2 Delta w(w+1)."""
    n, w, depth, delta = spec.rank, spec.width, spec.depth, spec.bias_depth
    return depth * w * (w + 1) + 2 * n * n * w * w + 2 * delta * w * (w + 1)


def bias_net_spec(spec: NoSpec, out_grid_dim: int, last: bool) -> MlpSpec:
    widths = (out_grid_dim,) + (spec.bias_width,) * (spec.bias_depth - 1) \
        + (spec.d_out if last else spec.width,)
    return MlpSpec(widths=widths, activation="tanh")


def stored_param_count_no(spec: NoSpec, out_grid_dim: int = 1) -> int:
    """Scalars actually stored by an operator with this spec."""
    from .net import stored_param_count
    n, w = spec.rank, spec.width
    total = n * n * w * spec.d_in + n * n * spec.d_out * w
    total += spec.depth * (w * w + w)
    total += stored_param_count(bias_net_spec(spec, out_grid_dim, last=False))
    total += stored_param_count(bias_net_spec(spec, out_grid_dim, last=True))
    return total


class NeuralOperator:
    """One expert; immutable during inference, owned by its training job.

    ``input_shift`` and ``output_shift`` are frozen recentering fields (the
    bias-operator transform): the core operator acts on u - input_shift and
    its result is shifted by +output_shift.  They are data-derived
    transforms, not trainable parameters, and are excluded from parameter
    counts (like the basis tables); they do ship inside the shard.
    """

    def __init__(self, spec: NoSpec, in_basis: BasisSet, out_basis: BasisSet,
                 c_first: np.ndarray, hidden: Sequence[tuple], c_last: np.ndarray,
                 bias_first: Mlp, bias_last: Mlp,
                 input_shift: np.ndarray | None = None,
                 output_shift: np.ndarray | None = None):
        if max(in_basis.spec.dim, out_basis.spec.dim) > spec.width:
            raise ValueError("spatial dimensions must not exceed the width")
        if in_basis.size != spec.rank or out_basis.size != spec.rank:
            raise ValueError("basis sizes must equal the rank")
        self.spec = spec
        self.in_basis = in_basis
        self.out_basis = out_basis
        n, w = spec.rank, spec.width
        self.c_first = np.asarray(c_first, dtype=np.float64)
        self.c_last = np.asarray(c_last, dtype=np.float64)
        if self.c_first.shape != (n, n, w, spec.d_in):
            raise ShapeError(f"c_first must have shape {(n, n, w, spec.d_in)}")
        if self.c_last.shape != (n, n, spec.d_out, w):
            raise ShapeError(f"c_last must have shape {(n, n, spec.d_out, w)}")
        self.hidden = [(np.asarray(W, dtype=np.float64),
                        np.asarray(b, dtype=np.float64)) for W, b in hidden]
        if len(self.hidden) != spec.depth:
            raise ShapeError("hidden layer count must equal depth")
        for W, b in self.hidden:
            if W.shape != (w, w) or b.shape != (w,):
                raise ShapeError("hidden layers must be (w, w) + (w,)")
        self.bias_first = bias_first
        self.bias_last = bias_last
        self._out_nodes = out_basis.spec.nodes()
        self._out_w = out_basis.spec.quad_weights()
        p_in, p_out = in_basis.spec.npoints, out_basis.spec.npoints
        self.input_shift = np.zeros((p_in, spec.d_in)) if input_shift is None \
            else np.asarray(input_shift, dtype=np.float64).reshape(p_in, spec.d_in)
        self.output_shift = np.zeros((p_out, spec.d_out)) if output_shift is None \
            else np.asarray(output_shift, dtype=np.float64).reshape(p_out,
                                                                    spec.d_out)

    # -- parameter plumbing ---------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        flat = [self.c_first]
        for W, b in self.hidden:
            flat += [W, b]
        flat.append(self.c_last)
        flat += self.bias_first.parameters()
        flat += self.bias_last.parameters()
        return flat

    def stored_scalar_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def with_parameters(self, params: list[np.ndarray]) -> "NeuralOperator":
        it = iter(params)
        c_first = next(it)
        hidden = [(next(it), next(it)) for _ in range(self.spec.depth)]
        c_last = next(it)
        bf = self.bias_first
        nb = len(bf.weights)
        chunk = [next(it) for _ in range(2 * nb + 1)]
        bias_first = Mlp(bf.spec, chunk[:nb], chunk[nb:2 * nb], chunk[2 * nb])
        bl = self.bias_last
        nb = len(bl.weights)
        chunk = [next(it) for _ in range(2 * nb + 1)]
        bias_last = Mlp(bl.spec, chunk[:nb], chunk[nb:2 * nb], chunk[2 * nb])
        return NeuralOperator(self.spec, self.in_basis, self.out_basis,
                              c_first, hidden, c_last, bias_first, bias_last,
                              input_shift=self.input_shift,
                              output_shift=self.output_shift)

    def with_shifts(self, input_shift, output_shift) -> "NeuralOperator":
        """Same parameters, new recentering transform."""
        return NeuralOperator(self.spec, self.in_basis, self.out_basis,
                              self.c_first, self.hidden, self.c_last,
                              self.bias_first, self.bias_last,
                              input_shift=input_shift,
                              output_shift=output_shift)

    def k0_matrix(self) -> np.ndarray:
        """First nonlocal layer as a flat ((N w) x (N d_in)) matrix."""
        n, w = self.spec.rank, self.spec.width
        return self.c_first.transpose(1, 2, 0, 3).reshape(n * w, n * self.spec.d_in)

    def kl1_matrix(self) -> np.ndarray:
        n, w = self.spec.rank, self.spec.width
        return self.c_last.transpose(1, 2, 0, 3).reshape(n * self.spec.d_out, n * w)

    # -- forward --------------------------------------------------------------

    def apply_k0(self, u: GridFunction) -> GridFunction:
        """Rank-N first layer: encode, mix, decode; linear in u."""
        coeffs = self.in_basis.encode(u)  # (N, d_in)
        mixed = np.einsum("mnjc,mc->nj", self.c_first, coeffs)
        out_spec = GridSpec(self.out_basis.spec.dim, self.out_basis.spec.m,
                            self.spec.width)
        return GridFunction.from_field(out_spec, self.out_basis.table.T @ mixed)

    def apply_kl1(self, v: GridFunction) -> GridFunction:
        """Rank-N last layer; mirrors apply_k0 with the output basis on both
        sides."""
        coeffs = self.out_basis.encode(v)  # (N, w)
        mixed = np.einsum("mnoj,mj->no", self.c_last, coeffs)
        out_spec = GridSpec(self.out_basis.spec.dim, self.out_basis.spec.m,
                            self.spec.d_out)
        return GridFunction.from_field(out_spec, self.out_basis.table.T @ mixed)

    def bias_fields(self) -> tuple[np.ndarray, np.ndarray]:
        first = self.bias_first.forward(self._out_nodes, head=self.spec.head)
        last = self.bias_last.forward(self._out_nodes, head=self.spec.head)
        return first, last

    def forward(self, u: GridFunction) -> GridFunction:
        out = self.forward_batch(u.field[None, :, :])[0]
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite output field")
        out_spec = GridSpec(self.out_basis.spec.dim, self.out_basis.spec.m,
                            self.spec.d_out)
        return GridFunction.from_field(out_spec, out)

    def forward_batch(self, fields: np.ndarray) -> np.ndarray:
        """Forward a (B, npoints_in, d_in) stack to (B, npoints_out, d_out)."""
        bias_first, bias_last = self.bias_fields()
        a_in = self.in_basis.encode_batch(fields - self.input_shift)
        u = np.einsum("mnjc,bmc->bnj", self.c_first, a_in, optimize=True)
        u = np.einsum("np,bnj->bpj", self.out_basis.table, u,
                      optimize=True) + bias_first
        if not np.all(np.isfinite(u)):
            raise FloatingPointError("non-finite field after first nonlocal layer")
        for ell, (W, b) in enumerate(self.hidden, start=1):
            u = np.tanh(np.einsum("bpj,kj->bpk", u, W, optimize=True) + b)
            if not np.all(np.isfinite(u)):
                raise FloatingPointError(f"non-finite field after hidden layer {ell}")
        a_out = np.einsum("np,bpj->bnj", self.out_basis._enc, u, optimize=True)
        v = np.einsum("mnoj,bmj->bno", self.c_last, a_out, optimize=True)
        return np.einsum("np,bno->bpo", self.out_basis.table, v,
                         optimize=True) + bias_last + self.output_shift


def init_operator(spec: NoSpec, in_basis: BasisSet, out_basis: BasisSet,
                  seed: int) -> NeuralOperator:
    """Fresh expert: coefficient tensors scaled by 1/N, fan-based hidden
    weights, hidden biases spread over (-1/2, 1/2); one seed drives all.

    The nonzero bias draw matters: it breaks the odd symmetry of the tanh
    stack, without which experts trained on small-amplitude cells stall on
    a curvature-free plateau.
    """
    from .net import init_mlp
    ss = np.random.SeedSequence(seed)
    keys = ss.spawn(5)
    n, w = spec.rank, spec.width
    rng = np.random.default_rng(keys[0])
    c_first = rng.standard_normal((n, n, w, spec.d_in)) / n
    rng = np.random.default_rng(keys[1])
    hidden = []
    bound = np.sqrt(6.0 / (2 * w))
    for _ in range(spec.depth):
        hidden.append((rng.uniform(-bound, bound, size=(w, w)),
                       rng.uniform(-0.5, 0.5, size=w)))
    rng = np.random.default_rng(keys[2])
    c_last = rng.standard_normal((n, n, spec.d_out, w)) / n
    d2 = out_basis.spec.dim
    bias_first = init_mlp(bias_net_spec(spec, d2, last=False),
                          seed=int(keys[3].generate_state(1)[0]))
    bias_last = init_mlp(bias_net_spec(spec, d2, last=True),
                         seed=int(keys[4].generate_state(1)[0]))
    return NeuralOperator(spec, in_basis, out_basis, c_first, hidden, c_last,
                          bias_first, bias_last)


# -- training ------------------------------------------------------------------


class _OperatorGraph:
    """Tensor-wrapped parameters for differentiable batched forwards."""

    def __init__(self, op: NeuralOperator):
        self.op = op
        self.c_first = ad.Tensor(op.c_first)
        self.hidden = [(ad.Tensor(W), ad.Tensor(b)) for W, b in op.hidden]
        self.c_last = ad.Tensor(op.c_last)
        self.bias_first = op.bias_first.as_tensors()
        self.bias_last = op.bias_last.as_tensors()

    def parameters(self) -> list[ad.Tensor]:
        flat = [self.c_first]
        for W, b in self.hidden:
            flat += [W, b]
        flat.append(self.c_last)
        flat += self.bias_first.parameters()
        flat += self.bias_last.parameters()
        return flat

    def forward(self, a_in: np.ndarray):
        """From input coefficients laid out (N, B, d_in) to output fields
        laid out (P, B, d_out).

        The point-major layout keeps every large contraction a plain 2-D
        GEMM on reshape views (no transposes of grid-sized arrays).
        """
        op, head = self.op, self.op.spec.head
        spec = op.spec
        npts, batch = op.out_basis.spec.npoints, a_in.shape[1]
        w, n, dout = spec.width, spec.rank, spec.d_out
        dec = op.out_basis.table.T  # (P, N)
        bias_first = ad.reshape(self.bias_first.forward(op._out_nodes, head=head),
                                (npts, 1, w))
        bias_last = ad.reshape(self.bias_last.forward(op._out_nodes, head=head),
                               (npts, 1, dout))
        mixed = ad.einsum("mnjc,mbc->nbj", self.c_first, a_in)
        u = ad.matmul2(dec, ad.reshape(mixed, (n, batch * w)))
        u = ad.reshape(u, (npts, batch, w)) + bias_first
        for W, b in self.hidden:
            z = ad.matmul2(ad.reshape(u, (npts * batch, w)), ad.transpose2(W))
            u = ad.tanh(ad.reshape(z, (npts, batch, w)) + b)
        a_out = ad.matmul2(op.out_basis._enc, ad.reshape(u, (npts, batch * w)))
        v = ad.einsum("mnoj,mbj->nbo", self.c_last,
                      ad.reshape(a_out, (n, batch, w)))
        out = ad.matmul2(dec, ad.reshape(v, (n, batch * dout)))
        return ad.reshape(out, (npts, batch, dout)) + bias_last

    def freeze(self) -> NeuralOperator:
        return self.op.with_parameters([p.data.copy() for p in self.parameters()])


@dataclass
class ExpertTrainResult:
    operator: NeuralOperator
    losses: list
    final_loss: float


def _stack_pairs(data):
    inputs = np.stack([u.field for u, _ in data])
    targets = np.stack([v.field for _, v in data])
    return inputs, targets


def train_expert(op: NeuralOperator, data, budget: TrainBudget) -> ExpertTrainResult:
    """Full-batch regression of mean squared L^2 error over (u, G+(u)) pairs.

    Deterministic given the operator's initialization and the budget; keeps
    the best checkpoint, which is also returned on divergence.
    """
    if not data:
        raise ValueError("training data must be non-empty")
    inputs, targets = _stack_pairs(data)
    graph = _OperatorGraph(op)
    # Encoding is parameter-free, so input coefficients are fixed for the
    # whole run; the frozen recentering happens here once, and coefficients
    # and targets move to the point-major layout.
    a_in = np.ascontiguousarray(
        op.in_basis.encode_batch(inputs - op.input_shift).transpose(1, 0, 2))
    targets_pb = np.ascontiguousarray(
        (targets - op.output_shift).transpose(1, 0, 2))
    wq = op._out_w
    count = inputs.shape[0]
    params = graph.parameters()
    losses = []
    best_value, best_params = np.inf, [p.data.copy() for p in params]
    epoch = 0
    for chunk in budget.chunks():
        opt = Adam(params, lr=budget.learning_rate)  # fresh moments per chunk
        for _ in range(chunk):
            pred = graph.forward(a_in)
            err = pred - targets_pb
            loss = ad.einsum("pbo,p->", ad.square(err), wq) * (1.0 / count)
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}",
                    last_stable=op.with_parameters(best_params))
            losses.append(value)
            if value < best_value:
                best_value = value
                best_params = [p.data.copy() for p in params]
            loss.backward()
            opt.step(lr=budget.step_size(epoch))
            epoch += 1
    final = _mse_l2(graph.freeze(), inputs, targets)
    if final < best_value:
        best_value, best_params = final, [p.data.copy() for p in params]
    return ExpertTrainResult(operator=op.with_parameters(best_params),
                             losses=losses, final_loss=best_value)


def _mse_l2(op: NeuralOperator, inputs: np.ndarray, targets: np.ndarray) -> float:
    err = op.forward_batch(inputs) - targets
    return float(np.einsum("bpo,p->", err * err, op._out_w) / inputs.shape[0])


def relative_l2_error(op: NeuralOperator, data) -> float:
    """Aggregate relative L^2 error sqrt(Sum_b ||err_b||^2 / Sum_b ||v_b||^2).

    The aggregate ratio is used instead of a mean of per-sample ratios so
    that near-zero-norm targets (which the ball sampler does produce) do
    not dominate the statistic.
    """
    inputs, targets = _stack_pairs(data)
    pred = op.forward_batch(inputs)
    wq = op._out_w
    err = float(np.einsum("bpo,p->", (pred - targets) ** 2, wq))
    ref = float(np.einsum("bpo,p->", targets ** 2, wq))
    return float(np.sqrt(err / ref)) if ref > 0 else float(np.sqrt(err))


# -- shard IO -------------------------------------------------------------------


def _header_dict(op: NeuralOperator) -> dict:
    s = op.spec
    return dict(rank=s.rank, width=s.width, depth=s.depth,
                bias_depth=s.bias_depth, bias_width=s.bias_width,
                d_in=s.d_in, d_out=s.d_out, head=s.head,
                in_dim=op.in_basis.spec.dim, in_m=op.in_basis.spec.m,
                out_dim=op.out_basis.spec.dim, out_m=op.out_basis.spec.m)


def write_expert(path, op: NeuralOperator) -> None:
    header = " ".join(f"{k}={v}" for k, v in _header_dict(op).items()).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC_EXPERT)
        fh.write(struct.pack("<2I", 1, len(header)))
        fh.write(header)
        for tensor in op.parameters() + [op.input_shift, op.output_shift]:
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def read_expert(path, in_basis: BasisSet, out_basis: BasisSet) -> NeuralOperator:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC_EXPERT:
            raise ValueError(f"bad magic {magic!r}, expected {MAGIC_EXPERT!r}")
        version, hlen = struct.unpack("<2I", fh.read(8))
        if version != 1:
            raise ValueError(f"unsupported shard version {version}")
        fields = dict(kv.split("=") for kv in fh.read(hlen).decode().split())
        spec = NoSpec(rank=int(fields["rank"]), width=int(fields["width"]),
                      depth=int(fields["depth"]),
                      bias_depth=int(fields["bias_depth"]),
                      bias_width=int(fields["bias_width"]),
                      d_in=int(fields["d_in"]), d_out=int(fields["d_out"]),
                      head=fields["head"])
        if (in_basis.spec.dim, in_basis.spec.m) != (int(fields["in_dim"]),
                                                    int(fields["in_m"])):
            raise ValueError("input basis grid does not match the shard header")
        if (out_basis.spec.dim, out_basis.spec.m) != (int(fields["out_dim"]),
                                                      int(fields["out_m"])):
            raise ValueError("output basis grid does not match the shard header")
        template = init_operator(spec, in_basis, out_basis, seed=0)
        params = []
        for ref in template.parameters() + [template.input_shift,
                                            template.output_shift]:
            raw = fh.read(8 * ref.size)
            params.append(np.frombuffer(raw, dtype="<f8").reshape(ref.shape).copy())
    return template.with_parameters(params[:-2]).with_shifts(params[-2],
                                                             params[-1])
