"""Routed mixtures of small finite-rank neural operators on gridded
function spaces: bases and encoders, a routing tree built by hierarchical
k-means over function samples, per-leaf experts with sharded
load-on-demand storage, complexity accounting, and benchmark tasks
including a Robin-coefficient inverse problem."""

from .basis import BasisSet, CapacityError, Fourier, PiecewisePoly, build_basis
from .gridfn import (GridFunction, GridSpec, ShapeError, SobolevBallSpec,
                     extend_by_zero, inner_product, l2_distance, l2_norm,
                     recenter, restrict, sample_sobolev_ball,
                     surrogate_sobolev_norm)
from .mixture import (ComplexityReport, MoNoModel, assemble,
                      complexity_report, load_model, realize, realize_batch,
                      train_mono)
from .net import (Mlp, MlpSpec, TrainBudget, fit_function, gradient, init_mlp,
                  param_count, stored_param_count)
from .operator import (NeuralOperator, NoSpec, init_operator, param_count_no,
                       relative_l2_error, stored_param_count_no, train_expert)
from .tree import (RoutingTree, TreeSpec, audit_covering,
                   audit_kmeans_recursion, build_tree, compress_nodes, route,
                   tree_counting)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
