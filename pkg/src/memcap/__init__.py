"""memcap: constructive memorization toolkit.

Builds, by closed form, the exact weights of small fully-connected or
residual networks that fit every point of a finite dataset; certifies
capacity limits by exact linear-piece counting of 1-D restrictions; and
instruments without-replacement SGD around memorizing global minima.
"""

from .activations import GATE, HARD_TANH, RELU_LIKE, Activation, act_eval
from .construct_fnn import (
    check_capacity,
    construct_3layer,
    construct_4layer_classifier,
    expand_hard_tanh_to_relu_like,
)
from .data import Dataset, gen_dataset, load_csv, save_csv
from .deep import BlockLayout, construct_deep
from .errors import (
    CapacityError,
    ConstructionError,
    GeneralPositionError,
    NonDifferentiableError,
    ProjectionError,
)
from .genpos import (
    construct_2layer_classifier,
    construct_resnet_classifier,
    hyperplane_through,
    is_general_position,
    node_budget,
)
from .networks import (
    FnnParams,
    ResNetParams,
    fnn_forward,
    fnn_forward_batch,
    fnn_gradient,
    is_differentiable_at,
    load_network,
    resnet_forward,
    resnet_forward_batch,
    save_network,
)
from .pwl import (
    PiecewiseLinear1D,
    hard_dataset,
    piece_bound,
    pwl_add,
    pwl_compose_activation,
    refute_fit,
    restrict_to_line,
)
from .sgdlab import (
    SquaredLoss,
    empirical_H_spectrum,
    empirical_risk,
    is_memorizing_min,
    probe_contraction_law,
    sgd_run,
    tangent_basis,
    xi_decompose,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
