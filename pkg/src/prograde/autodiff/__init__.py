from . import functional
from .functional import (
    avgpool2x,
    concat,
    conv2d,
    l2norm,
    leaky_relu,
    mean,
    relu,
    reshape,
    tanh,
    upsample2x,
)
from .gradcheck import analytic_gradients, gradient_check
from .tensor import (
    Graph,
    GraphConsumedError,
    NonFiniteError,
    Tensor,
    current_graph,
    current_graph_or_new,
    debug_mode,
    default_dtype,
    get_default_dtype,
    grad,
    no_grad,
    set_debug,
    set_default_dtype,
)

__all__ = [
    "Graph",
    "GraphConsumedError",
    "NonFiniteError",
    "Tensor",
    "analytic_gradients",
    "avgpool2x",
    "concat",
    "current_graph",
    "current_graph_or_new",
    "conv2d",
    "debug_mode",
    "default_dtype",
    "functional",
    "get_default_dtype",
    "grad",
    "gradient_check",
    "l2norm",
    "leaky_relu",
    "mean",
    "no_grad",
    "relu",
    "reshape",
    "set_debug",
    "set_default_dtype",
    "tanh",
    "upsample2x",
]
