from .autograd import (
    NNError,
    NonFinite,
    NonScalarLoss,
    ShapeMismatch,
    Tape,
    Tensor,
    add,
    backward,
    concat,
    conv1d,
    cumsum,
    divide,
    dense,
    elu,
    interp,
    l2_loss,
    normalize_to_unit_sphere,
    numeric_grad,
    pointwise_mul,
    relu,
    reshape,
    scale,
    sqrt,
    sub,
    take_rows,
    tensor_sum,
)
from .checkpoint import CheckpointError
from .optim import AdamState, adam_step, glorot_uniform, sgd_step
