"""Numeric core: tensors with reverse-mode autodiff, layers, spectral norm, Adam, checkpoints."""
from .functional import (
    NORM_EPS,
    SIGMA_FLOOR,
    conv_output_length,
    forward_avg_pool,
    forward_batch_norm,
    forward_conv1d,
    forward_layer_norm,
    forward_linear,
    power_iterate,
    spectral_normalize,
)
from .layers import AvgPool1d, BatchNorm, Conv1d, LayerNorm, LeakyReLU, Linear, Module, Sequential, make_norm
from .optim import AdamState, adam_step
from .store import CheckpointError, ParamStore, load_arrays, save_arrays
from .tensor import (
    NonFiniteError,
    Tensor,
    as_tensor,
    concat,
    exp,
    get_default_dtype,
    leaky_relu,
    log,
    log_sigmoid,
    log_softmax,
    maximum,
    no_grad,
    precision,
    relu,
    set_default_dtype,
    sigmoid,
    tanh,
)


def backward(loss: Tensor) -> None:
    loss.backward()
