from .autodiff import (
    Tape,
    Tensor,
    add,
    bce,
    concat,
    conv1d,
    exp,
    gelu,
    layer_norm,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax,
    sub,
    sum,
    sum_sq,
    take,
    tanh,
    transpose,
)
from .gradcheck import grad_check
from .tensorio import decode_tensor, encode_tensor, load_tensor, save_tensor
