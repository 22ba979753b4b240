from mmfusion.autodiff.checkpoint import load_checkpoint, save_checkpoint
from mmfusion.autodiff.functional import (
    avg_pool2d,
    batchnorm2d,
    conv2d,
    cross_entropy,
    dropout,
    global_avg_pool2d,
    layernorm,
    linear,
    log_softmax,
    max_pool2d,
    pool2d,
    scale_channels,
    softmax,
)
from mmfusion.autodiff.tensor import (
    Tensor,
    add,
    as_tensor,
    build_tape,
    check_finite,
    concat,
    default_dtype,
    div,
    exp,
    expand_leading,
    first_nonfinite_op,
    flatten,
    get_default_dtype,
    getitem,
    hardsigmoid,
    hardswish,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    silu,
    split,
    stack,
    sub,
    tanh,
    transpose,
    tsum,
)
