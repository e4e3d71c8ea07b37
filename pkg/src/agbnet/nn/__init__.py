from .autograd import Value, as_value, no_grad
from .gradcheck import GradCheckReport, grad_check, relative_error
from .ops import (
    BatchNormState,
    ShapeError,
    add,
    attention_gate,
    batch_norm,
    concat,
    conv2d,
    linear,
    masked_mse_l2_loss,
    max_pool2,
    mul,
    relu,
    reshape,
    sigmoid,
    sub,
    total,
    up_conv2,
    weighted_sum,
)
from .optim import Adam, AdamState, NonFiniteGradientError, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
