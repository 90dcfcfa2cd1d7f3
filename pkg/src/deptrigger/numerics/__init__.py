from .core import (
    Adam,
    GradCheckReport,
    NonFiniteError,
    ParamStore,
    check_finite,
    dropout_mask,
    grad_check,
    logsumexp,
    relative_error,
    sigmoid,
    softmax,
    softmax_backward,
)
from .lstm import add_bilstm_params, bilstm_backward, bilstm_encode, lstm_backward, lstm_forward
from .kernels import BACKEND

__all__ = [
    "Adam", "BACKEND", "GradCheckReport", "NonFiniteError", "ParamStore",
    "add_bilstm_params", "bilstm_backward", "bilstm_encode", "check_finite",
    "dropout_mask", "grad_check", "logsumexp", "lstm_backward", "lstm_forward",
    "relative_error", "sigmoid", "softmax", "softmax_backward",
]
