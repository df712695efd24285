"""Small reverse-mode autodiff library used by the policy and allocator networks."""
from .gradcheck import check_gradients, numerical_grad, relative_error
from .layers import (attend, causal_mask, init_attention, init_layer_norm, init_linear, init_lstm,
                     init_pffn, multi_head_attention, pffn, positional_encoding,
                     project_kv)
from .params import (ParamStore, adam_step, linear_anneal, load_checkpoint,
                     save_checkpoint)
from .tensor import (Tensor, add, as_tensor, backward, clip, concat, div, exp, getitem,
                     grad_enabled, layer_norm, linear, log, log_softmax, lstm_cell,
                     lstm_recurrent, lstm_sequence, matmul,
                     mean, minimum, mul, neg, no_grad, relu, reshape, sigmoid, softmax,
                     square, stack, sub, swap_last, tabs, tanh, transpose, tsum)

__all__ = [
    "Tensor", "ParamStore", "adam_step", "linear_anneal", "save_checkpoint",
    "load_checkpoint", "backward", "no_grad", "grad_enabled", "as_tensor",
    "add", "sub", "mul", "div", "neg", "exp", "log", "tanh", "sigmoid", "relu",
    "tabs", "square", "minimum", "clip", "tsum", "mean", "reshape", "transpose",
    "swap_last", "getitem", "concat", "stack", "matmul", "linear", "softmax",
    "log_softmax", "layer_norm", "lstm_cell", "lstm_recurrent",
    "lstm_sequence", "multi_head_attention", "project_kv", "attend", "pffn",
    "causal_mask", "positional_encoding", "init_linear", "init_layer_norm",
    "init_lstm", "init_attention", "init_pffn", "check_gradients", "numerical_grad",
    "relative_error",
]
