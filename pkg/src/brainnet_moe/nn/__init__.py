"""Minimal float64 autodiff substrate: tensors, layers, optimizer, gradient checks."""
from .functional import cross_entropy
from .gradcheck import grad_check
from .layers import (DenseLayer, LayerNorm, Module, ModuleList, TransformerLayer, attention,
                     dense_forward, gelu, softmax)
from .optim import OptimizerState, adamw_step
from .tensor import Tensor, concat, linear, matmul, no_grad, stack, zero_grads

__all__ = [
    "DenseLayer", "LayerNorm", "Module", "ModuleList", "OptimizerState", "Tensor",
    "TransformerLayer", "adamw_step", "attention", "concat", "cross_entropy", "dense_forward",
    "gelu", "grad_check", "linear", "matmul", "no_grad", "softmax", "stack", "zero_grads",
]
