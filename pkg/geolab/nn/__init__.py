"""
GeoLab - Differentiable Core
"""
from geolab.nn.tensor import Tensor, default_dtype, get_default_dtype, no_grad, set_default_dtype
from geolab.nn.params import ParameterStore
from geolab.nn.optim import AdamW, LinearDecaySchedule, adam_step
from geolab.nn.gradcheck import grad_check

__all__ = [
    'Tensor', 'ParameterStore', 'AdamW', 'LinearDecaySchedule', 'adam_step', 'grad_check',
    'default_dtype', 'get_default_dtype', 'no_grad', 'set_default_dtype',
]
