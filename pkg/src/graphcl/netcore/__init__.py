"""Minimal differentiable operator set, parameters, optimisers and the backbone."""
from . import ops
from .autodiff import Tensor, get_default_dtype, set_default_dtype
from .backbone import BackboneConfig, BackboneOutput, backbone_forward, backbone_param_shapes, init_backbone
from .optim import SGD, Adam, adam_step, lr_schedule, make_optimizer, sgd_step
from .params import ParamStore, load_checkpoint, save_checkpoint, substream

__all__ = [
    "ops", "Tensor", "get_default_dtype", "set_default_dtype", "BackboneConfig",
    "BackboneOutput", "backbone_forward", "backbone_param_shapes", "init_backbone", "SGD",
    "Adam", "adam_step", "lr_schedule", "make_optimizer", "sgd_step", "ParamStore",
    "load_checkpoint", "save_checkpoint", "substream",
]
