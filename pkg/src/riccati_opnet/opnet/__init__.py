from .encoding import CHAIN, FULL, TRIG, EncodingDescriptor, encode_input
from .mlp import GELU, RELU, TANH, Mlp
from .model import (DeepOnetModel, ProgressiveModel, count_params, forward, loss_and_grad,
                    loss_mse, param_checksum)
from .train import AdamState, TrainConfig, TrainResult, adam_step, evaluate_loss, train

__all__ = [
    "CHAIN", "FULL", "TRIG", "EncodingDescriptor", "encode_input",
    "GELU", "RELU", "TANH", "Mlp",
    "DeepOnetModel", "ProgressiveModel", "count_params", "forward", "loss_and_grad",
    "loss_mse", "param_checksum",
    "AdamState", "TrainConfig", "TrainResult", "adam_step", "evaluate_loss", "train",
]
