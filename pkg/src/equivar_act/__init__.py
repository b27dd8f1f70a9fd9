"""Unitary-equivariant activations of the form sigma(u) = f(x(u)) * u."""

from equivar_act.activations import (
    ActivationSpec,
    ScalarFunction,
    activation_jacobian,
    check_equivariance,
    gate_input,
    generalized_activation,
    identity_activation,
    leaky_relu_norm,
    softsign_residue,
)
from equivar_act.linalg import DomainError, apply_unitary, haar_unitary, norm
from equivar_act.net import LayerParams, ModelParams, load_model, model_forward, save_model
from equivar_act.training import TrainConfig, backward, grad_check, loss, sgd_step, train

__all__ = [
    "ActivationSpec",
    "DomainError",
    "LayerParams",
    "ModelParams",
    "ScalarFunction",
    "TrainConfig",
    "activation_jacobian",
    "apply_unitary",
    "backward",
    "check_equivariance",
    "gate_input",
    "generalized_activation",
    "grad_check",
    "haar_unitary",
    "identity_activation",
    "leaky_relu_norm",
    "load_model",
    "loss",
    "model_forward",
    "norm",
    "save_model",
    "sgd_step",
    "softsign_residue",
    "train",
]
