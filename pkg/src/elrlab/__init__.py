"""Noisy-label training lab: a small numpy autodiff engine, residual
networks, early-learning regularization, SAM, and memorization diagnostics."""

from .autodiff import (
    Tensor,
    backward,
    batch_norm_2d,
    check_gradients,
    conv2d,
    matmul,
    no_grad,
    relu,
    softmax,
)
from .config import ExperimentConfig, SweepSpec
from .data import (
    AugmentSpec,
    LabeledDataset,
    NoiseSpec,
    augment_batch,
    generate_synthetic,
    inject_symmetric_noise,
    load_cifar10_binary,
    split_train_test,
)
from .harness import RunResult, run_experiment, run_sweep
from .losses import LossValue, TargetStore, cross_entropy, elr_loss, update_targets
from .metrics import MemorizationRecord, MetricsRow, memorization_fractions, topk_accuracy
from .models import Model, ModelConfig, build_model, count_parameters
from .optim import SGD, ScheduleConfig, cosine_lr, multistep_lr

__all__ = [
    "Tensor",
    "backward",
    "batch_norm_2d",
    "check_gradients",
    "conv2d",
    "matmul",
    "no_grad",
    "relu",
    "softmax",
    "ExperimentConfig",
    "SweepSpec",
    "AugmentSpec",
    "LabeledDataset",
    "NoiseSpec",
    "augment_batch",
    "generate_synthetic",
    "inject_symmetric_noise",
    "load_cifar10_binary",
    "split_train_test",
    "RunResult",
    "run_experiment",
    "run_sweep",
    "LossValue",
    "TargetStore",
    "cross_entropy",
    "elr_loss",
    "update_targets",
    "MemorizationRecord",
    "MetricsRow",
    "memorization_fractions",
    "topk_accuracy",
    "Model",
    "ModelConfig",
    "build_model",
    "count_parameters",
    "SGD",
    "ScheduleConfig",
    "cosine_lr",
    "multistep_lr",
]
