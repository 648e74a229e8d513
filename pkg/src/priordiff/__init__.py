"""Few-step diffusion over a compact prior vector guiding an image-to-image decoder."""

from .diffusion import ReverseConfig, diffuse_to_endpoint, reverse_chain, reverse_step
from .evaluation import evaluate, infer_image
from .networks import ModelBundle, ModelConfig
from .schedule import Schedule, linear_schedule, solve_beta_end
from .tasks import TaskSample, ToyDatasetSpec, make_dataset, make_sample, psnr
from .tensor import Param, Tensor
from .training import TrainConfig, train, train_stage1, train_stage2

__all__ = [
    "ModelBundle",
    "ModelConfig",
    "Param",
    "ReverseConfig",
    "Schedule",
    "TaskSample",
    "Tensor",
    "ToyDatasetSpec",
    "TrainConfig",
    "diffuse_to_endpoint",
    "evaluate",
    "infer_image",
    "linear_schedule",
    "make_dataset",
    "make_sample",
    "psnr",
    "reverse_chain",
    "reverse_step",
    "solve_beta_end",
    "train",
    "train_stage1",
    "train_stage2",
]
__version__ = "0.1.0"
