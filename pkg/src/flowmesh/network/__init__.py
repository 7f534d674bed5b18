from .layers import cheb_conv, conv3d, instance_norm, leaky_relu, matmul, maxpool2, worker_threads
from .model import (
    BranchOutput,
    graph_branch_forward,
    image2flow_forward,
    image_encoder_forward,
    mm_to_normalized,
    project_level,
)
from .weights import DEFAULT_ARCH, Architecture, WeightSet, init_random, tensor_specs, zero_bottlenecks

__all__ = [
    "Architecture",
    "BranchOutput",
    "DEFAULT_ARCH",
    "WeightSet",
    "cheb_conv",
    "conv3d",
    "graph_branch_forward",
    "image2flow_forward",
    "image_encoder_forward",
    "init_random",
    "instance_norm",
    "leaky_relu",
    "matmul",
    "maxpool2",
    "mm_to_normalized",
    "project_level",
    "tensor_specs",
    "worker_threads",
    "zero_bottlenecks",
]
