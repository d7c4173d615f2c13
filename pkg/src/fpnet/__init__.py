"""Feature-product networks: numpy autodiff, FP-blocks and FP-ResNets for CIFAR-10."""
from .fp_block import (
    FPBlock, FpBlockSpec, VolterraKernel, build_ablation_block, build_fp_block, count_block_params,
    count_fp_block_params, expand_volterra, feature_product_patch,
)
from .models import (
    ModelSpec, ModelSummary, apply_fp_config, build_cifar_resnet, build_fp_resnet50_spec, describe,
    summarize,
)
from .tensor import (
    Parameter, Tensor, backward, default_dtype, elementwise_mul, no_grad, set_default_dtype, tensor_create,
)

__version__ = "0.1.0"
