"""Gated separable self-attention with masked context vectors, a four-stage
vision backbone built on it, a deterministic desk-scale trainer, and a
scaling benchmark harness. Everything runs on a small float64 autodiff
engine; see the module docstrings for the contracts."""

from .attention import (GateVector, SsmParams, context_vector,
                        elementwise_expansion_oracle, matmul_expansion_oracle,
                        numeric_rank, separable_self_attention, softmax_self_attention,
                        ssm_scan_reference, vmi_sa_matrix, vmi_sa_recurrent)
from .backbone import (VARIANTS, VMINet, VMINetConfig, build_vminet,
                       conv_only_block_forward, count_params, default_mask_schedule,
                       downsample, variant_config, vmi_sa_block_forward)
from .bench import ScalingReport, bench_scaling, fit_loglog_slope, read_bench_csv, write_bench_csv
from .checkpoint import load_tensors, save_tensors
from .data import Dataset, augment, load_cifar_batches, load_dataset, synthetic_dataset
from .errors import ConfigError, ContractError, DimensionError, FormatError, NumericsError
from .masks import Mask, build_mask
from .tensor import (GradCheckReport, Tensor, backward, depthwise_conv2d,
                     elementwise_mul, grad_check, layer_norm, matmul, no_grad, silu,
                     softmax_axis, sum_axis)
from .training import (History, OptState, TrainConfig, adamw_step, cosine_lr,
                       cross_entropy_label_smoothing, evaluate, init_opt_state,
                       load_checkpoint, parse_train_config, save_checkpoint, train)
from .verify import run_verify_suite

__version__ = "0.1.0"
