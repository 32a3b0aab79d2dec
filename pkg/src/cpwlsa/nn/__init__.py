"""Network execution on the simulated array."""

from .backends import FabricBackend, FunctionalBackend, make_backend
from .im2col import col2im_output, conv2d_direct, conv_output_size, im2col
from .layers import LayerKind, LayerSpec, NetworkSpec, WeightTensor, load_network, save_network
from .ops import (
    SoftmaxTables,
    layernorm_reference,
    layernorm_table,
    run_gelu_layer,
    run_layernorm,
    run_softmax,
    softmax_reference,
    softmax_tables,
)
from .runner import AccuracyReport, accuracy_sweep, build_tables, reference_forward, run_network

__all__ = [
    "AccuracyReport",
    "FabricBackend",
    "FunctionalBackend",
    "LayerKind",
    "LayerSpec",
    "NetworkSpec",
    "SoftmaxTables",
    "WeightTensor",
    "accuracy_sweep",
    "build_tables",
    "col2im_output",
    "conv2d_direct",
    "conv_output_size",
    "im2col",
    "layernorm_reference",
    "layernorm_table",
    "load_network",
    "make_backend",
    "reference_forward",
    "run_gelu_layer",
    "run_layernorm",
    "run_network",
    "save_network",
    "softmax_reference",
    "softmax_tables",
]
