"""bitnn: a CPU inference engine for binary neural networks.

Activations and weights live in channel-bit-packed NHWC tensors; binary
convolution runs as xor + popcount; bias, batch norm, and binarization are
folded offline into a per-channel threshold. A double-precision oracle
proves every layer bit-exact.
"""

from .errors import (
    BitnnError,
    DimensionError,
    GraphError,
    InvalidParameterError,
    InvalidValueError,
    ModelFormatError,
    PrunableChannelError,
)
from .tensors import (
    BitTensor,
    ByteTensor,
    FloatTensor,
    Shape,
    pack_channels,
    split_bitplanes,
    unpack_channels,
)
from .kernels import PackedVectorView, binary_dot, plane_dot, span_popcount
from .layers import (
    BatchNormParams,
    ConvGeometry,
    FirstConvLayer,
    FusedConvLayer,
    LayerParams,
    OutputConvLayer,
    PoolGeometry,
    binary_dense,
    binary_maxpool,
    first_layer_conv,
    fused_binary_conv,
    output_conv,
    schedule_conv,
)
from .graph import (
    NetworkGraph,
    RawLayerSpec,
    build,
    fuse,
    infer,
    load,
    save,
    serialized_size_float32,
)
from .oracle import OracleNet, oracle_bn_sign, oracle_conv, verify_graph

__version__ = "0.1.0"
