"""Exception types shared across the engine."""


class BitnnError(Exception):
    """Base class for all engine errors."""


class InvalidValueError(BitnnError, ValueError):
    """Tensor data violates a value constraint (e.g. not exactly -1/+1)."""


class DimensionError(BitnnError, ValueError):
    """Operand shapes or lengths do not line up."""


class InvalidParameterError(BitnnError, ValueError):
    """A layer parameter is out of its legal range (e.g. std <= 0)."""


class PrunableChannelError(BitnnError, ValueError):
    """A batch-norm scale of exactly zero was found.

    Such channels carry no information and must be pruned by the training
    side before export; the engine refuses to fold them into a threshold.
    """


class GraphError(BitnnError, ValueError):
    """The layer sequence cannot be assembled into an executable network."""


class ModelFormatError(BitnnError, ValueError):
    """A serialized model is malformed (bad magic, version, or checksum)."""
