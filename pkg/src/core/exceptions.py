"""
Exception hierarchy for murtree-desk
"""


class MurTreeError(Exception):
    """Base class for every error raised by the package"""


class TensorShapeError(MurTreeError, ValueError):
    """Operand shapes do not agree"""


class NonFiniteError(MurTreeError, FloatingPointError):
    """An operation produced NaN or Inf"""


class GradCheckError(MurTreeError):
    """Gradient verification could not be performed"""


class PatchGridError(MurTreeError, ValueError):
    """Image geometry is incompatible with the patch grid"""


class SelectionError(MurTreeError, ValueError):
    """Invalid top-K request or patch index set"""


class LossInputError(MurTreeError, ValueError):
    """Loss received values outside its domain"""


class ConfigError(MurTreeError, ValueError):
    """Invalid or unknown configuration key/value"""


class DatasetError(MurTreeError):
    """Dataset missing, malformed or empty"""


class FormatError(MurTreeError, ValueError):
    """Binary or text file does not follow the expected format"""


class CheckpointError(FormatError):
    """Checkpoint cannot be decoded or does not match the model"""
