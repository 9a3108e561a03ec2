"""Exception hierarchy shared by every mufen module and the CLI."""


class MufenError(Exception):
    """Base class for library errors"""

    code = "error"
    exit_code = 3


class InvalidArgumentError(MufenError, ValueError):
    """An argument is outside its documented domain"""

    code = "invalid-argument"


class ConfigError(InvalidArgumentError):
    """Configuration document is malformed or violates an invariant"""

    code = "config"
    exit_code = 2


class ShapeError(MufenError, ValueError):
    """Tensor shapes are incompatible for an operation"""

    code = "shape"

    def __init__(self, op, shape_a, shape_b=None, detail=""):
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = None if shape_b is None else tuple(shape_b)
        message = f"{op}: incompatible shapes {self.shape_a}"
        if self.shape_b is not None:
            message += f" and {self.shape_b}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class NumericError(MufenError, ArithmeticError):
    """A computation produced NaN or Inf"""

    code = "numeric"
    exit_code = 4

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} at step {step}"
        super().__init__(message)


class ObjParseError(MufenError):
    """Malformed line in an OBJ file"""

    code = "parse"

    def __init__(self, line_number, message):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class MeshValidationError(MufenError):
    """Mesh topology or mano_strict constraints are violated"""

    code = "mesh-validation"

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class UnsupportedProjectionError(MufenError):
    code = "unsupported-projection"


class EmptySilhouetteError(MufenError):
    code = "empty-silhouette"


class MissingModalityError(MufenError):
    """A modality required by the fusion stage was not provided"""

    code = "missing-modality"

    def __init__(self, modality):
        self.modality = modality
        super().__init__(f"missing modality: {modality}")


class ImageTooSmallError(MufenError):
    code = "too-small"


class DegenerateVarianceError(MufenError, ArithmeticError):
    """Paired differences have zero variance, so the t statistic is undefined"""

    code = "degenerate-variance"
    exit_code = 4


class TensorFileError(MufenError):
    """A MUFT tensor file is truncated or has the wrong header"""

    code = "tensor-file"
