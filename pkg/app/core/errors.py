EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ACCEPTANCE = 3


class PwcloError(Exception):
    """Base error; `exit_code` is what the command line returns for it."""

    exit_code = EXIT_DATA

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ShapeError(PwcloError):
    """Tensor shapes or block widths do not fit together."""

    exit_code = EXIT_USAGE


class TapeError(PwcloError):
    exit_code = EXIT_USAGE


class GeometryError(PwcloError):
    """Zero-norm quaternion or a rotation block that is not orthonormal."""


class PointCloudError(PwcloError):
    """Sample / neighbour counts out of bounds, or an empty cloud."""


class ConfigError(PwcloError):
    exit_code = EXIT_USAGE


class DataFormatError(PwcloError):
    """Truncated or garbled input file."""


class CheckpointError(PwcloError):
    pass


class LossError(PwcloError):
    exit_code = EXIT_USAGE


class EvaluationError(PwcloError):
    pass


class GradientCheckError(PwcloError):
    exit_code = EXIT_ACCEPTANCE
