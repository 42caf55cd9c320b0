"""
GeoLab - Error Types
Every failure the lab reports on purpose derives from GeoLabError
"""


class GeoLabError(Exception):
    """Base class for errors raised by the lab"""

    status_code = 1

    def to_dict(self):
        return {
            'error': str(self),
            'error_type': type(self).__name__,
        }


class InvalidBoxError(GeoLabError, ValueError):
    """Degenerate, inverted, negative or non-finite box"""

    status_code = 2


class ParseError(GeoLabError, ValueError):
    """Malformed annotation record; the message starts with the field path"""

    status_code = 2

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DimensionError(GeoLabError, ValueError):
    """Shape-incompatible operands"""

    status_code = 2

    def __init__(self, op: str, shape_a, shape_b):
        self.shapes = (tuple(shape_a), tuple(shape_b))
        super().__init__(f"{op}: incompatible shapes {tuple(shape_a)} and {tuple(shape_b)}")


class NumericError(GeoLabError, ArithmeticError):
    """Non-finite values where finite ones are required"""

    def __init__(self, message: str, dump_path: str = None):
        self.dump_path = dump_path
        if dump_path:
            message = f"{message} (diagnostic dump: {dump_path})"
        super().__init__(message)


class GenerationError(GeoLabError, ValueError):
    """Synthetic layout does not fit the page"""

    status_code = 2


class EvaluationError(GeoLabError, ValueError):
    """Predictions and gold do not line up"""

    status_code = 2


class HarnessError(GeoLabError, ValueError):
    """Few-shot schedule cannot be served by the corpus"""

    status_code = 2


class CheckpointError(GeoLabError):
    """Checkpoint container is unreadable or does not match the model"""

    status_code = 2


class ConfigError(GeoLabError, ValueError):
    """Unknown key or value that cannot be coerced"""

    status_code = 2


class ConfigMismatchError(GeoLabError):
    """Artifacts were produced under a different configuration"""

    status_code = 2


class MissingArtifactError(GeoLabError):
    """A stage input is missing; names the subcommand that produces it"""

    status_code = 2

    def __init__(self, artifact: str, producer: str):
        self.artifact = artifact
        self.producer = producer
        super().__init__(f"missing artifact {artifact}; run `geolab {producer}` first")


class LabelError(GeoLabError, ValueError):
    """Generated labels disagree with the geometry oracle"""
