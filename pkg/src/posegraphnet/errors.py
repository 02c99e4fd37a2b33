"""Exception types shared across the package."""


class TopologyError(ValueError):
    """Skeleton is not a rooted tree, or group masks do not partition it."""


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class DegenerateRotationError(ArithmeticError):
    """Rotation input too close to singular to orthonormalize."""


class AlignmentError(ArithmeticError):
    """Procrustes alignment on a rank-deficient point set."""


class ConfigError(ValueError):
    """Invalid run or model configuration."""


class DataError(ValueError):
    """Malformed dataset record or checkpoint."""
