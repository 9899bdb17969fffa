"""Exception types shared across the package."""


class RnsError(Exception):
    """Base class for all errors raised by this package."""


class NotCoprime(RnsError):
    """Moduli (or a value and its modulus) share a nontrivial factor."""


class SystemMismatch(RnsError):
    """Residue vectors from different RNS systems were combined."""


class OutOfRange(RnsError):
    """An integer does not fit the representable signed range of the system."""


class DynamicRangeExceeded(RnsError):
    """A convolution's worst-case output exceeds the RNS dynamic range."""


class ShapeMismatch(RnsError):
    """Tensor or matrix operands have incompatible shapes or dtypes."""


class OverflowRisk(RnsError):
    """An accumulation could overflow its fixed-width accumulator."""


class UnsupportedStride(RnsError):
    """The tiled fast path only supports unit stride."""
