"""Exception types raised across the package."""


class QRCError(Exception):
    """Base class for all errors raised by qrcipc."""


class ValidationError(QRCError, ValueError):
    """An input violated a documented precondition."""


class DomainError(QRCError, ValueError):
    """An operation was asked for outside the domain where it is defined."""


class CapacityError(QRCError, ValueError):
    """A requested system size exceeds the supported number of qubits."""


class NumericalError(QRCError, ArithmeticError):
    """A numerical routine failed or produced an out-of-tolerance result."""
