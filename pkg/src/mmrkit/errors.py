"""Exception hierarchy shared across the toolchain.

The CLI maps these onto exit codes (parse=2, validation=3, network=4,
fixture miss=5); library code raises them directly.
"""


class MmrError(Exception):
    """Base class for all toolchain errors."""


class ParseError(MmrError):
    """Input document or response text could not be parsed."""


class ValidationError(MmrError):
    """Data violates a structural invariant or schema rule."""


class NetworkError(MmrError):
    """A live endpoint request failed permanently."""


class AuthenticationError(NetworkError):
    """The endpoint rejected the configured credentials."""


class FixtureMissError(MmrError):
    """Replay backend has no recorded fixture for a request."""
