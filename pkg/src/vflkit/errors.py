"""Exception hierarchy.

Exit-code mapping used by the CLI: ConfigError family -> 1, TransportError
family -> 2, every other VflkitError -> 3.
"""


class VflkitError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(VflkitError):
    """Tensor dimensions do not admit the requested operation."""


class RowSelectError(VflkitError):
    """A row index is out of range for the tensor it selects from."""


class FrameError(VflkitError):
    """A wire frame violates the binary format (bad magic, truncation,
    non-finite float, size limit, trailing garbage)."""


class AddressError(VflkitError):
    """Message addressed to a party the communicator does not know."""


class TransportError(VflkitError):
    """Wire-level failure: connect/retry budget exhausted, broken socket."""


class RecvTimeout(TransportError):
    """No matching message arrived within the timeout."""


class IdListError(VflkitError):
    """A record-id list is invalid (duplicates, missing shared id)."""


class MatchingError(VflkitError):
    """The cross-party id intersection is empty; the run cannot proceed."""


class HeError(VflkitError):
    """Base class for homomorphic-encryption errors."""


class HeEncodingError(HeError):
    """Fixed-point encoding out of range or headroom guard violated."""


class ExponentMismatch(HeError):
    """Ciphertext/encoding exponents differ where they must be aligned."""


class CipherRangeError(HeError):
    """Ciphertext value outside [0, n^2)."""


class TopologyError(VflkitError):
    """Party set does not fit the protocol (missing/unused arbiter, unknown party)."""


class ProtocolStateError(VflkitError):
    """Protocol step invoked without its prerequisite state (e.g. backward
    before forward)."""


class ConfigError(VflkitError):
    """Run configuration file is malformed or inconsistent."""


class DataError(ConfigError):
    """Party data file is malformed (bad CSV cell, duplicate ids)."""
