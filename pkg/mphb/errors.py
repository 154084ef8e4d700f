"""Exception hierarchy and the exit-status handler table used by the CLI"""
from typing import Callable, Dict, Optional, Type


class MphbError(Exception):
    """Base class for every error raised by mphb"""


class ConfigError(MphbError):
    """Invalid build configuration or configuration file"""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class InvalidKey(MphbError):
    """A key is empty or contains a NUL byte"""

    def __init__(self, message: str, position: Optional[int] = None):
        self.position = position
        where = f"key {position}: " if position is not None else ""
        super().__init__(f"{where}{message}")


class KeyTooLong(InvalidKey):
    """A key exceeds the configured maximum key length"""

    def __init__(self, length: int, max_key_bytes: int, position: Optional[int] = None):
        self.length = length
        self.max_key_bytes = max_key_bytes
        super().__init__(
            f"key has {length} bytes, maximum is {max_key_bytes}", position
        )


class SeedSearchExhausted(MphbError):
    """No bucket seed produced an acyclic graph within the attempt budget"""

    def __init__(self, attempts: int, bucket: Optional[int] = None):
        self.attempts = attempts
        self.bucket = bucket
        where = f"bucket {bucket}: " if bucket is not None else ""
        super().__init__(f"{where}no acyclic graph after {attempts} seed attempts")


class BucketOverflow(MphbError):
    """A bucket holds more than ell keys for the chosen number of bucket bits"""

    def __init__(self, bucket: int, size: int, ell: int, bucket_bits: int):
        self.bucket = bucket
        self.size = size
        self.ell = ell
        self.bucket_bits = bucket_bits
        super().__init__(
            f"bucket {bucket} holds {size} keys (ell={ell}, b={bucket_bits})"
        )


class DuplicateFingerprint(MphbError):
    """Two keys share a full fingerprint, possibly because they are equal"""

    def __init__(self, bucket: int, fingerprint: int, positions: tuple = ()):
        self.bucket = bucket
        self.fingerprint = fingerprint
        self.positions = tuple(positions)
        message = f"bucket {bucket}: duplicate fingerprint {fingerprint:#034x}"
        if self.positions:
            message += " for keys " + ", ".join(str(p) for p in self.positions)
        super().__init__(message)

    def with_positions(self, positions) -> "DuplicateFingerprint":
        return DuplicateFingerprint(self.bucket, self.fingerprint, tuple(positions))


class FormatError(MphbError):
    """A function image is malformed, truncated or foreign"""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte {offset})")


class ModeMismatch(MphbError):
    """The function mode does not match the requested operation"""


class VerificationFailed(MphbError):
    """A function does not hash a key set perfectly"""

    def __init__(self, reason: str, position: Optional[int] = None):
        self.reason = reason
        self.position = position
        where = f"key {position}: " if position is not None else ""
        super().__init__(f"{where}{reason}")


EXIT_FAILURE = 1
EXIT_DUPLICATES = 2
EXIT_VERIFY_FAILED = 3

_handlers: Dict[Type[BaseException], int] = {}


def register_error_handlers(table: Optional[Dict[Type[BaseException], int]] = None) -> None:
    """
    Register the mapping from exception types to process exit statuses

    Args:
        table: Optional overrides merged over the default mapping
    """
    _handlers.clear()
    _handlers.update({
        ConfigError: EXIT_FAILURE,
        FormatError: EXIT_FAILURE,
        OSError: EXIT_FAILURE,
        InvalidKey: EXIT_FAILURE,
        BucketOverflow: EXIT_FAILURE,
        SeedSearchExhausted: EXIT_FAILURE,
        ModeMismatch: EXIT_FAILURE,
        DuplicateFingerprint: EXIT_DUPLICATES,
        VerificationFailed: EXIT_VERIFY_FAILED,
    })
    if table:
        _handlers.update(table)


def exit_status(error: BaseException) -> int:
    """Exit status for an error; the most specific registered type wins"""
    if not _handlers:
        register_error_handlers()
    for cls in type(error).__mro__:
        if cls in _handlers:
            return _handlers[cls]
    return EXIT_FAILURE


def describe(error: BaseException) -> str:
    """One-line message for stderr"""
    formatter: Callable[[BaseException], str] = _FORMATTERS.get(type(error), str)
    return f"error: {formatter(error)}"


_FORMATTERS: Dict[type, Callable[[BaseException], str]] = {
    FileNotFoundError: lambda e: f"no such file: {getattr(e, 'filename', e)}",
    IsADirectoryError: lambda e: f"is a directory: {getattr(e, 'filename', e)}",
}
