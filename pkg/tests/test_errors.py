"""
Tests for the exception hierarchy and exit statuses
"""
import pytest

from mphb.errors import (
    EXIT_DUPLICATES,
    EXIT_FAILURE,
    EXIT_VERIFY_FAILED,
    BucketOverflow,
    ConfigError,
    DuplicateFingerprint,
    FormatError,
    InvalidKey,
    KeyTooLong,
    MphbError,
    SeedSearchExhausted,
    VerificationFailed,
    describe,
    exit_status,
    register_error_handlers,
)


@pytest.mark.unit
class TestExitStatus:
    """Test the exception to exit status table"""

    @pytest.mark.parametrize("error,status", [
        (ConfigError("bad"), EXIT_FAILURE),
        (FormatError("bad", 3), EXIT_FAILURE),
        (KeyTooLong(70, 65), EXIT_FAILURE),
        (BucketOverflow(1, 300, 256, 6), EXIT_FAILURE),
        (SeedSearchExhausted(10), EXIT_FAILURE),
        (DuplicateFingerprint(0, 1), EXIT_DUPLICATES),
        (VerificationFailed("repeated"), EXIT_VERIFY_FAILED),
        (FileNotFoundError(2, "missing", "keys.txt"), EXIT_FAILURE),
        (RuntimeError("other"), EXIT_FAILURE),
    ])
    def test_mapping(self, error, status):
        register_error_handlers()
        assert exit_status(error) == status

    def test_overrides(self):
        register_error_handlers({DuplicateFingerprint: 9})
        try:
            assert exit_status(DuplicateFingerprint(0, 1)) == 9
        finally:
            register_error_handlers()


@pytest.mark.unit
class TestMessages:
    """Test error messages"""

    def test_hierarchy(self):
        assert issubclass(KeyTooLong, InvalidKey)
        assert all(issubclass(cls, MphbError) for cls in (ConfigError, FormatError, BucketOverflow))

    def test_duplicate_positions(self):
        error = DuplicateFingerprint(4, 0xAB).with_positions([3, 17])
        assert error.positions == (3, 17)
        assert str(error).endswith("for keys 3, 17")
        assert "bucket 4" in str(error)

    def test_format_error_offset(self):
        assert str(FormatError("truncated offsets", 36)) == "truncated offsets (at byte 36)"

    def test_config_error_field(self):
        assert str(ConfigError("must be at least 1", "kappa")) == "kappa: must be at least 1"

    def test_describe(self):
        assert describe(InvalidKey("empty key", 4)) == "error: key 4: empty key"
        assert describe(FileNotFoundError(2, "No such file", "keys.txt")) == "error: no such file: keys.txt"
