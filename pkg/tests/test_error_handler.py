"""
Unit tests for error_handler module.

Tests custom exceptions, the stage decorator, error-line rendering and the
safe execution context manager.
"""

import pytest

from utils.error_handler import (
    ConfigError,
    CoverageError,
    FileError,
    InvalidChannelError,
    InvalidParameterError,
    NotFoundError,
    SolverError,
    ZakDDError,
    format_error_line,
    safe_execute,
    wrap_errors,
)


class TestCustomExceptions:
    """Test custom exception classes."""

    def test_base_exception(self):
        """Test base ZakDDError."""
        error = ZakDDError("Test error")
        assert str(error) == "Test error"
        assert error.stage is None
        assert isinstance(error, Exception)

    @pytest.mark.parametrize("cls", [
        InvalidParameterError, InvalidChannelError, CoverageError,
        SolverError, NotFoundError, FileError, ConfigError,
    ])
    def test_hierarchy(self, cls):
        """Test every toolkit error derives from ZakDDError."""
        error = cls("failed")
        assert isinstance(error, ZakDDError)
        assert str(error) == "failed"

    def test_config_error_position(self):
        """Test ConfigError carries line and column."""
        error = ConfigError("bad token", line=3, column=7)
        assert (error.line, error.column) == (3, 7)


class TestFormatErrorLine:
    """Test single-line error rendering."""

    def test_basic_line(self):
        """Test class, stage and message fields."""
        line = format_error_line(SolverError("singular", stage="rxchain"))
        assert line == 'error=SolverError stage=rxchain message="singular"'

    def test_unknown_stage(self):
        """Test errors without a stage render as unknown."""
        assert "stage=unknown" in format_error_line(ValueError("x"))

    def test_explicit_stage_wins(self):
        """Test the stage argument overrides the error's own stage."""
        line = format_error_line(ZakDDError("x", stage="a"), stage="b")
        assert "stage=b" in line

    def test_config_position(self):
        """Test config errors append line and column."""
        line = format_error_line(ConfigError("bad", line=4, column=2, stage="config"))
        assert line.endswith("line=4 column=2")

    def test_message_is_single_line(self):
        """Test newlines and double quotes are neutralized."""
        line = format_error_line(ZakDDError('two\nlines "quoted"'))
        assert "\n" not in line
        assert "message=\"two lines 'quoted'\"" in line


class TestWrapErrors:
    """Test the stage decorator."""

    def test_success_passthrough(self):
        """Test return values pass through."""
        @wrap_errors(stage="run")
        def ok():
            return 42

        assert ok() == 42

    def test_toolkit_error_tagged(self):
        """Test untagged toolkit errors receive the stage."""
        @wrap_errors(stage="filters")
        def fails():
            raise InvalidParameterError("beta too large")

        with pytest.raises(InvalidParameterError) as exc_info:
            fails()
        assert exc_info.value.stage == "filters"

    def test_existing_stage_kept(self):
        """Test an already tagged error keeps its stage."""
        @wrap_errors(stage="outer")
        def fails():
            raise SolverError("singular", stage="inner")

        with pytest.raises(SolverError) as exc_info:
            fails()
        assert exc_info.value.stage == "inner"

    def test_unexpected_error_wrapped(self):
        """Test foreign exceptions become ZakDDError with a cause."""
        @wrap_errors(stage="channel")
        def fails():
            raise KeyError("missing")

        with pytest.raises(ZakDDError) as exc_info:
            fails()
        assert exc_info.value.stage == "channel"
        assert isinstance(exc_info.value.__cause__, KeyError)

    def test_preserves_metadata(self):
        """Test functools.wraps keeps the name."""
        @wrap_errors()
        def named():
            pass

        assert named.__name__ == "named"


class TestSafeExecute:
    """Test safe_execute context manager."""

    def test_safe_execute_success(self):
        """Test safe_execute with successful operation."""
        with safe_execute("test operation"):
            result = 1 + 1
        assert result == 2

    def test_safe_execute_suppresses(self, caplog):
        """Test errors are logged and swallowed by default."""
        with safe_execute("write results"):
            raise ValueError("disk full")
        assert "write results failed" in caplog.text

    def test_safe_execute_reraises_toolkit_error(self):
        """Test toolkit errors are re-raised unchanged."""
        with pytest.raises(FileError):
            with safe_execute("write results", raise_on_error=True):
                raise FileError("denied")

    def test_safe_execute_wraps_foreign_error(self):
        """Test foreign errors are re-raised as ZakDDError."""
        with pytest.raises(ZakDDError) as exc_info:
            with safe_execute("write results", raise_on_error=True):
                raise OSError("denied")
        assert exc_info.value.stage == "write results"

    def test_safe_execute_skips_rest_of_block(self):
        """Test a suppressed error leaves the caller's default untouched."""
        result = "default"
        with safe_execute("write results"):
            result = int("written")
        assert result == "default"

    def test_safe_execute_has_no_fallback(self):
        """Test the context manager takes no fallback value."""
        with pytest.raises(TypeError):
            safe_execute("write results", fallback_value=0)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
