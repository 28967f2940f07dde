"""Error handling utilities for zakdd.

This module provides:
- Custom exception classes for the delay-Doppler toolkit
- A stage decorator that turns unexpected failures into toolkit errors
- Safe execution context manager
"""

import logging
import functools
from typing import Callable, Any, Optional
from contextlib import contextmanager

logger = logging.getLogger(__name__)


# Custom Exception Classes
class ZakDDError(Exception):
    """Base exception for zakdd."""

    def __init__(self, message: str, stage: Optional[str] = None):
        self.stage = stage
        super().__init__(message)


class InvalidParameterError(ZakDDError):
    """Raised when a grid, transform or scheme parameter is out of range."""
    pass


class InvalidChannelError(ZakDDError):
    """Raised for channel instances the simulator cannot represent."""
    pass


class CoverageError(ZakDDError):
    """Raised when an ambiguity region does not cover the required points."""
    pass


class SolverError(ZakDDError):
    """Raised for singular or otherwise unsolvable linear systems."""
    pass


class NotFoundError(ZakDDError):
    """Raised when a search (e.g. compliant subgroup) comes back empty."""
    pass


class FileError(ZakDDError):
    """Exception raised for file operation errors."""
    pass


class ConfigError(ZakDDError):
    """Exception raised for configuration errors.

    Carries the 1-based ``line`` and ``column`` of the offending token when
    the failure comes from the parser.
    """

    def __init__(self, message: str, line: Optional[int] = None,
                 column: Optional[int] = None, stage: Optional[str] = None):
        self.line = line
        self.column = column
        super().__init__(message, stage=stage)


def format_error_line(error: BaseException, stage: Optional[str] = None) -> str:
    """Render an error as a single machine-parsable line.

    Args:
        error: The exception to render
        stage: Stage name; falls back to ``error.stage`` when present

    Returns:
        ``error=<Class> stage=<stage> message="<text>"`` plus line/column for config errors
    """
    stage = stage or getattr(error, 'stage', None) or 'unknown'
    message = str(error).replace('\n', ' ').replace('"', "'")
    parts = [f"error={type(error).__name__}", f"stage={stage}", f'message="{message}"']
    if isinstance(error, ConfigError):
        if error.line is not None:
            parts.append(f"line={error.line}")
        if error.column is not None:
            parts.append(f"column={error.column}")
    return " ".join(parts)


# Stage Error Handler Decorator
def wrap_errors(stage: str = "unknown") -> Callable:
    """Decorator to handle pipeline-stage errors consistently.

    Toolkit errors pass through (tagged with the stage if untagged); any other
    exception is logged and re-raised as ZakDDError.

    Args:
        stage: Name of the pipeline stage

    Returns:
        Decorated function with stage error handling
    """
    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args, **kwargs) -> Any:
            try:
                return func(*args, **kwargs)
            except ZakDDError as e:
                if e.stage is None:
                    e.stage = stage
                raise
            except Exception as e:
                error_msg = f"{stage} failed: {e}"
                logger.error(error_msg, exc_info=True)
                raise ZakDDError(error_msg, stage=stage) from e

        return wrapper
    return decorator


# Safe Execution Context Manager
@contextmanager
def safe_execute(operation_name: str, raise_on_error: bool = False):
    """Context manager for safe execution with error handling.

    Errors are logged and suppressed unless raise_on_error is set. A
    suppressed error skips the rest of the block; there is no return value.

    Args:
        operation_name: Name of the operation for logging
        raise_on_error: Whether to raise exception after logging

    Yields:
        None

    Example:
        with safe_execute("write results", raise_on_error=True):
            writer.write_csv(frame, path)
    """
    try:
        yield
    except ZakDDError as e:
        logger.error(f"{operation_name} failed with ZakDDError: {e}", exc_info=True)
        if raise_on_error:
            raise
    except Exception as e:
        logger.error(f"{operation_name} failed with unexpected error: {e}", exc_info=True)
        if raise_on_error:
            raise ZakDDError(f"{operation_name} failed", stage=operation_name) from e
