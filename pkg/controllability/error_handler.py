import traceback
from typing import Any, Callable, Optional

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_NONCONVERGED = 4


class ControllabilityError(Exception):
    """Base class for every error raised by the toolkit"""


class InvalidInputError(ControllabilityError, ValueError):
    """Non-finite values or parameters outside their admissible range"""


class DimensionError(ControllabilityError, ValueError):
    """Grid or length mismatch between operands"""


class ResolutionError(ControllabilityError, ValueError):
    """Mode truncation too large for the spatial grid"""


class OrderingError(ControllabilityError, ValueError):
    """Evolution requested backwards in time (s > t)"""


class WindowError(ControllabilityError, ValueError):
    """History window shorter than the requested lag"""


class DomainError(ControllabilityError, ValueError):
    """Time outside the horizon or non-positive horizon"""


class ConfigurationError(ControllabilityError):
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        prefix = ""
        if key:
            prefix = f"{key}: " if line is None else f"line {line}: {key}: "
        super().__init__(prefix + message)


class SolverFailureError(ControllabilityError):
    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")


class ErrorHandler:
    def __init__(self, logger=None):
        self.logger = logger
        self.error_counts = {}

    def handle_error(self, error, context="Unknown"):
        """Handle and log errors"""
        error_type = type(error).__name__

        self.error_counts[error_type] = self.error_counts.get(error_type, 0) + 1

        error_info = {
            'error_type': error_type,
            'error_message': str(error),
            'context': context,
            'count': self.error_counts[error_type],
            'traceback': traceback.format_exc()
        }
        if isinstance(error, SolverFailureError):
            error_info['residual'] = error.residual
            error_info['iterations'] = error.iterations
        if isinstance(error, ConfigurationError) and error.line is not None:
            error_info['line'] = error.line

        if self.logger:
            self.logger.log_error_with_context(error, error_info)

        return error_info

    def get_error_stats(self):
        """Get error statistics"""
        return self.error_counts.copy()

    def exit_code_for(self, error) -> int:
        """Map an exception onto the command-line exit status"""
        if isinstance(error, ConfigurationError):
            return EXIT_CONFIG
        if isinstance(error, SolverFailureError):
            return EXIT_NONCONVERGED
        return EXIT_FAILURE


def get_error_handler(logger=None):
    """Factory function to get error handler instance"""
    return ErrorHandler(logger)


def safe_execute(func: Callable, default_return: Any = None, error_handler: Optional[ErrorHandler] = None):
    """Safely execute a function with error handling"""
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ControllabilityError as e:
            if error_handler:
                error_handler.handle_error(e, f"safe_execute:{func.__name__}")
            if callable(default_return):
                return default_return(e, *args, **kwargs)
            return default_return
    return wrapper
