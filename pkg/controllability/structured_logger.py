import logging
import json
from datetime import datetime


class StructuredLogger:
    def __init__(self, name="controllability", level=logging.INFO):
        self.logger = logging.getLogger(name)
        self.logger.setLevel(level)

        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )

        # Create console handler if not already exists
        if not self.logger.handlers:
            console_handler = logging.StreamHandler()
            console_handler.setFormatter(formatter)
            self.logger.addHandler(console_handler)

    def set_level(self, level):
        """Change the level of the underlying logger"""
        if isinstance(level, str):
            level = getattr(logging, level.upper(), logging.INFO)
        self.logger.setLevel(level)

    def info(self, message, extra_data=None):
        """Log info message with optional structured data"""
        self.logger.info(self._format_log_data(message, extra_data))

    def error(self, message, extra_data=None):
        """Log error message with optional structured data"""
        self.logger.error(self._format_log_data(message, extra_data))

    def warning(self, message, extra_data=None):
        """Log warning message with optional structured data"""
        self.logger.warning(self._format_log_data(message, extra_data))

    def debug(self, message, extra_data=None):
        """Log debug message with optional structured data"""
        if self.logger.isEnabledFor(logging.DEBUG):
            self.logger.debug(self._format_log_data(message, extra_data))

    def _format_log_data(self, message, extra_data):
        """Format log message with structured data"""
        if extra_data:
            try:
                extra_json = json.dumps(extra_data, default=str)
                return f"{message} | Data: {extra_json}"
            except (TypeError, ValueError):
                return f"{message} | Data: {str(extra_data)}"
        return message

    def log_iteration(self, lam, iteration, increment, relaxation, resolvent_residual=None):
        """Log one application of the fixed-point map"""
        self.debug("Fixed-point iteration", {
            'lambda': lam,
            'iteration': iteration,
            'increment': increment,
            'relaxation': relaxation,
            'resolvent_residual': resolvent_residual
        })

    def log_solve_report(self, report):
        """Log the summary of a steering run"""
        self.info("Steering run completed", {
            'lambda': report.get('lambda'),
            'converged': report.get('converged'),
            'iterations': report.get('iterations'),
            'terminal_error': report.get('terminal_error'),
            'terminal_identity_residual': report.get('terminal_identity_residual'),
            'control_l2': report.get('control_l2'),
            'timestamp': datetime.now().isoformat()
        })

    def log_sweep_row(self, row):
        """Log a single row of a lambda sweep"""
        self.info("Sweep row", row)

    def log_suite_result(self, result):
        """Log the outcome of an invariant suite"""
        data = {
            'suite': result.get('name'),
            'is_valid': result.get('is_valid'),
            'checks': len(result.get('checks', [])),
            'errors': result.get('errors', [])
        }
        if result.get('is_valid'):
            self.info("Invariant suite passed", data)
        else:
            self.warning("Invariant suite failed", data)

    def log_error_with_context(self, error, context):
        """Log error with contextual information"""
        error_data = {
            'error_type': type(error).__name__,
            'error_message': str(error),
            'context': context,
            'timestamp': datetime.now().isoformat()
        }

        self.error("Error occurred", error_data)

    def log_performance(self, operation, duration_ms):
        """Log performance metrics for an operation"""
        self.debug(f"Performance: {operation}", {
            'operation': operation,
            'duration_ms': duration_ms,
            'timestamp': datetime.now().isoformat()
        })


def get_structured_logger(level=logging.INFO):
    """Factory function to get structured logger instance"""
    logger = StructuredLogger()
    logger.set_level(level)
    return logger
