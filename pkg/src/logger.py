"""
Logging module for the CCPO toolkit
Provides structured logging with timestamps for training runs and verification
"""

import logging
import os


class CCPOLogger:
    """Thin wrapper around a stdlib logger with run-specific helpers"""

    def __init__(self, name='CCPO', log_file=None, console_level=None):
        """
        Initialize logger

        Args:
            name: Logger name
            log_file: Path to log file (defaults to $CCPO_LOG_FILE or ccpo.log)
            console_level: Console level name (defaults to $CCPO_LOG_LEVEL or INFO)
        """
        self.logger = logging.getLogger(name)
        self.logger.setLevel(logging.DEBUG)

        # Prevent duplicate handlers
        if self.logger.handlers:
            return

        log_file = log_file or os.getenv('CCPO_LOG_FILE', 'ccpo.log')
        console_level = console_level or os.getenv('CCPO_LOG_LEVEL', 'INFO')

        detailed_formatter = logging.Formatter(
            '%(asctime)s - %(levelname)s - %(name)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )

        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(detailed_formatter)

        console_handler = logging.StreamHandler()
        console_handler.setLevel(getattr(logging, console_level.upper(), logging.INFO))
        console_handler.setFormatter(detailed_formatter)

        self.logger.addHandler(file_handler)
        self.logger.addHandler(console_handler)

    def info(self, message):
        """Log info message"""
        self.logger.info(message)

    def debug(self, message):
        """Log debug message"""
        self.logger.debug(message)

    def warning(self, message):
        """Log warning message"""
        self.logger.warning(message)

    def error(self, message, exc_info=False):
        """Log error message with optional exception info"""
        self.logger.error(message, exc_info=exc_info)

    def log_validation_error(self, field, value, reason):
        """
        Log validation error

        Args:
            field: Field that failed validation
            value: Invalid value
            reason: Reason for failure
        """
        self.error(f"Validation Error - {field}='{value}': {reason}")

    def log_step(self, report):
        """
        Log one trainer step at debug level

        Args:
            report: StepReport emitted by the trainer
        """
        advantages = ', '.join(f'{a:+.4f}' for a in report.per_agent_mean_advantage)
        norms = ', '.join(f'{g:.4f}' for g in report.grad_norms)
        self.debug(
            f"Step {report.step} - train_acc={report.train_accuracy:.4f} "
            f"gate={report.gate_value:.4f} max_kl={report.max_kl:.3e} "
            f"| mean_adv=[{advantages}] | grad_norm=[{norms}]"
        )

    def log_verification(self, result):
        """
        Log a verification check outcome

        Args:
            result: VerificationResult with name, passed, measured, bound
        """
        msg = (f"Verification - {result.name}: measured={result.measured:.6g} "
               f"bound={result.bound:.6g}")
        if result.detail:
            msg += f" | {result.detail}"
        if result.passed:
            self.info(msg + " [PASS]")
        else:
            self.error(msg + " [FAIL]")

    def log_run(self, kind, **params):
        """
        Log the start of a run

        Args:
            kind: Run kind (train, compare, sweep, verify)
            **params: Parameters worth recording
        """
        msg = f"Run - {kind}"
        if params:
            msg += f" | {params}"
        self.info(msg)


def get_logger(name='CCPO'):
    """
    Get a logger instance

    Args:
        name: Logger name

    Returns:
        CCPOLogger instance
    """
    return CCPOLogger(name)
