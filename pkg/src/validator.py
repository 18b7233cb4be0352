"""
Validation module for the CCPO toolkit
Validates numeric inputs, hyperparameters and indices before they reach the math
"""

import math
from typing import Sequence

import numpy as np

from src.logger import get_logger

logger = get_logger('Validator')


class ValidationError(Exception):
    """Invalid input to a library operation"""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class Validator:
    """Input validator for credit, training and environment parameters"""

    @staticmethod
    def validate_finite(name: str, value) -> float:
        """
        Validate a finite real number

        Args:
            name: Field name used in messages
            value: Value to check

        Returns:
            Value as float

        Raises:
            ValidationError: If value is not a finite number
        """
        try:
            value = float(value)
        except (ValueError, TypeError):
            logger.log_validation_error(name, value, 'Must be a number')
            raise ValidationError(f"Invalid {name}: {value}. Must be a number", name)

        if not math.isfinite(value):
            logger.log_validation_error(name, value, 'Must be finite')
            raise ValidationError(f"Invalid {name}: {value}. Must be finite", name)

        return value

    @staticmethod
    def validate_positive(name: str, value) -> float:
        """
        Validate a strictly positive real

        Raises:
            ValidationError: If value is not > 0
        """
        value = Validator.validate_finite(name, value)
        if value <= 0:
            logger.log_validation_error(name, value, 'Must be greater than 0')
            raise ValidationError(f"Invalid {name}: {value}. Must be greater than 0", name)
        return value

    @staticmethod
    def validate_open_unit(name: str, value) -> float:
        """
        Validate a real in the open interval (0, 1)

        Raises:
            ValidationError: If value is outside (0, 1)
        """
        value = Validator.validate_finite(name, value)
        if not 0.0 < value < 1.0:
            logger.log_validation_error(name, value, 'Must lie in (0, 1)')
            raise ValidationError(f"Invalid {name}: {value}. Must lie in (0, 1)", name)
        return value

    @staticmethod
    def validate_closed_unit(name: str, value) -> float:
        """
        Validate a real in the closed interval [0, 1]

        Raises:
            ValidationError: If value is outside [0, 1]
        """
        value = Validator.validate_finite(name, value)
        if not 0.0 <= value <= 1.0:
            logger.log_validation_error(name, value, 'Must lie in [0, 1]')
            raise ValidationError(f"Invalid {name}: {value}. Must lie in [0, 1]", name)
        return value

    @staticmethod
    def validate_int_range(name: str, value, minimum: int, maximum: int = None) -> int:
        """
        Validate an integer within [minimum, maximum]

        Raises:
            ValidationError: If value is not an integer or is out of range
        """
        try:
            if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
                as_float = as_int = int(value)
            else:
                as_float = float(value)
                as_int = int(as_float)
        except (ValueError, TypeError, OverflowError):
            logger.log_validation_error(name, value, 'Must be a valid integer')
            raise ValidationError(f"Invalid {name}: {value}. Must be an integer", name)

        if as_int != as_float:
            logger.log_validation_error(name, value, 'Must be a valid integer')
            raise ValidationError(f"Invalid {name}: {value}. Must be an integer", name)

        if as_int < minimum:
            logger.log_validation_error(name, as_int, f'Must be at least {minimum}')
            raise ValidationError(f"{name} {as_int} is below minimum {minimum}", name)

        if maximum is not None and as_int > maximum:
            logger.log_validation_error(name, as_int, f'Must be at most {maximum}')
            raise ValidationError(f"{name} {as_int} exceeds maximum {maximum}", name)

        return as_int

    @staticmethod
    def validate_choice(name: str, value: str, choices: Sequence[str]) -> str:
        """
        Validate a value drawn from a fixed set of names

        Raises:
            ValidationError: If value is not one of choices
        """
        value = str(value).strip().lower()
        if value not in choices:
            logger.log_validation_error(name, value, f'Must be one of {list(choices)}')
            raise ValidationError(f"Invalid {name}: {value}. Must be one of {', '.join(choices)}", name)
        return value

    @staticmethod
    def validate_index(name: str, value, size: int) -> int:
        """
        Validate an index into a table of the given size

        Raises:
            ValidationError: If value is not in [0, size)
        """
        return Validator.validate_int_range(name, value, 0, size - 1)

    @staticmethod
    def validate_group_size(name: str, size: int) -> int:
        """
        Validate a within-prompt group size (group normalization needs N >= 2)

        Raises:
            ValidationError: If size < 2
        """
        if size < 2:
            logger.log_validation_error(name, size, 'Group-relative normalization needs at least 2 samples')
            raise ValidationError(
                f"{name} {size} is below minimum 2 (group-relative normalization undefined)", name
            )
        return size
