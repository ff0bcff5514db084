from django.core.exceptions import ValidationError


class ConfigurationError(ValidationError):
    """
    Invalid parameters, mismatched dimensions or malformed slates.
    """


class GraphLoadError(ConfigurationError):
    """
    A relation graph file could not be parsed or failed validation.
    """


class DatasetLoadError(ConfigurationError):
    """
    A logged-interaction file could not be parsed or failed validation.
    """


class NumericalError(ArithmeticError):
    """
    A matrix that must be positive-definite is not, or a solve lost accuracy.
    """


class UsageError(ValueError):
    """
    An operation was called outside its preconditions (empty slate, no candidates...).
    """


def error_message(exc):
    """Flatten a ValidationError-style exception into one readable line."""
    messages = getattr(exc, "messages", None)
    if messages:
        return "; ".join(str(m) for m in messages)
    return str(exc)
