import functools
import logging

from src.report import CheckReport

logger = logging.getLogger('apaths')


def failed_record(name, error):
    """A failed record carrying the exception type and message."""
    return CheckReport(name=name, residual=None, tolerance=0.0, passed=False,
                       details={'error': type(error).__name__, 'message': str(error)})


def record_failures(name, reraise=()):
    """
    Decorator turning an exception raised by a check into a failed record.

    Args:
        name: Record name used when the check raises
        reraise: Exception types that must abort the run instead

    Returns:
        Decorator
    """
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except reraise:
                raise
            except Exception as e:
                logger.warning(f"Check {name} ({func.__name__}) raised {type(e).__name__}: {e}")
                return failed_record(name, e)

        return wrapper

    return decorator
