import logging
import traceback
from functools import wraps

from domac import config
from domac.errors import ConfigurationError, DomacError, UsageError

logger = logging.getLogger("domac.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


def exit_code_for(exc):
    """Map an exception raised under the CLI to its process exit status"""
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, ConfigurationError) and exc.line is not None:
        # malformed config file: the operator has to fix the input
        return EXIT_USAGE
    if isinstance(exc, DomacError):
        return exc.exit_code
    return EXIT_RUNTIME


def handle_cli_errors(f):
    """Turn exceptions raised by a command into exit codes.

    Known errors are logged with their message. Anything else is logged with
    its traceback when DOMAC_DEBUG is set and with a generic message otherwise.
    """

    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except DomacError as e:
            logger.error(f"{type(e).__name__}: {e.message}")
            if e.details:
                logger.error(f"Details: {e.details}")
            if config.DEBUG:
                logger.error(traceback.format_exc())
            return exit_code_for(e)
        except OSError as e:
            logger.error(f"I/O failure: {str(e)}")
            if config.DEBUG:
                logger.error(traceback.format_exc())
            return EXIT_RUNTIME
        except Exception as e:
            if config.DEBUG:
                logger.error(f"Unhandled exception: {str(e)}")
                logger.error(traceback.format_exc())
            else:
                logger.error("An unexpected error occurred")
            return EXIT_RUNTIME

    return decorated_function
