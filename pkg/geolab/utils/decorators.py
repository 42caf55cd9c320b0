"""
GeoLab - Custom Decorators
"""
import json
import logging
import sys
import time
from functools import wraps

import click

from geolab.utils.errors import GeoLabError
from geolab.utils.helpers import create_error_response, create_success_response

logger = logging.getLogger(__name__)


def cli_response(f):
    """Decorator for consistent subcommand results: one JSON line, exit code by outcome"""
    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            result = f(*args, **kwargs)
        except GeoLabError as e:
            logger.error(f"{f.__name__} failed: {str(e)}")
            payload = create_error_response(str(e), e.status_code, {'error_type': type(e).__name__})
            click.echo(json.dumps(payload, sort_keys=True), err=True)
            sys.exit(e.status_code)
        except Exception as e:
            logger.exception(f"Unexpected error in {f.__name__}: {str(e)}")
            payload = create_error_response('Internal error: ' + str(e), 1, {'error_type': type(e).__name__})
            click.echo(json.dumps(payload, sort_keys=True), err=True)
            sys.exit(1)

        click.echo(json.dumps(create_success_response(result), sort_keys=True, default=str))
        return result

    return decorated_function


def log_stage(stage_name):
    """Decorator to log the start, end and duration of a pipeline stage"""
    def decorator(f):
        @wraps(f)
        def decorated_function(*args, **kwargs):
            logger.info(f"Stage {stage_name} started")
            started = time.perf_counter()
            result = f(*args, **kwargs)
            logger.info(f"Stage {stage_name} finished in {time.perf_counter() - started:.1f}s")
            return result
        return decorated_function
    return decorator
