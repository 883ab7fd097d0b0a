#!/usr/bin/env python3
"""
Error handling utilities for mcnn-lesion.

This module provides standardized error handling functions for the CLI,
ensuring consistent diagnostics and exit codes across all commands.
"""

import logging
import traceback
from typing import Any, Dict, List, Optional

from ..constants import EXIT_UNEXPECTED
from ..exceptions import MCNNError

# Configure logging
logger = logging.getLogger("mcnn-lesion.error-handler")


def create_error_response(
    error_message: str,
    error_type: str = "MCNNError",
    exit_code: int = EXIT_UNEXPECTED,
    detail: Optional[str] = None,
    context: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    """
    Create a standardized error record.

    Args:
        error_message: The main error message
        error_type: The type of error (e.g., "ManifestError")
        exit_code: Process exit code for the failure
        detail: Optional detailed error information (traceback)
        context: Optional dictionary with additional error context

    Returns:
        A dictionary with the standardized error format
    """
    response: Dict[str, Any] = {
        "error": error_message,
        "error_type": error_type,
        "exit_code": exit_code,
    }
    if detail:
        response["detail"] = detail
    if context:
        response["context"] = context
    return response


def handle_exception(
    exception: BaseException,
    log_error: bool = True,
    include_traceback: bool = False,
) -> Dict[str, Any]:
    """
    Handle an exception and convert it to a standardized error record.

    MCNNError subclasses contribute their context and exit code; any other
    exception maps to the unexpected-error exit code.

    Args:
        exception: The exception to handle
        log_error: Whether to log the error (default: True)
        include_traceback: Whether to include the traceback (default: False)

    Returns:
        A dictionary with the standardized error format
    """
    error_message = str(exception)
    error_type = exception.__class__.__name__
    exit_code = EXIT_UNEXPECTED
    detail = None
    context = None

    if isinstance(exception, MCNNError):
        error_message = exception.message
        context = exception.context
        exit_code = exception.exit_code
        if include_traceback and exception.traceback:
            detail = exception.traceback
    elif include_traceback:
        detail = "".join(
            traceback.format_exception(type(exception), exception, exception.__traceback__)
        )

    if log_error:
        logger.error(f"Exception: {error_type}: {error_message}")
        if detail:
            logger.debug(f"Exception detail: {detail}")
        if context:
            logger.debug(f"Exception context: {context}")

    return create_error_response(
        error_message=error_message,
        error_type=error_type,
        exit_code=exit_code,
        detail=detail,
        context=context,
    )


def format_error_lines(error: Dict[str, Any]) -> List[str]:
    """
    Render an error record as stderr lines.

    ManifestError-style context with an "errors" list is expanded one
    error per line.

    Args:
        error: Record produced by handle_exception

    Returns:
        Lines to print, without trailing newlines
    """
    lines = [f"error: {error['error']} ({error['error_type']})"]
    context = dict(error.get("context") or {})
    for item in context.pop("errors", []):
        lines.append(f"  - {item}")
    for key, value in context.items():
        lines.append(f"  {key}: {value}")
    return lines
