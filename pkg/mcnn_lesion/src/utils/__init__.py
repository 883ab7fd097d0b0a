"""
Utility modules for mcnn-lesion.

This package contains utility modules shared by the command-line front end,
currently the standardized error handling.
"""

from .error_handler import create_error_response, format_error_lines, handle_exception

__all__ = [
    'create_error_response',
    'format_error_lines',
    'handle_exception',
]
