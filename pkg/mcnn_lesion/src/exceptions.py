#!/usr/bin/env python3
"""
Custom exceptions for mcnn-lesion.

This module defines the exceptions raised throughout the package to provide
specific error information and enable consistent error reporting. Each
exception class records its details in a context dictionary so the CLI can
print them and map the failure to an exit code.
"""

import sys
import traceback
from typing import Any, Dict, List, Optional, Sequence

from .constants import (
    EXIT_ARTIFACT,
    EXIT_CONFIG,
    EXIT_FORMAT,
    EXIT_INPUT,
    EXIT_UNEXPECTED,
)


class MCNNError(Exception):
    """
    Base exception for all mcnn-lesion errors.

    This class provides common functionality for all package exceptions,
    including error context tracking, stack trace capture, and formatted
    error messages.
    """

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None):
        """
        Initialize the exception with a message and optional context.

        Args:
            message: Error message
            context: Optional dictionary with additional error context
        """
        self.message = message
        self.context = context or {}
        self.traceback = traceback.format_exc() if sys.exc_info()[0] else None
        super().__init__(message)

    def to_dict(self) -> Dict[str, Any]:
        """
        Convert the exception to a dictionary for serialization.

        Returns:
            Dictionary representation of the exception
        """
        result: Dict[str, Any] = {
            "error": self.message,
            "error_type": self.__class__.__name__,
            "exit_code": self.exit_code,
        }
        if self.context:
            result["context"] = self.context
        return result

    @property
    def exit_code(self) -> int:
        """
        Get the process exit code for this exception type.

        The lookup walks the class hierarchy so subclasses inherit the code
        of the nearest mapped ancestor.

        Returns:
            Exit code as an integer
        """
        exit_codes = {
            "ConfigurationError": EXIT_CONFIG,
            "InputError": EXIT_INPUT,
            "ImageDecodeError": EXIT_INPUT,
            "ManifestError": EXIT_INPUT,
            "UndefinedCurveError": EXIT_INPUT,
            "VocabularyMismatchError": EXIT_INPUT,
            "ModelFormatError": EXIT_FORMAT,
            "EnsembleFormatError": EXIT_FORMAT,
            "ArtifactError": EXIT_ARTIFACT,
        }
        for cls in type(self).__mro__:
            if cls.__name__ in exit_codes:
                return exit_codes[cls.__name__]
        return EXIT_UNEXPECTED

    def __str__(self) -> str:
        """
        Get a string representation of the exception.

        Returns:
            Formatted error message with context
        """
        parts = [f"{self.__class__.__name__}: {self.message}"]

        if self.context:
            context_str = ", ".join(f"{k}={v}" for k, v in self.context.items())
            parts.append(f"Context: {context_str}")

        return " | ".join(parts)


class InputError(MCNNError, ValueError):
    """
    Exception raised when an operation rejects its input.

    Used for empty datasets, malformed probability rows, misaligned sample
    ids, non-finite values and similar precondition failures.
    """


class ShapeError(InputError):
    """
    Exception raised when tensor shapes disagree.
    """

    def __init__(
        self,
        message: str,
        dimension: Optional[str] = None,
        expected: Optional[Any] = None,
        actual: Optional[Any] = None,
        context: Optional[Dict[str, Any]] = None,
    ):
        """
        Initialize the exception.

        Args:
            message: Error message
            dimension: Name of the offending dimension
            expected: Expected size or shape
            actual: Actual size or shape
            context: Optional dictionary with additional error context
        """
        context = context or {}
        if dimension is not None:
            context["dimension"] = dimension
        if expected is not None:
            context["expected"] = expected
        if actual is not None:
            context["actual"] = actual
        super().__init__(message, context)


class ConfigurationError(MCNNError):
    """
    Exception raised for configuration errors.

    This exception is used when a configuration file or value is invalid,
    such as unknown keys, out-of-range values or unreadable JSON.
    """

    def __init__(
        self,
        message: str,
        config_key: Optional[str] = None,
        config_value: Optional[Any] = None,
        context: Optional[Dict[str, Any]] = None,
    ):
        """
        Initialize the exception.

        Args:
            message: Error message
            config_key: Configuration key that caused the error
            config_value: Configuration value that caused the error
            context: Optional dictionary with additional error context
        """
        context = context or {}
        if config_key is not None:
            context["config_key"] = config_key
        if config_value is not None:
            context["config_value"] = str(config_value)
        super().__init__(message, context)


class ModelConfigError(ConfigurationError):
    """
    Exception raised when a model architecture is not realizable.
    """

    def __init__(
        self,
        message: str,
        layer: Optional[str] = None,
        context: Optional[Dict[str, Any]] = None,
    ):
        """
        Initialize the exception.

        Args:
            message: Error message
            layer: Name of the failing layer (e.g. "conv_block_2")
            context: Optional dictionary with additional error context
        """
        context = context or {}
        if layer is not None:
            context["layer"] = layer
        super().__init__(message, context=context)


class ModelFormatError(MCNNError):
    """
    Exception raised when a model file cannot be decoded.
    """

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        context: Optional[Dict[str, Any]] = None,
    ):
        context = context or {}
        if path is not None:
            context["path"] = path
        super().__init__(message, context)


class BadMagicError(ModelFormatError):
    """Model file does not start with the expected magic bytes."""


class VersionMismatchError(ModelFormatError):
    """Model file was written with an unsupported format version."""


class TruncatedModelError(ModelFormatError):
    """Model file ended before all declared content was read."""


class ImageDecodeError(MCNNError):
    """
    Exception raised when a netpbm image cannot be decoded.
    """

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        context: Optional[Dict[str, Any]] = None,
    ):
        context = context or {}
        if path is not None:
            context["path"] = path
        super().__init__(message, context)


class UnsupportedImageFormatError(ImageDecodeError):
    """Image magic is neither P5 nor P6."""


class MaxvalError(ImageDecodeError):
    """Image maxval is not 255."""


class ImageSizeMismatchError(ImageDecodeError):
    """Raster length disagrees with the header dimensions."""


class ManifestError(MCNNError):
    """
    Exception raised when a label manifest fails to load.

    The loader collects every row error before raising, so a single run
    reports all problems in the file.
    """

    def __init__(
        self,
        message: str,
        errors: Optional[Sequence[str]] = None,
        path: Optional[str] = None,
        context: Optional[Dict[str, Any]] = None,
    ):
        """
        Initialize the exception.

        Args:
            message: Error message
            errors: Individual row or header errors
            path: Manifest path
            context: Optional dictionary with additional error context
        """
        self.errors: List[str] = list(errors or [])
        context = context or {}
        if path is not None:
            context["path"] = path
        if self.errors:
            context["errors"] = self.errors
        super().__init__(message, context)


class UndefinedCurveError(MCNNError):
    """
    Exception raised when a one-vs-rest ROC curve has no positives or no
    negatives.
    """

    def __init__(
        self,
        message: str,
        class_index: Optional[int] = None,
        class_code: Optional[str] = None,
        context: Optional[Dict[str, Any]] = None,
    ):
        context = context or {}
        if class_index is not None:
            context["class_index"] = class_index
        if class_code is not None:
            context["class_code"] = class_code
        super().__init__(message, context)


class VocabularyMismatchError(MCNNError):
    """
    Exception raised when an ensemble and a manifest disagree on classes.
    """

    def __init__(
        self,
        message: str,
        expected: Optional[Sequence[str]] = None,
        found: Optional[Sequence[str]] = None,
        context: Optional[Dict[str, Any]] = None,
    ):
        context = context or {}
        if expected is not None:
            context["expected"] = list(expected)
        if found is not None:
            context["found"] = list(found)
        super().__init__(message, context)


class EnsembleFormatError(MCNNError):
    """
    Exception raised when an ensemble directory is missing or inconsistent.
    """

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        context: Optional[Dict[str, Any]] = None,
    ):
        context = context or {}
        if path is not None:
            context["path"] = path
        super().__init__(message, context)


class ArtifactError(MCNNError):
    """
    Exception raised when an output artifact cannot be written.
    """

    def __init__(
        self,
        message: str,
        artifact: Optional[str] = None,
        context: Optional[Dict[str, Any]] = None,
    ):
        context = context or {}
        if artifact is not None:
            context["artifact"] = artifact
        super().__init__(message, context)
