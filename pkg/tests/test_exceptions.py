"""
Tests for the exception hierarchy and the error handler.
"""
import pytest

from mcnn_lesion.src.exceptions import (
    ArtifactError,
    BadMagicError,
    ConfigurationError,
    EnsembleFormatError,
    ImageSizeMismatchError,
    InputError,
    ManifestError,
    MCNNError,
    ModelConfigError,
    ShapeError,
    TruncatedModelError,
    UndefinedCurveError,
    VocabularyMismatchError,
)
from mcnn_lesion.src.utils.error_handler import format_error_lines, handle_exception


@pytest.mark.parametrize("error,code", [
    (ConfigurationError("bad"), 2),
    (ModelConfigError("bad", layer="conv_block_2"), 2),
    (InputError("bad"), 3),
    (ShapeError("bad"), 3),
    (ManifestError("bad"), 3),
    (ImageSizeMismatchError("bad"), 3),
    (UndefinedCurveError("bad"), 3),
    (VocabularyMismatchError("bad"), 3),
    (BadMagicError("bad"), 4),
    (TruncatedModelError("bad"), 4),
    (EnsembleFormatError("bad"), 4),
    (ArtifactError("bad"), 5),
    (MCNNError("bad"), 1),
])
def test_exit_codes(error, code):
    assert error.exit_code == code


def test_input_error_is_value_error():
    assert isinstance(ShapeError("x"), ValueError)


def test_shape_error_context():
    error = ShapeError("mismatch", dimension="channels", expected=3, actual=1)
    assert error.context == {"dimension": "channels", "expected": 3, "actual": 1}
    assert "channels" in str(error)


def test_to_dict():
    """Test serialization of an exception."""
    error = ConfigurationError("bad threshold", config_key="ensemble.threshold", config_value=1.5)
    assert error.to_dict() == {
        "error": "bad threshold",
        "error_type": "ConfigurationError",
        "exit_code": 2,
        "context": {"config_key": "ensemble.threshold", "config_value": "1.5"},
    }


def test_handle_exception_for_package_error():
    record = handle_exception(ManifestError("failed", errors=["row 2: multi-hot label"]), log_error=False)
    assert record["error_type"] == "ManifestError"
    assert record["exit_code"] == 3
    assert record["context"]["errors"] == ["row 2: multi-hot label"]


def test_handle_exception_for_foreign_error():
    record = handle_exception(RuntimeError("boom"), log_error=False, include_traceback=True)
    assert record["exit_code"] == 1
    assert record["error"] == "boom"
    assert "RuntimeError" in record["detail"]


def test_format_error_lines_expands_errors():
    record = handle_exception(
        ManifestError("failed", errors=["row 1: a", "row 3: b"], path="m.csv"), log_error=False
    )
    lines = format_error_lines(record)
    assert lines[0] == "error: failed (ManifestError)"
    assert lines[1:3] == ["  - row 1: a", "  - row 3: b"]
    assert "  path: m.csv" in lines
