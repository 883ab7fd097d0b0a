#!/usr/bin/env python3
"""
Artifact tracking for mcnn-lesion commands.

This module provides a tracker for the files and directories a command
writes, so a command that fails part-way removes its partial outputs and
leaves the output directory as it found it.
"""

import logging
import os
import tempfile
from pathlib import Path
from types import TracebackType
from typing import List, Optional, Type, Union

from .exceptions import ArtifactError

# Configure logging
logger = logging.getLogger("mcnn-lesion.artifacts")

PathLike = Union[str, Path]


class ArtifactTracker:
    """
    Tracker for command outputs.

    Use it as a context manager: every file written through the tracker is
    recorded, and if the block raises, the recorded files are deleted along
    with any directories the tracker created that are left empty.

    Attributes:
        _files: Files written, in write order
        _dirs: Directories created by the tracker, in creation order
        _committed: Whether the block completed without error
    """

    def __init__(self) -> None:
        """Initialize an empty tracker."""
        self._files: List[Path] = []
        self._dirs: List[Path] = []
        self._committed = False

    def __enter__(self) -> "ArtifactTracker":
        return self

    def __exit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc: Optional[BaseException],
        tb: Optional[TracebackType],
    ) -> None:
        if exc_type is None:
            self._committed = True
            logger.debug(f"Committed {len(self._files)} artifacts")
        else:
            logger.warning(f"Rolling back {len(self._files)} artifacts after {exc_type.__name__}")
            self.rollback()

    @property
    def files(self) -> List[Path]:
        return list(self._files)

    def make_dir(self, directory: PathLike) -> Path:
        """
        Create a directory (and parents), recording the ones that are new.

        Args:
            directory: Directory to create

        Returns:
            The directory path

        Raises:
            ArtifactError: If the directory cannot be created
        """
        path = Path(directory)
        missing = []
        current = path
        while not current.exists():
            missing.append(current)
            if current.parent == current:
                break
            current = current.parent
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ArtifactError(f"Cannot create directory {path}: {e}", artifact=str(path)) from e
        self._dirs.extend(reversed(missing))
        return path

    def write_bytes(self, path: PathLike, data: bytes) -> Path:
        """
        Atomically write bytes and record the file.

        Args:
            path: Destination file
            data: Content

        Returns:
            The written path

        Raises:
            ArtifactError: If the file cannot be written
        """
        target = Path(path)
        self.make_dir(target.parent)
        tmp_name = None
        try:
            fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.chmod(tmp_name, 0o644)
            os.replace(tmp_name, target)
        except OSError as e:
            if tmp_name is not None and os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise ArtifactError(f"Cannot write {target}: {e}", artifact=str(target)) from e
        if target not in self._files:
            self._files.append(target)
        logger.debug(f"Wrote {target} ({len(data)} bytes)")
        return target

    def write_text(self, path: PathLike, text: str) -> Path:
        """Atomically write UTF-8 text (LF line endings) and record the file."""
        return self.write_bytes(path, text.encode("utf-8"))

    def rollback(self) -> None:
        """Delete recorded files and the empty directories the tracker made."""
        for path in reversed(self._files):
            try:
                path.unlink()
            except FileNotFoundError:
                pass
            except OSError as e:
                logger.error(f"Failed to remove partial artifact {path}: {e}")
        for directory in reversed(self._dirs):
            try:
                directory.rmdir()
            except OSError:
                # not empty or already gone
                pass
        self._files.clear()
        self._dirs.clear()
