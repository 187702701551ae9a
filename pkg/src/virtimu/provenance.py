from __future__ import annotations

from enum import Enum


class Provenance(str, Enum):
    """Where a motion, trace, or window came from."""

    REAL = "real"
    VIRTUAL_TEXT = "virtual_text"
    VIRTUAL_VIDEO = "virtual_video"
    AUGMENTED = "augmented"

    def __str__(self) -> str:
        return self.value
