"""Editing task catalogue."""

from enum import Enum
from typing import Union

from odisco.errors import UnknownTaskError


class TaskKind(Enum):
    """Editing tasks the conditioning signals are built for."""

    OBJECT_REMOVAL = "object-removal"
    OUTPAINTING = "outpainting"
    STYLE_TRANSFER = "style-transfer"
    SWAP = "swap"
    ADDITION = "addition"
    COLOR_CHANGE = "color-change"
    LIGHTING_TRANSFER = "lighting-transfer"
    MOTION_TRANSFER = "motion-transfer"

    @classmethod
    def parse(cls, value: Union[str, "TaskKind"]) -> "TaskKind":
        """Parse a canonical task name; unknown names raise UnknownTaskError."""
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            known = ", ".join(task.value for task in cls)
            raise UnknownTaskError(
                f"Unknown task '{value}'. Expected one of: {known}", task=value
            ) from None

    @property
    def zeroes_control_signal(self) -> bool:
        """Removal and outpainting feed an all-zero distortion signal."""
        return self in (TaskKind.OBJECT_REMOVAL, TaskKind.OUTPAINTING)

    @property
    def zeroes_video_latent(self) -> bool:
        """Style transfer drops the preserved-region latent entirely."""
        return self is TaskKind.STYLE_TRANSFER
