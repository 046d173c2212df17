"""
Exception hierarchy shared by the services, the CLI and the HTTP routers.

Every domain error derives from ``ValueError`` as well, so callers that only
care about "bad input" can keep catching the builtin.
"""

from typing import Optional


class CrowdAttrError(Exception):
    """Base class for all toolkit errors."""


class InvalidBoxError(CrowdAttrError, ValueError):
    """A bounding box with negative extent or non-finite coordinates."""


class ShapeMismatchError(CrowdAttrError, ValueError):
    """Predicted and target grids do not line up."""


class DegenerateEmbeddingError(CrowdAttrError, ValueError):
    """An embedding with (near) zero norm was used where a direction is required."""


class NmsConfigurationError(CrowdAttrError, ValueError):
    """An NMS variant was asked to run without the inputs it consumes."""


class ImageMismatchError(CrowdAttrError, ValueError):
    """Records of two inputs could not be joined by image id."""


class RecordFormatError(CrowdAttrError, ValueError):
    """
    A malformed JSON-lines record.

    Attributes:
        path (str): File the record came from.
        line (int | None): 1-based line number, when known.
        field (str | None): Dotted location of the offending field, when known.
    """

    def __init__(
        self,
        message: str,
        path: str = "<input>",
        line: Optional[int] = None,
        field: Optional[str] = None,
    ):
        self.path = path
        self.line = line
        self.field = field
        self.reason = message
        location = path if line is None else f"{path}:{line}"
        if field:
            location = f"{location}: field '{field}'"
        super().__init__(f"{location}: {message}")
