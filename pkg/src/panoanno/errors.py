"""Exception types shared across the package."""


class PanoAnnoError(Exception):
    """Base class for all package errors."""


class DimsMismatchError(PanoAnnoError):
    """Two grids that must agree (width, height, wrap flag) do not."""


class MaskFormatError(PanoAnnoError):
    """Run-length data violates an invariant or the text form is malformed."""


class GeometryError(PanoAnnoError):
    """A pad / patch / seam plan cannot be built or applied."""


class ProtocolError(PanoAnnoError):
    """A wire message is malformed or violates a protocol invariant."""


class BackendError(PanoAnnoError):
    """A segmentation / tracking backend failed or returned garbage."""


class AgentError(PanoAnnoError):
    """A language-agent reply could not be parsed even after retry."""


class StoreError(PanoAnnoError):
    """Annotation store corruption, lock conflict, or invalid transition."""


class RevisionError(StoreError):
    """A revision record is invalid or cannot be applied."""


class IngestError(PanoAnnoError):
    """Source video material fails an ingestion gate."""


class ConfigError(PanoAnnoError):
    """Configuration file or override is invalid."""
