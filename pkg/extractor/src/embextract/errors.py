class ExtractError(Exception):
    """Base class for extractor failures."""


class ManifestError(ExtractError):
    """The manifest file is malformed or violates its invariants."""


class RegressorError(ExtractError):
    """The body regressor could not produce keypoints for an image."""
