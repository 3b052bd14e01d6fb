"""Shared exception types."""


class CoordLabError(Exception):
    """Base class for all package errors."""


class LayoutError(CoordLabError):
    """A layout violates one of its structural invariants."""

    def __init__(self, layout_name, violations):
        self.layout_name = layout_name
        self.violations = list(violations)
        detail = "; ".join(self.violations)
        super().__init__(f"invalid layout '{layout_name}': {detail}")


class EpisodeFinishedError(CoordLabError):
    """step() called on a state whose episode already ended."""


class ShapeMismatchError(CoordLabError):
    """Network input does not match the declared shape for a layer."""

    def __init__(self, layer, expected, got):
        self.layer = layer
        self.expected = expected
        self.got = got
        super().__init__(f"shape mismatch at {layer}: expected {expected}, got {got}")


class ReplayMismatchError(CoordLabError):
    """A stored trajectory diverges from its replay through the engine."""

    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message)


class EmptyDatasetError(CoordLabError):
    """An operation requiring data got an empty dataset."""


class DataOverlapError(CoordLabError):
    """Evaluation data shares content with training data."""

    def __init__(self, overlapping_hashes):
        self.overlapping_hashes = sorted(overlapping_hashes)
        super().__init__(
            "held-out data overlaps training data; offending hashes: "
            + ", ".join(self.overlapping_hashes)
        )


class TrainingDivergedError(CoordLabError):
    """A training loss became non-finite; carries the last good checkpoint."""

    def __init__(self, message, checkpoint=None):
        self.checkpoint = checkpoint
        super().__init__(message)


class MissingArtifactError(CoordLabError):
    """A declared input file or directory does not exist."""


class HashMismatchError(CoordLabError):
    """An artifact on disk does not match the hash declared for it."""

    def __init__(self, name, declared, actual):
        self.name = name
        self.declared = declared
        self.actual = actual
        super().__init__(
            f"{name}: declared hash {declared[:12]}.. but artifact hashes to {actual[:12]}.."
        )
