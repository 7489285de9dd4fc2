"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: usage errors exit 1, input format
errors exit 2, everything else that raises exits 3.
"""


class KmaskError(Exception):
    """Base class for all pipeline errors."""


class UsageError(KmaskError):
    """Bad flag values or inconsistent options."""


class InputFormatError(KmaskError):
    """A corpus, lexicon, vocabulary, candidate, model, or example file
    violates its documented format."""


class TrainingError(KmaskError):
    """Training cannot proceed (single-class data, divergence, ...)."""
