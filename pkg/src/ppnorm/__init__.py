"""Privacy-preserving cohort score normalisation for speaker verification."""

__version__ = "0.1.0"
