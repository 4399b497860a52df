"""Text classification on word-level deterministically encrypted corpora."""

__version__ = "0.1.0"
