"""Few-shot knowledge graph completion with cross-task transfer."""

__version__ = "0.1.0"
