"""Feature extraction bridge: images + published checkpoints -> EMBX files."""

__version__ = "0.1.0"
