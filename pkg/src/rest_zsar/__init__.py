"""Zero-shot action recognition with a modality-aware transformer encoder and
relatedness-constrained prototype composition."""

__version__ = "0.1.0"
