"""Threshold-gated paraphrase supervision for multimodal ASR, at desk scale."""
__version__ = "0.1.0"
