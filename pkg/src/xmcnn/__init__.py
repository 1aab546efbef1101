"""Cross-modal convolutional embeddings trained with an ADMM solver."""

__version__ = "0.1.0"
