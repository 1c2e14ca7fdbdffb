"""Key-isolated vector spaces for federated embedding retrieval."""

__version__ = "0.1.0"
