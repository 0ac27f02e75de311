"""Disentangled sequential autoencoder lab."""

from .runtime import DsvaeRuntime

__all__ = ["DsvaeRuntime"]
