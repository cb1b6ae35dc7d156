"""HTTP service wrapping the pipeline: exports, review queue, source registry."""

from .app import create_app

__all__ = ["create_app"]
