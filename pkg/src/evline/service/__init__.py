"""HTTP service wrapping the tracker: session-based streaming plus one-shot jobs."""

from .app import create_app

__all__ = ["create_app"]
