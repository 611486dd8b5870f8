"""Layer activation and gradient exporter for trained torch models."""

__version__ = "0.1.0"

from .export import ExportError, ExportSpec, export_dumps

__all__ = ["ExportError", "ExportSpec", "export_dumps", "__version__"]
