"""Export tooling: turn torch classifiers into the engine's interchange
format (graph with conv_features/latent/logits outputs, JSON manifest,
binary parity file with reference logits)."""

from .export import ExportSpec, export_model, read_parity, write_parity

__all__ = ["ExportSpec", "export_model", "read_parity", "write_parity"]

__version__ = "0.1.0"
