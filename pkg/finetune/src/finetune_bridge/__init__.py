"""Transformer fine-tune bridge; file-level contract with the workbench."""

__version__ = "0.1.0"
