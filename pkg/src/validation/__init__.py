"""Validation tools for refrec outputs."""
