"""Dependency-trigger annotation and trigger-attended NER."""
__version__ = "0.1.0"
