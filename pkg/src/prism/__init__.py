"""Multimodal sequential recommendation with interaction experts and
adaptive fusion, on a self-contained numpy gradient engine."""

__version__ = "0.1.0"
