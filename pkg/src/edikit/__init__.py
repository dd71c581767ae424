"""Secure EDI toolkit: interchange grammar, map-driven translation,
security envelopes, and a store-and-forward VAN with its client."""

__version__ = "0.1.0"
