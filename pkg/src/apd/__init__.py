"""apd: a web-corpus purification pipeline with pluggable classifier
backends, a human review service, and an embedded vector index."""

__version__ = "0.1.0"
