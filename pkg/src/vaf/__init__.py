"""Pull-vs-push scheduling laboratory for elastic PROOF-style analysis clusters."""

__version__ = "0.1.0"
