"""Post-disaster building damage assessment from pre/post imagery with a VLM."""

__version__ = "0.1.0"
