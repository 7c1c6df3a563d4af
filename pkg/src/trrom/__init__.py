"""Time-relaxation reduced order models built from POD snapshots."""

__version__ = "0.1.0"
