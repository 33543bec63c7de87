"""Self-improving data generation loop on a planar manipulation suite."""

__version__ = "0.1.0"
